#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "gnnmapf/grid.hpp"
#include "gnnmapf/layers.hpp"
#include "gnnmapf/param_store.hpp"
#include "gnnmapf/rng.hpp"

namespace gnnmapf {

// Fixed CNN -> graph filter -> MLP pipeline. The CNN is three repetitions of
// [conv-bn-relu-maxpool, conv-bn-relu]; its last block has `features`
// channels at 1x1, which feeds the graph layer(s).
struct PolicyArch {
  static constexpr int kConvBlocks = 6;

  int filter_taps = 3;  // K; K = 1 means no communication
  int gnn_layers = 1;   // L
  int fov_radius = 4;
  std::array<int, kConvBlocks> channels{32, 32, 64, 64, 128, 128};

  int features() const noexcept { return channels.back(); }
  int observation_side() const noexcept { return 2 * fov_radius + 1; }
  static constexpr bool pools_after(int block) noexcept { return block % 2 == 0; }

  friend bool operator==(const PolicyArch&, const PolicyArch&) = default;
};

// Throws ConfigError when the architecture cannot be built, e.g. when the
// three poolings do not reduce the window to 1x1.
void validate_arch(const PolicyArch& arch);

// All learnable weights plus batch-norm running statistics.
class PolicyParams {
 public:
  PolicyParams() = default;
  // Uniform +/- 1/sqrt(fan_in) weights, unit batch-norm scale, zero shift.
  PolicyParams(const PolicyArch& arch, std::uint64_t seed);
  PolicyParams(const PolicyArch& arch, ParamStore store);

  const PolicyArch& arch() const noexcept { return arch_; }
  ParamStore& store() noexcept { return store_; }
  const ParamStore& store() const noexcept { return store_; }

  static std::string conv_weight(int block);
  static std::string conv_bias(int block);
  static std::string bn_scale(int block);
  static std::string bn_shift(int block);
  static std::string bn_mean(int block);
  static std::string bn_var(int block);
  static std::string tap(int layer, int k);
  static constexpr const char* kMlpWeight = "mlp.weight";
  static constexpr const char* kMlpBias = "mlp.bias";

 private:
  PolicyArch arch_;
  ParamStore store_;
};

struct ActionDistribution {
  std::array<double, kNumActions> probs{};
};

// Observation tensors for several teams, stacked robot-major.
struct PolicyBatch {
  Tensor observations;                  // [R, 3, side, side]
  std::vector<std::size_t> team_sizes;  // sums to R
  std::vector<Tensor> shifts;           // one [n, n] operator per team
};

// Dense [3, side, side] copy of an observation.
Tensor observation_tensor(const LocalObservation& obs);
Tensor gso_tensor(const Gso& gso);

// Appends one team snapshot to a batch.
void append_team(PolicyBatch& batch, std::span<const LocalObservation> observations,
                 const Gso& gso);
void append_team(PolicyBatch& batch, std::span<const LocalObservation> observations,
                 Tensor shift);
PolicyBatch make_batch(std::span<const LocalObservation> observations, const Gso& gso);

// Activations kept for the backward pass.
struct ForwardPass {
  nn::Mode mode = nn::Mode::Eval;
  std::array<nn::Conv2dCache, PolicyArch::kConvBlocks> conv;
  std::array<nn::BatchNormCache, PolicyArch::kConvBlocks> bn;
  std::array<Tensor, PolicyArch::kConvBlocks> bn_out;  // pre-ReLU
  std::array<nn::MaxPoolCache, PolicyArch::kConvBlocks> pool;
  Tensor features;                                      // [R, F], CNN output
  std::vector<std::vector<nn::GraphFilterCache>> graph;  // [layer][team]
  std::vector<Tensor> graph_pre;                        // [layer] pre-ReLU, [R, G]
  std::vector<Tensor> graph_out;                        // [layer] post-ReLU
  Tensor logits;                                        // [R, 5]

  // Hash of every ReLU mask and pooling argmax; constant on a linear piece.
  std::uint64_t regime() const;
};

ForwardPass policy_forward_batch(const PolicyParams& params, const PolicyBatch& batch,
                                 nn::Mode mode);

// Adds d loss / d params into params.store() gradients given d loss / d logits.
void policy_backward(PolicyParams& params, const PolicyBatch& batch, const ForwardPass& pass,
                     const Tensor& d_logits);

// Applies the train-mode batch statistics of `pass` to the running statistics.
void commit_batchnorm_stats(PolicyParams& params, const ForwardPass& pass);

// CNN feature vector (length F) of one observation, eval mode.
std::vector<double> encode_observation(const PolicyParams& params, const LocalObservation& obs);

// Action distribution per robot, eval mode.
std::vector<ActionDistribution> policy_forward(const PolicyParams& params,
                                               std::span<const LocalObservation> observations,
                                               const Gso& gso);
std::vector<ActionDistribution> policy_forward(const PolicyParams& params,
                                               std::span<const LocalObservation> observations,
                                               const Tensor& shift);

// Same output computed the way a robot team would: every robot runs its own
// copy of the network and only exchanges graph signals with its neighbours
// (K - 1 exchange rounds per graph layer).
std::vector<ActionDistribution> policy_forward_decentralized(
    const PolicyParams& params, std::span<const LocalObservation> observations,
    const Tensor& shift);

std::vector<ActionDistribution> distributions_from_logits(const Tensor& logits);

enum class SelectMode { Greedy, Sample };

// Greedy takes the arg max with the lowest index winning ties; sample draws
// from the distribution using `rng`.
Action select_action(const ActionDistribution& dist, SelectMode mode, Rng& rng);

}  // namespace gnnmapf
