#include "gnnmapf/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gnnmapf/error.hpp"

namespace gnnmapf {

void validate_arch(const PolicyArch& arch) {
  if (arch.filter_taps < 1) throw ConfigError("filter taps K must be >= 1");
  if (arch.gnn_layers < 1) throw ConfigError("GNN layer count must be >= 1");
  if (arch.fov_radius < 1) throw ConfigError("field-of-view radius must be >= 1");
  for (int c : arch.channels)
    if (c < 1) throw ConfigError("channel counts must be positive");
  int side = arch.observation_side();
  for (int b = 0; b < PolicyArch::kConvBlocks; ++b)
    if (PolicyArch::pools_after(b)) side /= 2;
  if (side != 1) {
    throw ConfigError("field-of-view radius " + std::to_string(arch.fov_radius) +
                      " does not reduce to 1x1 after three 2x2 poolings");
  }
}

std::string PolicyParams::conv_weight(int b) { return "cnn." + std::to_string(b) + ".conv.weight"; }
std::string PolicyParams::conv_bias(int b) { return "cnn." + std::to_string(b) + ".conv.bias"; }
std::string PolicyParams::bn_scale(int b) { return "cnn." + std::to_string(b) + ".bn.scale"; }
std::string PolicyParams::bn_shift(int b) { return "cnn." + std::to_string(b) + ".bn.shift"; }
std::string PolicyParams::bn_mean(int b) { return "cnn." + std::to_string(b) + ".bn.running_mean"; }
std::string PolicyParams::bn_var(int b) { return "cnn." + std::to_string(b) + ".bn.running_var"; }
std::string PolicyParams::tap(int layer, int k) {
  return "gnn." + std::to_string(layer) + ".tap" + std::to_string(k);
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform_real(rng, -bound, bound);
  return t;
}

}  // namespace

PolicyParams::PolicyParams(const PolicyArch& arch, std::uint64_t seed) : arch_(arch) {
  validate_arch(arch);
  Rng rng(seed);
  std::size_t in = LocalObservation::kChannels;
  for (int b = 0; b < PolicyArch::kConvBlocks; ++b) {
    const auto out = static_cast<std::size_t>(arch.channels[b]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * 9));
    store_.add(conv_weight(b), uniform_tensor({out, in, 3, 3}, bound, rng));
    store_.add(conv_bias(b), uniform_tensor({out}, bound, rng));
    store_.add(bn_scale(b), Tensor({out}, 1.0));
    store_.add(bn_shift(b), Tensor({out}, 0.0));
    store_.add_buffer(bn_mean(b), Tensor({out}, 0.0));
    store_.add_buffer(bn_var(b), Tensor({out}, 1.0));
    in = out;
  }
  const auto f = static_cast<std::size_t>(arch.features());
  const double tap_bound = 1.0 / std::sqrt(static_cast<double>(f));
  for (int l = 0; l < arch.gnn_layers; ++l)
    for (int k = 0; k < arch.filter_taps; ++k)
      store_.add(tap(l, k), uniform_tensor({f, f}, tap_bound, rng));
  store_.add(kMlpWeight, uniform_tensor({static_cast<std::size_t>(kNumActions), f}, tap_bound, rng));
  store_.add(kMlpBias, uniform_tensor({static_cast<std::size_t>(kNumActions)}, tap_bound, rng));
}

PolicyParams::PolicyParams(const PolicyArch& arch, ParamStore store)
    : arch_(arch), store_(std::move(store)) {
  validate_arch(arch);
  // Shape check against a freshly initialised store.
  const PolicyParams reference(arch, 0);
  for (const auto& [name, p] : reference.store().parameters()) {
    if (!store_.contains(name)) throw ShapeMismatch("weights are missing parameter '" + name + "'");
    require_shape(store_.value(name), p.value.shape(), name.c_str());
  }
  if (store_.parameters().size() != reference.store().parameters().size())
    throw ShapeMismatch("weights contain parameters this architecture does not use");
  for (const auto& [name, t] : reference.store().buffers()) {
    if (!store_.buffers().contains(name))
      throw ShapeMismatch("weights are missing buffer '" + name + "'");
    require_shape(store_.buffer(name), t.shape(), name.c_str());
  }
}

Tensor observation_tensor(const LocalObservation& obs) {
  const auto side = static_cast<std::size_t>(obs.side());
  Tensor t({static_cast<std::size_t>(LocalObservation::kChannels), side, side});
  for (std::size_t i = 0; i < obs.values.size(); ++i) t[i] = obs.values[i];
  return t;
}

Tensor gso_tensor(const Gso& gso) {
  const auto n = static_cast<std::size_t>(gso.n);
  return Tensor({n, n}, gso.values);
}

void append_team(PolicyBatch& batch, std::span<const LocalObservation> observations,
                 const Gso& gso) {
  append_team(batch, observations, gso_tensor(gso));
}

void append_team(PolicyBatch& batch, std::span<const LocalObservation> observations,
                 Tensor shift) {
  if (observations.empty()) throw ShapeMismatch("append_team: empty team");
  require_shape(shift, {observations.size(), observations.size()}, "append_team shift operator");
  const auto side = static_cast<std::size_t>(observations[0].side());
  const std::size_t per_robot = LocalObservation::kChannels * side * side;
  const std::size_t before = batch.observations.empty() ? 0 : batch.observations.dim(0);
  if (before > 0 && batch.observations.dim(2) != side)
    throw ShapeMismatch("append_team: observation size differs from the batch");

  std::vector<double>& storage = batch.observations.storage();
  storage.reserve(storage.size() + observations.size() * per_robot);
  for (const LocalObservation& obs : observations) {
    if (obs.values.size() != per_robot) throw ShapeMismatch("append_team: ragged observations");
    storage.insert(storage.end(), obs.values.begin(), obs.values.end());
  }
  batch.observations.reshape({before + observations.size(),
                              static_cast<std::size_t>(LocalObservation::kChannels), side, side});
  batch.team_sizes.push_back(observations.size());
  batch.shifts.push_back(std::move(shift));
}

PolicyBatch make_batch(std::span<const LocalObservation> observations, const Gso& gso) {
  PolicyBatch batch;
  append_team(batch, observations, gso);
  return batch;
}

namespace {

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  const std::size_t cols = t.dim(1);
  return Tensor({count, cols}, std::vector<double>(t.data() + begin * cols,
                                                   t.data() + (begin + count) * cols));
}

void write_rows(Tensor& dst, std::size_t begin, const Tensor& rows) {
  std::copy(rows.values().begin(), rows.values().end(), dst.data() + begin * dst.dim(1));
}

std::vector<Tensor> layer_taps(const PolicyParams& params, int layer) {
  std::vector<Tensor> taps;
  for (int k = 0; k < params.arch().filter_taps; ++k)
    taps.push_back(params.store().value(PolicyParams::tap(layer, k)));
  return taps;
}

void check_batch(const PolicyParams& params, const PolicyBatch& batch) {
  const auto side = static_cast<std::size_t>(params.arch().observation_side());
  if (batch.observations.rank() != 4 || batch.observations.dim(1) != 3 ||
      batch.observations.dim(2) != side || batch.observations.dim(3) != side) {
    throw ShapeMismatch("policy input " + shape_string(batch.observations.shape()) +
                        " does not match the " + std::to_string(side) + "x" +
                        std::to_string(side) + " field of view");
  }
  std::size_t total = 0;
  for (std::size_t t = 0; t < batch.team_sizes.size(); ++t) {
    total += batch.team_sizes[t];
    require_shape(batch.shifts.at(t), {batch.team_sizes[t], batch.team_sizes[t]},
                  "policy shift operator");
  }
  if (total != batch.observations.dim(0)) throw ShapeMismatch("team sizes do not cover the batch");
}

}  // namespace

ForwardPass policy_forward_batch(const PolicyParams& params, const PolicyBatch& batch,
                                 nn::Mode mode) {
  check_batch(params, batch);
  const ParamStore& store = params.store();
  ForwardPass pass;
  pass.mode = mode;

  Tensor h = batch.observations;
  for (int b = 0; b < PolicyArch::kConvBlocks; ++b) {
    h = nn::conv2d(h, store.value(PolicyParams::conv_weight(b)),
                   store.value(PolicyParams::conv_bias(b)), &pass.conv[b]);
    pass.bn_out[b] = nn::batchnorm2d(h, store.value(PolicyParams::bn_scale(b)),
                                     store.value(PolicyParams::bn_shift(b)),
                                     store.buffer(PolicyParams::bn_mean(b)),
                                     store.buffer(PolicyParams::bn_var(b)), mode, &pass.bn[b]);
    h = nn::relu(pass.bn_out[b]);
    if (PolicyArch::pools_after(b)) h = nn::maxpool2d(h, &pass.pool[b]);
  }
  const std::size_t robots = h.dim(0);
  const auto f = static_cast<std::size_t>(params.arch().features());
  pass.features = h.reshape({robots, f});

  Tensor signal = pass.features;
  for (int l = 0; l < params.arch().gnn_layers; ++l) {
    const std::vector<Tensor> taps = layer_taps(params, l);
    Tensor pre({robots, f});
    pass.graph.emplace_back(batch.team_sizes.size());
    std::size_t row = 0;
    for (std::size_t t = 0; t < batch.team_sizes.size(); ++t) {
      const std::size_t n = batch.team_sizes[t];
      write_rows(pre, row,
                 nn::graph_filter(slice_rows(signal, row, n), batch.shifts[t], taps,
                                  &pass.graph[l][t]));
      row += n;
    }
    signal = nn::relu(pre);
    pass.graph_pre.push_back(std::move(pre));
    pass.graph_out.push_back(signal);
  }
  pass.logits = nn::linear(signal, store.value(PolicyParams::kMlpWeight),
                           store.value(PolicyParams::kMlpBias));
  return pass;
}

void policy_backward(PolicyParams& params, const PolicyBatch& batch, const ForwardPass& pass,
                     const Tensor& d_logits) {
  ParamStore& store = params.store();
  const int layers = params.arch().gnn_layers;

  nn::LinearGrads mlp =
      nn::linear_backward(d_logits, pass.graph_out.back(), store.value(PolicyParams::kMlpWeight));
  store.accumulate(PolicyParams::kMlpWeight, mlp.weight);
  store.accumulate(PolicyParams::kMlpBias, mlp.bias);

  Tensor grad = std::move(mlp.input);
  for (int l = layers - 1; l >= 0; --l) {
    const Tensor d_pre = nn::relu_backward(grad, pass.graph_pre[l]);
    const std::vector<Tensor> taps = layer_taps(params, l);
    Tensor d_in(d_pre.shape());
    std::vector<Tensor> d_taps;
    std::size_t row = 0;
    for (std::size_t t = 0; t < batch.team_sizes.size(); ++t) {
      const std::size_t n = batch.team_sizes[t];
      nn::GraphFilterGrads g =
          nn::graph_filter_backward(slice_rows(d_pre, row, n), batch.shifts[t], taps, pass.graph[l][t]);
      write_rows(d_in, row, g.input);
      if (d_taps.empty()) {
        d_taps = std::move(g.taps);
      } else {
        for (std::size_t k = 0; k < d_taps.size(); ++k)
          for (std::size_t i = 0; i < d_taps[k].size(); ++i) d_taps[k][i] += g.taps[k][i];
      }
      row += n;
    }
    for (int k = 0; k < params.arch().filter_taps; ++k)
      store.accumulate(PolicyParams::tap(l, k), d_taps[k]);
    grad = std::move(d_in);
  }

  const Tensor& last_bn = pass.bn_out[PolicyArch::kConvBlocks - 1];
  grad.reshape(last_bn.shape());
  for (int b = PolicyArch::kConvBlocks - 1; b >= 0; --b) {
    if (PolicyArch::pools_after(b)) grad = nn::maxpool2d_backward(grad, pass.pool[b]);
    grad = nn::relu_backward(grad, pass.bn_out[b]);
    nn::BatchNormGrads bn =
        nn::batchnorm2d_backward(grad, store.value(PolicyParams::bn_scale(b)), pass.bn[b]);
    store.accumulate(PolicyParams::bn_scale(b), bn.scale);
    store.accumulate(PolicyParams::bn_shift(b), bn.shift);
    nn::Conv2dGrads conv =
        nn::conv2d_backward(bn.input, store.value(PolicyParams::conv_weight(b)), pass.conv[b], b > 0);
    store.accumulate(PolicyParams::conv_weight(b), conv.weight);
    store.accumulate(PolicyParams::conv_bias(b), conv.bias);
    grad = std::move(conv.input);
  }
}

void commit_batchnorm_stats(PolicyParams& params, const ForwardPass& pass) {
  for (int b = 0; b < PolicyArch::kConvBlocks; ++b) {
    nn::update_running_stats(params.store().buffer(PolicyParams::bn_mean(b)),
                             params.store().buffer(PolicyParams::bn_var(b)), pass.bn[b]);
  }
}

std::uint64_t ForwardPass::regime() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  auto mix_mask = [&](const Tensor& t) {
    for (double v : t.values()) mix(v > 0.0 ? 1 : 0);
  };
  for (int b = 0; b < PolicyArch::kConvBlocks; ++b) {
    mix_mask(bn_out[b]);
    for (std::uint32_t a : pool[b].argmax) mix(a);
  }
  for (const Tensor& t : graph_pre) mix_mask(t);
  return h;
}

std::vector<ActionDistribution> distributions_from_logits(const Tensor& logits) {
  const Tensor probs = nn::softmax(logits);
  std::vector<ActionDistribution> out(logits.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r)
    for (int a = 0; a < kNumActions; ++a) out[r].probs[a] = probs.at(r, a);
  return out;
}

std::vector<double> encode_observation(const PolicyParams& params, const LocalObservation& obs) {
  PolicyBatch batch;
  append_team(batch, std::span(&obs, 1), Tensor({1, 1}));
  const ForwardPass pass = policy_forward_batch(params, batch, nn::Mode::Eval);
  return {pass.features.values().begin(), pass.features.values().end()};
}

std::vector<ActionDistribution> policy_forward(const PolicyParams& params,
                                               std::span<const LocalObservation> observations,
                                               const Gso& gso) {
  return distributions_from_logits(
      policy_forward_batch(params, make_batch(observations, gso), nn::Mode::Eval).logits);
}

std::vector<ActionDistribution> policy_forward(const PolicyParams& params,
                                               std::span<const LocalObservation> observations,
                                               const Tensor& shift) {
  PolicyBatch batch;
  append_team(batch, observations, shift);
  return distributions_from_logits(policy_forward_batch(params, batch, nn::Mode::Eval).logits);
}

std::vector<ActionDistribution> policy_forward_decentralized(
    const PolicyParams& params, std::span<const LocalObservation> observations,
    const Tensor& shift) {
  const std::size_t n = observations.size();
  require_shape(shift, {n, n}, "decentralized shift operator");
  const auto f = static_cast<std::size_t>(params.arch().features());
  const ParamStore& store = params.store();

  // Each robot encodes its own observation.
  std::vector<std::vector<double>> state(n);
  for (std::size_t i = 0; i < n; ++i) state[i] = encode_observation(params, observations[i]);

  for (int l = 0; l < params.arch().gnn_layers; ++l) {
    std::vector<std::vector<double>> out(n, std::vector<double>(f, 0.0));
    std::vector<std::vector<double>> message = state;  // Z_0 held locally
    for (int k = 0; k < params.arch().filter_taps; ++k) {
      if (k > 0) {
        // One synchronous exchange round: robot i hears only from j with S_ij != 0.
        std::vector<std::vector<double>> received(n, std::vector<double>(f, 0.0));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double s = shift.at(i, j);
            if (s == 0.0) continue;
            for (std::size_t c = 0; c < f; ++c) received[i][c] += s * message[j][c];
          }
        message = std::move(received);
      }
      const Tensor& a = store.value(PolicyParams::tap(l, k));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < f; ++r) {
          const double m = message[i][r];
          for (std::size_t c = 0; c < f; ++c) out[i][c] += m * a.at(r, c);
        }
    }
    for (auto& row : out)
      for (double& v : row) v = v > 0.0 ? v : 0.0;
    state = std::move(out);
  }

  Tensor hidden({n, f});
  for (std::size_t i = 0; i < n; ++i) std::copy(state[i].begin(), state[i].end(), hidden.data() + i * f);
  return distributions_from_logits(
      nn::linear(hidden, store.value(PolicyParams::kMlpWeight), store.value(PolicyParams::kMlpBias)));
}

Action select_action(const ActionDistribution& dist, SelectMode mode, Rng& rng) {
  if (mode == SelectMode::Greedy) {
    int best = 0;
    for (int a = 1; a < kNumActions; ++a)
      if (dist.probs[a] > dist.probs[best]) best = a;
    return static_cast<Action>(best);
  }
  const double u = uniform_real(rng);
  double cumulative = 0.0;
  int last_positive = 0;
  for (int a = 0; a < kNumActions; ++a) {
    if (dist.probs[a] <= 0.0) continue;
    cumulative += dist.probs[a];
    last_positive = a;
    if (u < cumulative) return static_cast<Action>(a);
  }
  return static_cast<Action>(last_positive);
}

}  // namespace gnnmapf
