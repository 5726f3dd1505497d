#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnnmapf/datastore.hpp"
#include "gnnmapf/executor.hpp"
#include "gnnmapf/policy.hpp"

namespace gnnmapf {

struct TrainConfig {
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  int epochs = 150;
  int batch_size = 64;  // timestep samples per minibatch
  double l2 = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int oe_interval = 4;  // C; 0 disables aggregation
  int oe_cases = 500;   // n_OE
  double expert_timeout_s = 300.0;
  double comm_radius = 5.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

// Throws ConfigError on inconsistent values.
void validate_train_config(const TrainConfig& config);

// gamma_min + (gamma_max - gamma_min) (1 + cos(pi e / epochs)) / 2.
double cosine_lr(int epoch, const TrainConfig& config);

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One Adam update from the gradients held in `store`, with the L2 term
// l2 * w added to each gradient first. Throws NonFiniteGradient, leaving
// parameters and state untouched, when any gradient is NaN or infinite.
void adam_step(ParamStore& store, AdamState& state, double lr, const TrainConfig& config);

nlohmann::json adam_to_json(const AdamState& state);
AdamState adam_from_json(const nlohmann::json& j);

// A sample with observations and shift operator rebuilt from positions.
struct TrainingSample {
  std::string case_id;
  std::vector<LocalObservation> observations;
  Tensor shift;
  std::vector<int> labels;
};

enum class Split { Train, Valid, Test };
const char* split_name(Split split);

struct Dataset {
  Split split = Split::Train;
  std::vector<SampleRecord> records;
  std::vector<TrainingSample> samples;  // aligned with records

  std::size_t size() const noexcept { return samples.size(); }
  void append(std::vector<SampleRecord> more, const MapPool& maps, int fov_radius,
              double comm_radius);
};

TrainingSample materialize(const SampleRecord& record, const GridMap& map, int fov_radius,
                           double comm_radius);
Dataset make_dataset(Split split, std::vector<SampleRecord> records, const MapPool& maps,
                     int fov_radius, double comm_radius);

// Case-level split after a seeded shuffle. Valid and test get
// floor(ratio * n) cases each; the remainder goes to train. Each split keeps
// the input order of its cases.
struct CaseSplit {
  std::vector<CaseRecord> train;
  std::vector<CaseRecord> valid;
  std::vector<CaseRecord> test;
};
CaseSplit split_dataset(std::span<const CaseRecord> cases, std::array<double, 3> ratios,
                        std::uint64_t seed);

struct EpochStats {
  double loss = 0.0;      // mean cross-entropy per robot decision
  double accuracy = 0.0;  // fraction of robot decisions whose arg max matches
  std::size_t samples = 0;
  std::size_t decisions = 0;
};

// One pass over the shuffled train split with Adam at cosine_lr(epoch).
EpochStats train_epoch(PolicyParams& params, AdamState& adam, const Dataset& train,
                       const TrainConfig& config, int epoch);

// Eval-mode loss and accuracy; no parameter changes.
EpochStats evaluate_dataset(const PolicyParams& params, const Dataset& data,
                            std::size_t batch_size = 64);

using ExpertFn = std::function<Plan(const GridMap&, const Case&, double timeout_s)>;
Plan default_expert(const GridMap& map, const Case& c, double timeout_s);

struct AggregationReport {
  std::size_t selected = 0;
  std::size_t failures = 0;
  std::size_t repaired = 0;
  std::size_t skipped = 0;
  std::size_t samples_added = 0;
  std::vector<std::string> log;
};

// Rolls `controller` out on n_OE seeded-random train cases; every failure is
// re-solved by the expert from the robot positions at timeout and the expert
// suffix is appended to `train`. Only `train` changes.
AggregationReport aggregate_online_expert(const Controller& controller, Dataset& train,
                                          std::span<const CaseRecord> train_cases,
                                          const MapPool& maps, int fov_radius,
                                          const TrainConfig& config, int epoch,
                                          const ExpertFn& expert = default_expert);

// True after 1-based epoch e when e is a multiple of C.
bool aggregation_due(int epoch, const TrainConfig& config);

struct LogRow {
  int epoch = 0;  // 0-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double valid_loss = 0.0;
  double valid_acc = 0.0;
  std::size_t train_size = 0;  // train samples after this epoch's aggregation
};

std::string log_header();
std::string log_line(const LogRow& row);

struct TrainHooks {
  std::function<void(const LogRow&, const PolicyParams&, const AdamState&)> on_epoch;
  std::function<void(int epoch, const AggregationReport&)> on_aggregate;
  // Stops training early when it returns true after an epoch.
  std::function<bool(const LogRow&)> stop;
};

// Full loop: train_epoch, validation, online expert every C epochs.
std::vector<LogRow> train(PolicyParams& params, AdamState& adam, Dataset& train_set,
                          const Dataset& valid_set, std::span<const CaseRecord> train_cases,
                          const MapPool& maps, const TrainConfig& config,
                          const TrainHooks& hooks = {}, int first_epoch = 0);

}  // namespace gnnmapf
