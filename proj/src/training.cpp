#include "gnnmapf/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <optional>

#include "gnnmapf/error.hpp"
#include "gnnmapf/parallel.hpp"
#include "gnnmapf/rng.hpp"

namespace gnnmapf {

namespace {
// Stream tags for derive_seed.
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kSelectStream = 0x4f45534cULL;
constexpr std::uint64_t kRolloutStream = 0x4f45524fULL;
constexpr std::uint64_t kSplitStream = 0x53504c54ULL;
}  // namespace

void validate_train_config(const TrainConfig& c) {
  if (!(c.lr_min >= 0.0 && c.lr_min < c.lr_max)) throw ConfigError("need 0 <= lr_min < lr_max");
  if (c.epochs < 1) throw ConfigError("epochs must be positive");
  if (c.batch_size < 1) throw ConfigError("batch size must be positive");
  if (c.l2 < 0.0) throw ConfigError("l2 must be non-negative");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(c.adam_eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (c.oe_interval < 0 || c.oe_cases < 0) throw ConfigError("online-expert knobs must be >= 0");
  if (!(c.expert_timeout_s > 0.0)) throw ConfigError("expert timeout must be positive");
  if (!(c.comm_radius >= 0.0)) throw ConfigError("communication radius must be >= 0");
}

double cosine_lr(int epoch, const TrainConfig& c) {
  const double progress = static_cast<double>(epoch) / static_cast<double>(c.epochs);
  return c.lr_min + 0.5 * (c.lr_max - c.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_step(ParamStore& store, AdamState& state, double lr, const TrainConfig& c) {
  for (const auto& [name, p] : store.parameters())
    if (!p.grad.all_finite()) throw NonFiniteGradient("gradient of '" + name + "' is not finite");

  ++state.step;
  const double correct1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correct2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : store.parameters()) {
    Tensor& m = state.m.try_emplace(name, p.value.shape()).first->second;
    Tensor& v = state.v.try_emplace(name, p.value.shape()).first->second;
    if (m.shape() != p.value.shape() || v.shape() != p.value.shape())
      throw ShapeMismatch("optimizer moments for '" + name + "' have the wrong shape");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] + c.l2 * p.value[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + c.adam_eps);
    }
  }
}

nlohmann::json adam_to_json(const AdamState& s) {
  return {{"step", s.step}, {"m", tensors_to_json(s.m)}, {"v", tensors_to_json(s.v)}};
}

AdamState adam_from_json(const nlohmann::json& j) {
  AdamState s;
  s.step = j.at("step").get<std::int64_t>();
  s.m = tensors_from_json(j.at("m"));
  s.v = tensors_from_json(j.at("v"));
  return s;
}

const char* split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

TrainingSample materialize(const SampleRecord& r, const GridMap& map, int fov_radius,
                           double comm_radius) {
  TrainingSample s;
  s.case_id = r.case_id;
  s.observations.reserve(r.positions.size());
  for (std::size_t i = 0; i < r.positions.size(); ++i)
    s.observations.push_back(build_local_observation(map, r.positions, r.goals, i, fov_radius));
  s.shift = gso_tensor(build_gso(r.positions, comm_radius));
  for (Action a : r.labels) s.labels.push_back(static_cast<int>(a));
  return s;
}

void Dataset::append(std::vector<SampleRecord> more, const MapPool& maps, int fov_radius,
                     double comm_radius) {
  samples.reserve(samples.size() + more.size());
  for (const SampleRecord& r : more)
    samples.push_back(materialize(r, maps.at(r.map_id), fov_radius, comm_radius));
  records.insert(records.end(), std::make_move_iterator(more.begin()),
                 std::make_move_iterator(more.end()));
}

Dataset make_dataset(Split split, std::vector<SampleRecord> records, const MapPool& maps,
                     int fov_radius, double comm_radius) {
  Dataset d;
  d.split = split;
  d.append(std::move(records), maps, fov_radius, comm_radius);
  return d;
}

CaseSplit split_dataset(std::span<const CaseRecord> cases, std::array<double, 3> ratios,
                        std::uint64_t seed) {
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("split ratios must lie in [0, 1]");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");
  const std::size_t n = cases.size();
  auto count = [n](double r) {
    return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_valid = count(ratios[1]);
  const std::size_t n_test = count(ratios[2]);
  const std::size_t n_train = n - n_valid - n_test;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, kSplitStream));
  shuffle(std::span(order), rng);

  std::vector<int> which(n);
  for (std::size_t k = 0; k < n; ++k) which[order[k]] = k < n_train ? 0 : (k < n_train + n_valid ? 1 : 2);
  CaseSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = which[i] == 0 ? out.train : (which[i] == 1 ? out.valid : out.test);
    dst.push_back(cases[i]);
  }
  return out;
}

namespace {

struct Chunk {
  PolicyBatch batch;
  std::vector<int> labels;
};

Chunk gather(const Dataset& data, std::span<const std::size_t> indices) {
  Chunk c;
  for (std::size_t idx : indices) {
    const TrainingSample& s = data.samples[idx];
    append_team(c.batch, s.observations, s.shift);
    c.labels.insert(c.labels.end(), s.labels.begin(), s.labels.end());
  }
  return c;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  std::size_t correct = 0;
  const std::size_t classes = logits.dim(1);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k)
      if (logits.at(r, k) > logits.at(r, best)) best = k;
    if (static_cast<int>(best) == labels[r]) ++correct;
  }
  return correct;
}

void finish(EpochStats& s, double loss_sum, std::size_t correct) {
  if (s.decisions == 0) return;
  s.loss = loss_sum / static_cast<double>(s.decisions);
  s.accuracy = static_cast<double>(correct) / static_cast<double>(s.decisions);
}

}  // namespace

EpochStats train_epoch(PolicyParams& params, AdamState& adam, const Dataset& train,
                       const TrainConfig& config, int epoch) {
  validate_train_config(config);
  if (train.size() == 0) throw EmptyInput("train split is empty");
  const double lr = cosine_lr(epoch, config);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
  shuffle(std::span(order), rng);

  EpochStats stats;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (std::size_t begin = 0; begin < order.size(); begin += bs) {
    const std::size_t end = std::min(order.size(), begin + bs);
    const Chunk chunk = gather(train, std::span(order).subspan(begin, end - begin));
    const ForwardPass pass = policy_forward_batch(params, chunk.batch, nn::Mode::Train);
    const nn::LossResult loss = nn::cross_entropy_loss(pass.logits, chunk.labels);
    params.store().zero_grad();
    policy_backward(params, chunk.batch, pass, loss.grad);
    adam_step(params.store(), adam, lr, config);
    commit_batchnorm_stats(params, pass);

    stats.samples += end - begin;
    stats.decisions += chunk.labels.size();
    loss_sum += loss.loss * static_cast<double>(chunk.labels.size());
    correct += count_correct(pass.logits, chunk.labels);
  }
  finish(stats, loss_sum, correct);
  return stats;
}

EpochStats evaluate_dataset(const PolicyParams& params, const Dataset& data,
                            std::size_t batch_size) {
  EpochStats stats;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    const Chunk chunk = gather(data, std::span(order).subspan(begin, end - begin));
    const ForwardPass pass = policy_forward_batch(params, chunk.batch, nn::Mode::Eval);
    const nn::LossResult loss = nn::cross_entropy_loss(pass.logits, chunk.labels);
    stats.samples += end - begin;
    stats.decisions += chunk.labels.size();
    loss_sum += loss.loss * static_cast<double>(chunk.labels.size());
    correct += count_correct(pass.logits, chunk.labels);
  }
  finish(stats, loss_sum, correct);
  return stats;
}

Plan default_expert(const GridMap& map, const Case& c, double timeout_s) {
  return cbs_solve(map, c, timeout_s);
}

bool aggregation_due(int epoch, const TrainConfig& config) {
  return config.oe_interval > 0 && config.oe_cases > 0 && (epoch + 1) % config.oe_interval == 0;
}

AggregationReport aggregate_online_expert(const Controller& controller, Dataset& train,
                                          std::span<const CaseRecord> train_cases,
                                          const MapPool& maps, int fov_radius,
                                          const TrainConfig& config, int epoch,
                                          const ExpertFn& expert) {
  AggregationReport report;
  std::vector<std::size_t> pick(train_cases.size());
  std::iota(pick.begin(), pick.end(), 0);
  Rng rng(derive_seed(config.seed, kSelectStream, static_cast<std::uint64_t>(epoch)));
  shuffle(std::span(pick), rng);
  pick.resize(std::min<std::size_t>(pick.size(), static_cast<std::size_t>(config.oe_cases)));
  std::sort(pick.begin(), pick.end());
  report.selected = pick.size();

  struct Outcome {
    bool failed = false;
    std::optional<std::vector<SampleRecord>> repair;
    std::string note;
  };
  std::vector<Outcome> outcomes(pick.size());
  parallel_for(pick.size(), config.workers, [&](std::size_t k) {
    const CaseRecord& rec = train_cases[pick[k]];
    if (!rec.plan) throw std::invalid_argument("train case '" + rec.id + "' has no expert plan");
    const GridMap& map = maps.at(rec.problem.map_id);
    const std::uint64_t seed =
        derive_seed(derive_seed(config.seed, kRolloutStream, static_cast<std::uint64_t>(epoch)),
                    pick[k]);
    const Trajectory traj = rollout(controller, map, rec.problem, *rec.plan, seed, rec.id);
    Outcome& out = outcomes[k];
    if (traj.success()) return;
    out.failed = true;
    Case repair{rec.problem.map_id, traj.positions.back(), rec.problem.goals};
    try {
      const Plan plan = expert(map, repair, config.expert_timeout_s);
      out.repair = expand_samples(rec.id, repair, plan);
    } catch (const Timeout&) {
      out.note = rec.id + ": repair skipped (expert timeout)";
    } catch (const Infeasible& e) {
      out.note = rec.id + ": repair skipped (" + std::string(e.what()) + ")";
    }
  });

  for (Outcome& out : outcomes) {
    if (!out.failed) continue;
    ++report.failures;
    if (!out.repair) {
      ++report.skipped;
      report.log.push_back(std::move(out.note));
      continue;
    }
    ++report.repaired;
    report.samples_added += out.repair->size();
    train.append(std::move(*out.repair), maps, fov_radius, config.comm_radius);
  }
  return report;
}

namespace {
std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string log_header() { return "epoch,lr,train_loss,train_acc,valid_loss,valid_acc,train_size"; }

std::string log_line(const LogRow& r) {
  return std::to_string(r.epoch) + "," + real(r.lr) + "," + real(r.train_loss) + "," +
         real(r.train_acc) + "," + real(r.valid_loss) + "," + real(r.valid_acc) + "," +
         std::to_string(r.train_size);
}

std::vector<LogRow> train(PolicyParams& params, AdamState& adam, Dataset& train_set,
                          const Dataset& valid_set, std::span<const CaseRecord> train_cases,
                          const MapPool& maps, const TrainConfig& config,
                          const TrainHooks& hooks, int first_epoch) {
  validate_train_config(config);
  std::vector<LogRow> log;
  for (int e = first_epoch; e < config.epochs; ++e) {
    const EpochStats tr = train_epoch(params, adam, train_set, config, e);
    if (aggregation_due(e, config)) {
      const GnnController controller(params, SelectMode::Greedy, config.comm_radius);
      const AggregationReport rep = aggregate_online_expert(
          controller, train_set, train_cases, maps, params.arch().fov_radius, config, e);
      if (hooks.on_aggregate) hooks.on_aggregate(e, rep);
    }
    LogRow row;
    row.epoch = e;
    row.lr = cosine_lr(e, config);
    row.train_loss = tr.loss;
    row.train_acc = tr.accuracy;
    if (valid_set.size() > 0) {
      const EpochStats va = evaluate_dataset(params, valid_set, static_cast<std::size_t>(config.batch_size));
      row.valid_loss = va.loss;
      row.valid_acc = va.accuracy;
    }
    row.train_size = train_set.size();
    log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row, params, adam);
    if (hooks.stop && hooks.stop(row)) break;
  }
  return log;
}

}  // namespace gnnmapf
