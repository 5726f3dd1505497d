#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "gnnmapf/gradient_check.hpp"
#include "gnnmapf/grid.hpp"
#include "gnnmapf/layers.hpp"
#include "gnnmapf/policy.hpp"
#include "gnnmapf/rng.hpp"

// Randomized finite-difference checks shared by the unit and acceptance
// suites. Each scalar loss is <w, op(x)> with a random projection w.
namespace gradfix {

using namespace gnnmapf;

inline constexpr double kStep = 1e-5;

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform_real(rng, lo, hi);
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void merge(GradientCheckResult& into, const GradientCheckResult& r) {
  into.max_relative_error = std::max(into.max_relative_error, r.max_relative_error);
  into.checked += r.checked;
  into.skipped += r.skipped;
}

// Checks d loss / d arg, perturbing `arg` in place through the span.
inline GradientCheckResult check_arg(Tensor& arg, const std::function<double()>& loss,
                                     const Tensor& analytic,
                                     const std::function<std::uint64_t()>& regime = {},
                                     std::span<const std::size_t> coords = {}) {
  const std::vector<double> point(arg.values().begin(), arg.values().end());
  auto load = [&](std::span<const double> p) { std::copy(p.begin(), p.end(), arg.data()); };
  ScalarFunction f = [&](std::span<const double> p) {
    load(p);
    return loss();
  };
  RegimeFunction g;
  if (regime)
    g = [&](std::span<const double> p) {
      load(p);
      return regime();
    };
  const auto r = gradient_check(f, point, analytic.values(), kStep, coords, g);
  load(point);
  return r;
}

inline std::uint64_t sign_hash(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : t.values()) h = (h ^ (v > 0.0 ? 1u : 0u)) * 1099511628211ULL;
  return h;
}

inline GradientCheckResult conv2d_trial(Rng& rng) {
  Tensor x = random_tensor(rng, {2, 2, 4, 5});
  Tensor w = random_tensor(rng, {3, 2, 3, 3});
  Tensor b = random_tensor(rng, {3});
  const Tensor proj = random_tensor(rng, {2, 3, 4, 5});
  nn::Conv2dCache cache;
  nn::conv2d(x, w, b, &cache);
  const auto g = nn::conv2d_backward(proj, w, cache);
  auto loss = [&] { return dot(proj, nn::conv2d(x, w, b)); };
  GradientCheckResult r;
  merge(r, check_arg(x, loss, g.input));
  merge(r, check_arg(w, loss, g.weight));
  merge(r, check_arg(b, loss, g.bias));
  return r;
}

inline GradientCheckResult batchnorm_trial(Rng& rng, nn::Mode mode) {
  Tensor x = random_tensor(rng, {3, 2, 3, 3});
  Tensor scale = random_tensor(rng, {2}, 0.5, 1.5);
  Tensor shift = random_tensor(rng, {2});
  const Tensor mean = random_tensor(rng, {2});
  const Tensor var = random_tensor(rng, {2}, 0.5, 2.0);
  const Tensor proj = random_tensor(rng, {3, 2, 3, 3});
  nn::BatchNormCache cache;
  nn::batchnorm2d(x, scale, shift, mean, var, mode, &cache);
  const auto g = nn::batchnorm2d_backward(proj, scale, cache);
  auto loss = [&] { return dot(proj, nn::batchnorm2d(x, scale, shift, mean, var, mode)); };
  GradientCheckResult r;
  merge(r, check_arg(x, loss, g.input));
  merge(r, check_arg(scale, loss, g.scale));
  merge(r, check_arg(shift, loss, g.shift));
  return r;
}

inline GradientCheckResult relu_trial(Rng& rng) {
  Tensor x = random_tensor(rng, {4, 6});
  const Tensor proj = random_tensor(rng, {4, 6});
  const Tensor g = nn::relu_backward(proj, x);
  return check_arg(x, [&] { return dot(proj, nn::relu(x)); }, g, [&] { return sign_hash(x); });
}

inline GradientCheckResult maxpool_trial(Rng& rng) {
  Tensor x = random_tensor(rng, {2, 2, 9, 9});
  nn::MaxPoolCache cache;
  const Tensor y = nn::maxpool2d(x, &cache);
  const Tensor proj = random_tensor(rng, y.shape());
  const Tensor g = nn::maxpool2d_backward(proj, cache);
  auto regime = [&] {
    nn::MaxPoolCache c;
    nn::maxpool2d(x, &c);
    std::uint64_t h = 1469598103934665603ULL;
    for (auto a : c.argmax) h = (h ^ a) * 1099511628211ULL;
    return h;
  };
  return check_arg(x, [&] { return dot(proj, nn::maxpool2d(x)); }, g, regime);
}

inline GradientCheckResult linear_trial(Rng& rng) {
  Tensor x = random_tensor(rng, {4, 6});
  Tensor w = random_tensor(rng, {3, 6});
  Tensor b = random_tensor(rng, {3});
  const Tensor proj = random_tensor(rng, {4, 3});
  const auto g = nn::linear_backward(proj, x, w);
  auto loss = [&] { return dot(proj, nn::linear(x, w, b)); };
  GradientCheckResult r;
  merge(r, check_arg(x, loss, g.input));
  merge(r, check_arg(w, loss, g.weight));
  merge(r, check_arg(b, loss, g.bias));
  return r;
}

inline GradientCheckResult cross_entropy_trial(Rng& rng) {
  Tensor logits = random_tensor(rng, {6, kNumActions}, -3.0, 3.0);
  std::vector<int> labels(6);
  for (int& l : labels) l = static_cast<int>(uniform_index(rng, kNumActions));
  const auto res = nn::cross_entropy_loss(logits, labels);
  return check_arg(logits, [&] { return nn::cross_entropy_loss(logits, labels).loss; }, res.grad);
}

inline Tensor random_shift(Rng& rng, std::size_t n) {
  Tensor s({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (uniform_real(rng) < 0.5) s.at(i, j) = s.at(j, i) = uniform_real(rng, 0.1, 0.6);
  return s;
}

inline GradientCheckResult graph_filter_trial(Rng& rng) {
  const std::size_t n = 5, f = 4, g = 3, k = 1 + uniform_index(rng, 4);
  Tensor x = random_tensor(rng, {n, f});
  const Tensor s = random_shift(rng, n);
  std::vector<Tensor> taps;
  for (std::size_t i = 0; i < k; ++i) taps.push_back(random_tensor(rng, {f, g}));
  const Tensor proj = random_tensor(rng, {n, g});
  nn::GraphFilterCache cache;
  nn::graph_filter(x, s, taps, &cache);
  const auto grads = nn::graph_filter_backward(proj, s, taps, cache);
  auto loss = [&] { return dot(proj, nn::graph_filter(x, s, taps)); };
  GradientCheckResult r;
  merge(r, check_arg(x, loss, grads.input));
  for (std::size_t i = 0; i < k; ++i) merge(r, check_arg(taps[i], loss, grads.taps[i]));
  return r;
}

inline LocalObservation random_observation(Rng& rng, int radius) {
  LocalObservation obs;
  obs.radius = radius;
  obs.values.resize(static_cast<std::size_t>(3 * obs.side() * obs.side()));
  for (auto& v : obs.values) v = uniform_real(rng) < 0.3 ? 1 : 0;
  return obs;
}

inline PolicyArch small_arch(int taps) {
  PolicyArch a;
  a.filter_taps = taps;
  a.channels = {4, 4, 6, 6, 8, 8};
  return a;
}

// End-to-end: cross-entropy of a train-mode forward over two teams against
// every parameter tensor (a random subset of coordinates per tensor).
inline GradientCheckResult policy_trial(Rng& rng, std::size_t coords_per_tensor = 8) {
  PolicyParams params(small_arch(1 + static_cast<int>(uniform_index(rng, 3))), rng());
  PolicyBatch batch;
  std::vector<int> labels;
  for (std::size_t team : {3u, 4u}) {
    std::vector<LocalObservation> obs;
    for (std::size_t i = 0; i < team; ++i) obs.push_back(random_observation(rng, 4));
    append_team(batch, obs, random_shift(rng, team));
    for (std::size_t i = 0; i < team; ++i)
      labels.push_back(static_cast<int>(uniform_index(rng, kNumActions)));
  }
  const ForwardPass pass = policy_forward_batch(params, batch, nn::Mode::Train);
  const auto ce = nn::cross_entropy_loss(pass.logits, labels);
  params.store().zero_grad();
  policy_backward(params, batch, pass, ce.grad);

  auto loss = [&] {
    return nn::cross_entropy_loss(policy_forward_batch(params, batch, nn::Mode::Train).logits,
                                  labels)
        .loss;
  };
  auto regime = [&] { return policy_forward_batch(params, batch, nn::Mode::Train).regime(); };
  GradientCheckResult r;
  for (auto& [name, p] : params.store().parameters()) {
    std::vector<std::size_t> coords;
    for (std::size_t c = 0; c < coords_per_tensor; ++c)
      coords.push_back(uniform_index(rng, p.value.size()));
    const Tensor analytic = p.grad;
    merge(r, check_arg(p.value, loss, analytic, regime, coords));
  }
  return r;
}

struct NamedTrial {
  std::string name;
  std::function<GradientCheckResult(Rng&)> run;
};

inline std::vector<NamedTrial> all_trials() {
  return {
      {"conv2d", conv2d_trial},
      {"batchnorm2d/train", [](Rng& r) { return batchnorm_trial(r, nn::Mode::Train); }},
      {"batchnorm2d/eval", [](Rng& r) { return batchnorm_trial(r, nn::Mode::Eval); }},
      {"relu", relu_trial},
      {"maxpool2d", maxpool_trial},
      {"linear", linear_trial},
      {"cross_entropy", cross_entropy_trial},
      {"graph_filter", graph_filter_trial},
      {"policy+loss", [](Rng& r) { return policy_trial(r); }},
  };
}

}  // namespace gradfix
