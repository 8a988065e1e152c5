#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tjlab/error.hpp"
#include "tjlab/mask.hpp"
#include "tjlab/network.hpp"
#include "tjlab/rng.hpp"
#include "tjlab/tensor_set.hpp"

namespace tjlab {

// How a conv channel's feature map is reduced to one activation value when
// reverse-engineering a mask. Dense units ignore this.
enum class ChannelReduce : std::uint8_t { mean, max };

struct ScanConfig {
  int grid_size = 64;
  double max_multiplier = 3.0;  // grid spans [0, max_multiplier * max natural activation]
  int min_width = 4;            // shortest run of agreeing grid points that counts
  int mask_steps = 300;
  double mask_learning_rate = 0.05;
  double lambda = 20.0;  // weight of the mean-alpha (mask size) penalty
  // Hard cap on sum(alpha) as a fraction of the input size; alpha is projected
  // back under it after every step. 1 disables the cap.
  double max_mask_fraction = 0.02;
  ChannelReduce channel_reduce = ChannelReduce::max;
  double reasr_bound = 0.2;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: TJLAB_THREADS env var, else 1

  void validate() const {
    if (grid_size < 2) throw Error("scan: grid_size must be >= 2");
    if (!(max_multiplier > 0)) throw Error("scan: max_multiplier must be > 0");
    if (min_width < 1) throw Error("scan: min_width must be >= 1");
    if (!(reasr_bound >= 0.0 && reasr_bound <= 1.0)) throw Error("scan: reasr_bound must be in [0, 1]");
    if (mask_steps < 0) throw Error("scan: mask_steps must be >= 0");
    if (!(lambda >= 0)) throw Error("scan: lambda must be >= 0");
    if (!(max_mask_fraction > 0.0 && max_mask_fraction <= 1.0)) {
      throw Error("scan: max_mask_fraction must be in (0, 1]");
    }
  }
};

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TJLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// Runs body(i) for i in [0, n) on up to `threads` workers. Results must be
// written to per-index slots so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        if (failed.load()) return;
        try {
          body(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Neuron stimulation function samples: curves[i][j] is the label predicted for
// seed i with the unit forced to grid[j].
struct StimulationProfile {
  NeuronRef neuron;
  std::vector<double> grid;
  std::vector<std::vector<int>> curves;
};

namespace scan_detail {

template <std::floating_point T>
double unit_max(const Network<T>& net, const NeuronRef& n, std::span<const std::vector<T>> layer_out) {
  const std::size_t plane = net.output_shape(n.layer).plane();
  double m = 0;
  for (const auto& out : layer_out) {
    const T* p = out.data() + static_cast<std::size_t>(n.unit) * plane;
    for (std::size_t j = 0; j < plane; ++j) m = std::max(m, static_cast<double>(p[j]));
  }
  return m;
}

template <std::floating_point T>
double layer_max(std::span<const std::vector<T>> layer_out) {
  double m = 0;
  for (const auto& out : layer_out) {
    for (T v : out) m = std::max(m, static_cast<double>(v));
  }
  return m;
}

template <std::floating_point T>
std::vector<std::vector<T>> layer_outputs(const Network<T>& net, std::size_t layer, const TensorSet<T>& seeds) {
  std::vector<std::vector<T>> out;
  out.reserve(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) out.push_back(net.run_until(seeds.sample(i), layer));
  return out;
}

template <std::floating_point T>
StimulationProfile sweep(const Network<T>& net, const NeuronRef& n, std::span<const std::vector<T>> cached,
                         std::span<const double> grid) {
  StimulationProfile p{n, {grid.begin(), grid.end()}, {}};
  p.curves.assign(cached.size(), std::vector<int>(grid.size()));
  std::vector<T> act;
  for (std::size_t i = 0; i < cached.size(); ++i) {
    for (std::size_t j = 0; j < grid.size(); ++j) {
      act = cached[i];
      net.set_unit(n.layer, act, n.unit, static_cast<T>(grid[j]));
      const auto s = net.run_from(n.layer + 1, std::move(act), nullptr);
      p.curves[i][j] = argmax<T>(s);
      act = {};
    }
  }
  return p;
}

// Euclidean projection of v onto {a in [0,1]^n : sum(a) <= budget}:
// a_i = clamp(v_i - tau, 0, 1) with the smallest tau >= 0 meeting the budget.
inline void project_capped(std::vector<float>& v, double budget) {
  auto mass = [&](double tau) {
    double s = 0;
    for (float x : v) s += std::clamp(static_cast<double>(x) - tau, 0.0, 1.0);
    return s;
  };
  for (auto& x : v) x = std::clamp(x, 0.f, 1.f);
  if (mass(0.0) <= budget) return;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) > budget ? lo : hi) = mid;
  }
  for (auto& x : v) x = static_cast<float>(std::clamp(static_cast<double>(x) - hi, 0.0, 1.0));
}

}  // namespace scan_detail

inline std::vector<double> stimulation_grid(double max_activation, const ScanConfig& cfg) {
  std::vector<double> g(static_cast<std::size_t>(cfg.grid_size));
  const double top = cfg.max_multiplier * max_activation;
  for (int j = 0; j < cfg.grid_size; ++j) g[static_cast<std::size_t>(j)] = top * j / (cfg.grid_size - 1);
  return g;
}

// Largest natural post-ReLU value of the unit over the seed set (over all
// spatial positions for conv channels).
template <std::floating_point T>
double max_natural_activation(const Network<T>& net, const NeuronRef& n, const TensorSet<T>& seeds) {
  if (!net.is_hidden_unit(n)) throw ShapeError("max_natural_activation: " + to_string(n) + " is not a hidden unit");
  const auto outs = scan_detail::layer_outputs(net, n.layer, seeds);
  return scan_detail::unit_max<T>(net, n, outs);
}

template <std::floating_point T>
StimulationProfile stimulate_neuron(const Network<T>& net, const NeuronRef& n, const TensorSet<T>& seeds,
                                    std::span<const double> grid) {
  if (seeds.empty()) throw Error("stimulate_neuron: empty seed set");
  if (!net.is_hidden_unit(n)) throw ShapeError("stimulate_neuron: " + to_string(n) + " is not a hidden unit");
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (!(grid[j] >= 0.0) || (j > 0 && grid[j] < grid[j - 1])) {
      throw Error("stimulate_neuron: grid must be ascending and non-negative");
    }
  }
  const auto outs = scan_detail::layer_outputs(net, n.layer, seeds);
  return scan_detail::sweep<T>(net, n, outs, grid);
}

// Longest maximal run (first one on ties) of >= min_width grid points where
// every seed curve shows the same label, and that label differs from at least
// ceil(reasr_bound * |seeds|) of the seeds' true labels.
inline std::optional<CandidateNeuron> find_candidate(const StimulationProfile& p, int min_width,
                                                     std::span<const int> seed_labels, double reasr_bound) {
  const std::size_t n_seeds = p.curves.size();
  if (n_seeds == 0 || p.grid.empty()) return std::nullopt;
  if (seed_labels.size() != n_seeds) throw ShapeError("find_candidate: seed label count differs from curve count");
  const auto need = static_cast<std::size_t>(std::ceil(reasr_bound * static_cast<double>(n_seeds) - 1e-12));

  auto agreed = [&](std::size_t j) -> int {
    const int l = p.curves[0][j];
    for (std::size_t i = 1; i < n_seeds; ++i) {
      if (p.curves[i][j] != l) return -1;
    }
    return l;
  };
  auto qualifies = [&](int label) {
    std::size_t differ = 0;
    for (int y : seed_labels) differ += (y != label);
    return differ >= need;
  };

  std::optional<CandidateNeuron> best;
  std::size_t best_len = 0;
  const std::size_t G = p.grid.size();
  std::size_t j = 0;
  while (j < G) {
    const int l = agreed(j);
    std::size_t k = j + 1;
    if (l >= 0) {
      while (k < G && agreed(k) == l) ++k;
      const std::size_t len = k - j;
      if (len >= static_cast<std::size_t>(min_width) && len > best_len && qualifies(l)) {
        best_len = len;
        best = CandidateNeuron{p.neuron, l, p.grid[j], p.grid[k - 1]};
      }
    }
    j = k;
  }
  return best;
}

inline std::vector<CandidateNeuron> find_candidates(std::span<const StimulationProfile> profiles, int min_width,
                                                    std::span<const int> seed_labels, double reasr_bound) {
  std::vector<CandidateNeuron> out;
  for (const auto& p : profiles) {
    if (auto c = find_candidate(p, min_width, seed_labels, reasr_bound)) out.push_back(*c);
  }
  return out;
}

// Fraction of seeds predicted as `label` after masking.
template <std::floating_point T>
double measure_reasr(const Network<T>& net, const TrojanMask& m, const TensorSet<T>& seeds, int label) {
  if (seeds.empty()) return 0.0;
  std::size_t hits = 0;
  std::vector<T> buf(seeds.shape.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    apply_mask<T>(seeds.sample(i), m, std::span<T>(buf));
    hits += predict<T>(net, buf) == label;
  }
  return static_cast<double>(hits) / static_cast<double>(seeds.size());
}

// Optimizes (pattern, alpha) so that the masked seeds drive the candidate
// unit toward z_hi while keeping the mask small:
//   loss = mean_i ((a(mask(x_i)) - z) / z)^2 + lambda * mean(alpha)
// alpha is one value per pixel, shared by all channels. Both tensors take
// Adam steps whose second moment is a single scalar per tensor, so pixels keep
// their relative gradient magnitudes and the mask stays concentrated. After
// every step both are clamped to [0, 1] and alpha is projected under the
// mask-size budget.
template <std::floating_point T>
TrojanMask reverse_engineer_mask(const Network<T>& net, const CandidateNeuron& cand, const TensorSet<T>& seeds,
                                 const ScanConfig& cfg) {
  if (seeds.empty()) throw Error("reverse_engineer_mask: empty seed set");
  const NeuronRef n = cand.neuron;
  if (!net.is_hidden_unit(n)) throw ShapeError("reverse_engineer_mask: " + to_string(n) + " is not a hidden unit");
  const Shape shape = net.input_shape();
  const std::size_t D = shape.size();
  const std::size_t P = shape.plane();
  const std::size_t plane = net.output_shape(n.layer).plane();
  const std::size_t unit_off = static_cast<std::size_t>(n.unit) * plane;
  const double z = std::max(cand.z_hi, 1e-6);
  const double budget = cfg.max_mask_fraction * static_cast<double>(P);

  Rng rng(derive_seed(cfg.seed, "mask:" + to_string(n)));
  TrojanMask m;
  m.shape = shape;
  m.source = cand;
  m.pattern.resize(D);
  m.alpha.resize(D);
  for (auto& v : m.pattern) v = static_cast<float>(uniform01(rng));
  std::vector<float> alpha_px(P);
  for (auto& v : alpha_px) v = static_cast<float>(uniform(rng, 0.0, 0.1));
  scan_detail::project_capped(alpha_px, budget);
  auto broadcast = [&] {
    for (int c = 0; c < shape.channels; ++c) std::copy(alpha_px.begin(), alpha_px.end(), m.alpha.begin() + c * P);
  };
  broadcast();

  std::vector<double> m1p(D, 0), m1a(P, 0);
  double m2p = 0, m2a = 0;
  std::vector<double> gp(D), ga(P);
  std::vector<T> masked(D);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-12, lr = cfg.mask_learning_rate;
  const double inv_n = 1.0 / static_cast<double>(seeds.size());
  const double inv_p = 1.0 / static_cast<double>(P);

  for (int step = 1; step <= cfg.mask_steps; ++step) {
    std::fill(gp.begin(), gp.end(), 0.0);
    std::fill(ga.begin(), ga.end(), 0.0);
    double loss = 0;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const auto x = seeds.sample(i);
      apply_mask<T>(x, m, std::span<T>(masked));
      const auto t = net.trace(masked, nullptr, n.layer);
      const auto& out = t.outputs[n.layer];
      std::vector<T> g(out.size(), T(0));
      if (cfg.channel_reduce == ChannelReduce::max || plane == 1) {
        std::size_t arg = unit_off;
        for (std::size_t j = unit_off; j < unit_off + plane; ++j) {
          if (out[j] > out[arg]) arg = j;
        }
        const double r = (static_cast<double>(out[arg]) - z) / z;
        loss += r * r * inv_n;
        g[arg] = static_cast<T>(2.0 * r / z * inv_n);
      } else {
        double s = 0;
        for (std::size_t j = unit_off; j < unit_off + plane; ++j) s += static_cast<double>(out[j]);
        const double r = (s / static_cast<double>(plane) - z) / z;
        loss += r * r * inv_n;
        const T gv = static_cast<T>(2.0 * r / z * inv_n / static_cast<double>(plane));
        std::fill_n(g.begin() + static_cast<std::ptrdiff_t>(unit_off), plane, gv);
      }
      const auto gx = net.backward(t, n.layer, std::move(g), nullptr, true);
      for (std::size_t d = 0; d < D; ++d) {
        const T a_d = static_cast<T>(m.alpha[d]);
        const T raw = (T(1) - a_d) * x[d] + a_d * static_cast<T>(m.pattern[d]);
        if (raw < T(0) || raw > T(1)) continue;  // clamped: no gradient
        gp[d] += static_cast<double>(gx[d] * a_d);
        ga[d % P] += static_cast<double>(gx[d] * (static_cast<T>(m.pattern[d]) - x[d]));
      }
    }
    double l1 = 0;
    for (float a : alpha_px) l1 += a;
    loss += cfg.lambda * l1 * inv_p;
    if (!std::isfinite(loss)) {
      throw DivergenceError("reverse_engineer_mask: non-finite loss at step " + std::to_string(step) + " for " +
                                to_string(n),
                            step);
    }
    for (std::size_t p = 0; p < P; ++p) {
      if (alpha_px[p] > 0.f) ga[p] += cfg.lambda * inv_p;
    }
    const double c1 = 1.0 - std::pow(b1, step), c2 = 1.0 - std::pow(b2, step);
    auto adam = [&](std::vector<double>& g, std::vector<double>& m1, double& m2, auto&& apply) {
      double sq = 0;
      for (double v : g) sq += v * v;
      m2 = b2 * m2 + (1 - b2) * sq / static_cast<double>(g.size());
      const double denom = std::sqrt(m2 / c2) + eps;
      for (std::size_t k = 0; k < g.size(); ++k) {
        m1[k] = b1 * m1[k] + (1 - b1) * g[k];
        apply(k, lr * (m1[k] / c1) / denom);
      }
    };
    adam(gp, m1p, m2p, [&](std::size_t k, double s) {
      m.pattern[k] = static_cast<float>(std::clamp(static_cast<double>(m.pattern[k]) - s, 0.0, 1.0));
    });
    adam(ga, m1a, m2a, [&](std::size_t k, double s) {
      alpha_px[k] = static_cast<float>(std::clamp(static_cast<double>(alpha_px[k]) - s, 0.0, 1.0));
    });
    scan_detail::project_capped(alpha_px, budget);
    broadcast();
  }
  m.reasr = measure_reasr(net, m, seeds, cand.elevated_label);
  return m;
}

// Recheck of an emitted candidate through full forward passes: every grid
// point inside [z_lo, z_hi] sends every seed to the elevated label, and that
// label differs from at least ceil(reasr_bound * |seeds|) seed labels.
template <std::floating_point T>
bool verify_candidate(const Network<T>& net, const CandidateNeuron& c, const TensorSet<T>& seeds,
                      std::span<const double> grid, double reasr_bound) {
  if (seeds.empty() || !(c.z_lo <= c.z_hi)) return false;
  std::size_t differ = 0;
  for (int y : seeds.labels) differ += (y != c.elevated_label);
  const auto need = static_cast<std::size_t>(std::ceil(reasr_bound * static_cast<double>(seeds.size()) - 1e-12));
  if (differ < need) return false;
  std::size_t points = 0;
  for (double z : grid) {
    if (z < c.z_lo || z > c.z_hi) continue;
    ++points;
    const ActivationOverride<T> ov{c.neuron, static_cast<T>(z)};
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (predict_with_override<T>(net, seeds.sample(i), ov) != c.elevated_label) return false;
    }
  }
  return points > 0;
}

inline std::vector<TrojanMask> filter_by_reasr(std::span<const TrojanMask> masks, double reasr_bound) {
  std::vector<TrojanMask> out;
  for (const auto& m : masks) {
    if (m.reasr >= reasr_bound) out.push_back(m);
  }
  return out;
}

struct UnitTiming {
  NeuronRef neuron;
  double stimulate_seconds = 0;
  double mask_seconds = 0;
};

struct ScanResult {
  std::vector<CandidateNeuron> candidates;
  std::vector<TrojanMask> reverse_engineered;  // one per candidate, before filtering
  std::vector<TrojanMask> masks;               // survivors of the REASR bound
  std::vector<std::vector<double>> candidate_grids;  // stimulation grid each candidate was found on
  std::vector<UnitTiming> timings;
  std::size_t units_scanned = 0;
};

// Stimulation analysis over every hidden unit, candidate detection, one mask
// per candidate, REASR filtering. Units fan out across threads; results are
// reduced in unit order so the output matches a sequential run.
template <std::floating_point T>
ScanResult scan(const Network<T>& net, const TensorSet<T>& seeds, const ScanConfig& cfg) {
  cfg.validate();
  if (seeds.empty()) throw Error("scan: empty seed set");
  const int threads = resolve_threads(cfg.threads);
  const auto units = net.hidden_units();

  // Prefix activations, computed once per layer.
  std::vector<std::vector<std::vector<T>>> cache(net.layer_count());
  std::vector<double> layer_peak(net.layer_count(), 0.0);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    if (!net.has_relu(l)) continue;
    cache[l] = scan_detail::layer_outputs(net, l, seeds);
    layer_peak[l] = scan_detail::layer_max<T>(cache[l]);
  }

  using clock = std::chrono::steady_clock;
  std::vector<std::optional<CandidateNeuron>> found(units.size());
  std::vector<UnitTiming> timings(units.size());
  std::vector<std::vector<double>> grids(units.size());
  parallel_for(units.size(), threads, [&](std::size_t u) {
    const auto t0 = clock::now();
    const auto& n = units[u];
    double peak = scan_detail::unit_max<T>(net, n, cache[n.layer]);
    if (peak <= 0) peak = layer_peak[n.layer] > 0 ? layer_peak[n.layer] : 1.0;
    grids[u] = stimulation_grid(peak, cfg);
    const auto prof = scan_detail::sweep<T>(net, n, cache[n.layer], grids[u]);
    found[u] = find_candidate(prof, cfg.min_width, seeds.labels, cfg.reasr_bound);
    timings[u] = {n, std::chrono::duration<double>(clock::now() - t0).count(), 0};
  });

  ScanResult res;
  res.units_scanned = units.size();
  std::vector<std::size_t> cand_unit;
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (found[u]) {
      res.candidates.push_back(*found[u]);
      res.candidate_grids.push_back(std::move(grids[u]));
      cand_unit.push_back(u);
    }
  }
  res.reverse_engineered.resize(res.candidates.size());
  parallel_for(res.candidates.size(), threads, [&](std::size_t c) {
    const auto t0 = clock::now();
    res.reverse_engineered[c] = reverse_engineer_mask(net, res.candidates[c], seeds, cfg);
    timings[cand_unit[c]].mask_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  });
  res.masks = filter_by_reasr(res.reverse_engineered, cfg.reasr_bound);
  res.timings = std::move(timings);
  return res;
}

}  // namespace tjlab
