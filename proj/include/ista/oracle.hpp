#pragma once

// Brute-force ground truth for the aggregation: the explicit 4th-order
// tensor and the pairwise matching kernel it linearizes. Both are plain
// loops over neighborhood() and share no code with the encoder. Test scale
// only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ista/codebook.hpp"
#include "ista/descriptor_store.hpp"
#include "ista/error.hpp"
#include "ista/rng.hpp"

namespace ista::oracle {

inline constexpr std::size_t kMaxTensorEntries = 10'000'000;

namespace detail {

struct CoupledPair {
  std::size_t first;   // cell of x_r
  std::size_t second;  // cell of x_u
};

inline std::vector<CoupledPair> coupled_pairs(const DescriptorGrid& g, int radius,
                                              bool include_center) {
  std::vector<CoupledPair> out;
  for (int y = 0; y < static_cast<int>(g.height()); ++y) {
    for (int x = 0; x < static_cast<int>(g.width()); ++x) {
      const GridPosition p{y, x};
      for (GridPosition q : neighborhood(g, p, radius, include_center)) {
        out.push_back({g.cell(p), g.cell(q)});
      }
    }
  }
  return out;
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double{a[i]} * double{b[i]};
  return s;
}

}  // namespace detail

/// Flattened tensor sum_{r, u in Omega(r)} h(x_r) (x) h(x_u) (x) x_r (x) x_u,
/// index order (k, l, i, j).
inline std::vector<double> naive_sta_tensor(const DescriptorGrid& grid,
                                            const Codebook& cb, int radius,
                                            bool include_center = false) {
  const std::size_t n = static_cast<std::size_t>(cb.size());
  const std::size_t d = grid.depth();
  if (n * n * d * d > kMaxTensorEntries) {
    throw ResourceError("naive tensor would hold " + std::to_string(n * n * d * d) +
                        " entries, limit is " + std::to_string(kMaxTensorEntries));
  }
  if (static_cast<int>(d) != cb.dim()) throw ArgumentError("depth mismatch");
  std::vector<double> t(n * n * d * d, 0.0);
  for (const auto& pr : detail::coupled_pairs(grid, radius, include_center)) {
    const auto xr = grid.descriptor(pr.first);
    const auto xu = grid.descriptor(pr.second);
    const std::size_t k = static_cast<std::size_t>(cb.assign(xr));
    const std::size_t l = static_cast<std::size_t>(cb.assign(xu));
    double* block = t.data() + (k * n + l) * d * d;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) block[i * d + j] += double{xr[i]} * xu[j];
    }
  }
  return t;
}

/// K(a, b) = sum over coupled pairs (r, u) of a and (s, v) of b of
/// k(x_r, x_s) k(x_u, x_v), with k(x, y) = [h(x) == h(y)] <x, y>.
inline double matching_kernel_oracle(const DescriptorGrid& a, const DescriptorGrid& b,
                                     const Codebook& cb, int radius,
                                     bool include_center = false) {
  if (a.depth() != b.depth()) throw ArgumentError("depth mismatch");
  const auto pa = detail::coupled_pairs(a, radius, include_center);
  const auto pb = detail::coupled_pairs(b, radius, include_center);
  const auto la = cb.assign_grid(a);
  const auto lb = cb.assign_grid(b);
  auto k = [&](const DescriptorGrid& ga, std::size_t ca, int ha,
               const DescriptorGrid& gb, std::size_t cb_, int hb) {
    return ha == hb ? detail::dot(ga.descriptor(ca), gb.descriptor(cb_)) : 0.0;
  };
  double total = 0.0;
  for (const auto& p : pa) {
    for (const auto& q : pb) {
      total += k(a, p.first, la[p.first], b, q.first, lb[q.first]) *
               k(a, p.second, la[p.second], b, q.second, lb[q.second]);
    }
  }
  return total;
}

inline double tensor_dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ArgumentError("tensor size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// |a - b| within `rel` of the larger magnitude (absolute 1e-14 near zero).
inline bool relatively_close(double a, double b, double rel) {
  const double diff = std::abs(a - b);
  return diff <= rel * std::max(std::abs(a), std::abs(b)) || diff <= 1e-14;
}

// ---------------------------------------------------------------------------
// Seeded random instances
// ---------------------------------------------------------------------------

inline double gaussian(Rng& rng) {
  // Box-Muller; portable unlike std::normal_distribution.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline DescriptorGrid random_grid(Rng& rng, std::uint32_t h, std::uint32_t w,
                                  std::uint32_t d, std::string id = "random") {
  std::vector<float> v(std::size_t{h} * w * d);
  for (float& x : v) x = static_cast<float>(gaussian(rng));
  return DescriptorGrid(std::move(id), 0, h, w, d, std::move(v)).normalized();
}

inline Codebook random_codebook(Rng& rng, int n, int d) {
  RowMatrix c(n, d);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = gaussian(rng);
  return Codebook(std::move(c));
}

struct LinearizationInstance {
  Codebook codebook;
  DescriptorGrid a;
  DescriptorGrid b;
};

/// N in [1,4], D in [1,6], grids up to 4x4, drawn from `rng`.
inline LinearizationInstance random_linearization_instance(Rng& rng) {
  const int n = 1 + static_cast<int>(uniform_index(rng, 4));
  const auto d = static_cast<std::uint32_t>(1 + uniform_index(rng, 6));
  auto side = [&] { return static_cast<std::uint32_t>(1 + uniform_index(rng, 4)); };
  Codebook cb = random_codebook(rng, n, static_cast<int>(d));
  const auto ha = side(), wa = side(), hb = side(), wb = side();
  DescriptorGrid a = random_grid(rng, ha, wa, d, "a");
  DescriptorGrid b = random_grid(rng, hb, wb, d, "b");
  return {std::move(cb), std::move(a), std::move(b)};
}

struct OracleReport {
  int passed = 0;
  int failed = 0;
  double worst_relative_error = 0.0;
};

/// Checks <T(a), T(b)> == K(a, b) on `trials` random instances for both
/// readings of the neighborhood (center excluded and included).
inline OracleReport run_linearization_suite(std::uint64_t seed, int trials, int radius = 1,
                                            double tolerance = 1e-9) {
  OracleReport report;
  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    const auto inst = random_linearization_instance(rng);
    for (bool include_center : {false, true}) {
      const double lhs =
          tensor_dot(naive_sta_tensor(inst.a, inst.codebook, radius, include_center),
                     naive_sta_tensor(inst.b, inst.codebook, radius, include_center));
      const double rhs =
          matching_kernel_oracle(inst.a, inst.b, inst.codebook, radius, include_center);
      const double scale = std::max(std::abs(lhs), std::abs(rhs));
      if (scale > 1e-12) {
        report.worst_relative_error =
            std::max(report.worst_relative_error, std::abs(lhs - rhs) / scale);
      }
      (relatively_close(lhs, rhs, tolerance) ? report.passed : report.failed)++;
    }
  }
  return report;
}

}  // namespace ista::oracle
