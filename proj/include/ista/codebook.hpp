#pragma once

// Hard-assignment visual codebook: k-means++ seeded Lloyd iterations, the
// nearest-center indicator and the `.codebook` file format.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ista/binary_io.hpp"
#include "ista/descriptor_store.hpp"
#include "ista/error.hpp"
#include "ista/linalg.hpp"
#include "ista/parallel.hpp"
#include "ista/rng.hpp"

namespace ista {

namespace detail {

template <class A, class B>
double squared_distance(const A& a, const B& b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += diff * diff;
  }
  return s;
}

}  // namespace detail

class Codebook {
 public:
  Codebook() = default;

  /// One center per row. Throws ValidationError on non-finite or duplicate
  /// centers.
  explicit Codebook(RowMatrix centers, std::uint64_t seed = 0,
                    double inertia = 0.0)
      : centers_(std::move(centers)), seed_(seed), inertia_(inertia) {
    if (centers_.rows() < 1 || centers_.cols() < 1) {
      throw ValidationError("codebook needs at least one center of positive dimension");
    }
    if (!all_finite(centers_.data(), static_cast<std::size_t>(centers_.size()))) {
      throw ValidationError("codebook has non-finite center entries");
    }
    for (Eigen::Index a = 0; a < centers_.rows(); ++a) {
      for (Eigen::Index b = a + 1; b < centers_.rows(); ++b) {
        if (centers_.row(a) == centers_.row(b)) {
          throw ValidationError("codebook centers " + std::to_string(a) +
                                " and " + std::to_string(b) + " are identical");
        }
      }
    }
  }

  int size() const { return static_cast<int>(centers_.rows()); }
  int dim() const { return static_cast<int>(centers_.cols()); }
  const RowMatrix& centers() const { return centers_; }
  std::uint64_t seed() const { return seed_; }
  double inertia() const { return inertia_; }

  /// Index of the nearest center (squared euclidean), lowest index on ties.
  template <class Vec>
  int assign(const Vec& x, std::size_t dim) const {
    if (dim != static_cast<std::size_t>(centers_.cols())) {
      throw ArgumentError("descriptor dimension " + std::to_string(dim) +
                          " does not match codebook dimension " +
                          std::to_string(centers_.cols()));
    }
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < centers_.rows(); ++k) {
      const double d = detail::squared_distance(x, centers_.row(k), dim);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    return best;
  }
  int assign(std::span<const float> x) const { return assign(x, x.size()); }
  int assign(const Vector& x) const {
    return assign(x, static_cast<std::size_t>(x.size()));
  }

  /// Cluster label of every cell of a grid, row-major.
  std::vector<int> assign_grid(const DescriptorGrid& grid) const {
    std::vector<int> labels(grid.cells());
    for (std::size_t c = 0; c < grid.cells(); ++c) {
      labels[c] = assign(grid.descriptor(c));
    }
    return labels;
  }

  friend bool operator==(const Codebook& a, const Codebook& b) {
    return a.seed_ == b.seed_ && a.centers_.rows() == b.centers_.rows() &&
           a.centers_.cols() == b.centers_.cols() && a.centers_ == b.centers_;
  }

 private:
  RowMatrix centers_;
  std::uint64_t seed_ = 0;
  double inertia_ = 0.0;
};

/// Number of distinct rows (exact comparison).
inline std::size_t count_distinct_rows(const RowMatrix& data) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(data.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  const auto cols = data.cols();
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    return std::lexicographical_compare(data.row(a).data(),
                                        data.row(a).data() + cols,
                                        data.row(b).data(),
                                        data.row(b).data() + cols);
  };
  std::sort(idx.begin(), idx.end(), less);
  std::size_t distinct = idx.empty() ? 0 : 1;
  for (std::size_t i = 1; i < idx.size(); ++i) {
    if (less(idx[i - 1], idx[i])) ++distinct;
  }
  return distinct;
}

/// Uniform random subset of at most `cap` rows, kept in input order.
inline RowMatrix subsample_rows(const RowMatrix& data, std::size_t cap,
                                std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(data.rows());
  if (n <= cap) return data;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < cap; ++i) {
    std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  RowMatrix out(static_cast<Eigen::Index>(cap), data.cols());
  for (std::size_t i = 0; i < cap; ++i) {
    out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

struct KMeansOptions {
  int clusters = 32;
  std::uint64_t seed = 0;
  int max_iters = 100;
  unsigned threads = 1;
};

/// Per-iteration inertia (sum of squared distances to the assigned center),
/// recorded after every assignment step.
using InertiaTrace = std::vector<double>;

namespace detail {

inline constexpr std::size_t kKMeansChunk = 4096;

class LloydState {
 public:
  LloydState(const RowMatrix& data, RowMatrix centers, unsigned threads)
      : data_(data),
        centers_(std::move(centers)),
        threads_(threads),
        labels_(static_cast<std::size_t>(data.rows())),
        dist_(static_cast<std::size_t>(data.rows())) {}

  void assign() {
    parallel_for(labels_.size(), threads_, [&](std::size_t i) {
      const auto row = data_.row(static_cast<Eigen::Index>(i));
      labels_[i] = nearest(row);
      dist_[i] = squared_distance(row, centers_.row(labels_[i]),
                                  static_cast<std::size_t>(data_.cols()));
    });
  }

  /// Moves each empty center onto the point farthest from its own center,
  /// taken from a cluster that can spare it, then reassigns.
  void repair_empty_clusters() {
    const int k = static_cast<int>(centers_.rows());
    for (int guard = 0; guard < 4 * k + 4; ++guard) {
      std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
      for (int l : labels_) ++counts[static_cast<std::size_t>(l)];
      const auto empty = std::find(counts.begin(), counts.end(), 0u);
      if (empty == counts.end()) return;
      std::size_t far = labels_.size();
      double far_d = -1.0;
      for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (counts[static_cast<std::size_t>(labels_[i])] > 1 && dist_[i] > far_d) {
          far_d = dist_[i];
          far = i;
        }
      }
      if (far == labels_.size() || far_d <= 0.0) {
        throw FitError("k-means: cannot repair empty cluster");
      }
      centers_.row(empty - counts.begin()) =
          data_.row(static_cast<Eigen::Index>(far));
      assign();
    }
    throw FitError("k-means: empty-cluster repair did not converge");
  }

  void update_centers() {
    const auto k = centers_.rows();
    const auto d = data_.cols();
    struct Partial {
      RowMatrix sums;
      std::vector<std::size_t> counts;
    };
    Partial acc{RowMatrix::Zero(k, d), std::vector<std::size_t>(static_cast<std::size_t>(k), 0)};
    chunked_reduce(
        labels_.size(), kKMeansChunk, threads_, acc,
        [&](std::size_t begin, std::size_t end) {
          Partial p{RowMatrix::Zero(k, d), std::vector<std::size_t>(static_cast<std::size_t>(k), 0)};
          for (std::size_t i = begin; i < end; ++i) {
            p.sums.row(labels_[i]) += data_.row(static_cast<Eigen::Index>(i));
            ++p.counts[static_cast<std::size_t>(labels_[i])];
          }
          return p;
        },
        [](Partial& a, Partial&& p) {
          a.sums += p.sums;
          for (std::size_t j = 0; j < a.counts.size(); ++j) a.counts[j] += p.counts[j];
        });
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto c = acc.counts[static_cast<std::size_t>(j)];
      if (c > 0) centers_.row(j) = acc.sums.row(j) / static_cast<double>(c);
    }
  }

  double inertia() const {
    double total = 0.0;
    chunked_reduce(
        dist_.size(), kKMeansChunk, 1, total,
        [&](std::size_t b, std::size_t e) {
          return std::accumulate(dist_.begin() + static_cast<std::ptrdiff_t>(b),
                                 dist_.begin() + static_cast<std::ptrdiff_t>(e), 0.0);
        },
        [](double& a, double&& p) { a += p; });
    return total;
  }

  const std::vector<int>& labels() const { return labels_; }
  const RowMatrix& centers() const { return centers_; }

 private:
  template <class Row>
  int nearest(const Row& x) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < centers_.rows(); ++k) {
      const double d = squared_distance(x, centers_.row(k),
                                        static_cast<std::size_t>(data_.cols()));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    return best;
  }
  const RowMatrix& data_;
  RowMatrix centers_;
  unsigned threads_;
  std::vector<int> labels_;
  std::vector<double> dist_;
};

/// k-means++ seeding: first center uniform, then proportional to the squared
/// distance to the closest chosen center.
inline RowMatrix kmeanspp_seed(const RowMatrix& data, int k, Rng& rng) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto d = static_cast<std::size_t>(data.cols());
  RowMatrix centers(k, data.cols());
  std::size_t first = uniform_index(rng, n);
  centers.row(0) = data.row(static_cast<Eigen::Index>(first));
  std::vector<double> closest(n);
  for (std::size_t i = 0; i < n; ++i) {
    closest[i] = squared_distance(data.row(static_cast<Eigen::Index>(i)), centers.row(0), d);
  }
  for (int c = 1; c < k; ++c) {
    std::vector<double> cumulative(n);
    std::partial_sum(closest.begin(), closest.end(), cumulative.begin());
    const double total = cumulative.back();
    if (!(total > 0.0)) throw FitError("k-means++: no point left to seed from");
    const double target = uniform01(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    std::size_t pick = static_cast<std::size_t>(it - cumulative.begin());
    if (pick >= n) pick = n - 1;
    // Land on a point with positive weight (skip zero-width steps).
    while (closest[pick] == 0.0 && pick + 1 < n) ++pick;
    while (closest[pick] == 0.0 && pick > 0) --pick;
    centers.row(c) = data.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      closest[i] = std::min(
          closest[i], squared_distance(data.row(static_cast<Eigen::Index>(i)), centers.row(c), d));
    }
  }
  return centers;
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding. Deterministic for a fixed
/// (row order, seed) and any thread count. Stops after max_iters update
/// steps or when an assignment step changes no label.
inline Codebook fit_kmeans(const RowMatrix& samples, const KMeansOptions& opt,
                           InertiaTrace* trace = nullptr) {
  if (samples.rows() == 0) throw FitError("k-means: empty descriptor stream");
  if (opt.clusters < 1) throw FitError("k-means: cluster count must be positive");
  if (opt.max_iters < 1) throw FitError("k-means: max_iters must be positive");
  if (!all_finite(samples.data(), static_cast<std::size_t>(samples.size()))) {
    throw FitError("k-means: non-finite training descriptor");
  }
  const std::size_t distinct = count_distinct_rows(samples);
  if (distinct < static_cast<std::size_t>(opt.clusters)) {
    throw FitError("k-means: " + std::to_string(distinct) +
                   " distinct descriptors for " + std::to_string(opt.clusters) +
                   " clusters");
  }

  Rng rng(opt.seed);
  detail::LloydState state(samples, detail::kmeanspp_seed(samples, opt.clusters, rng),
                           opt.threads);
  state.assign();
  state.repair_empty_clusters();
  double inertia = state.inertia();
  if (trace) trace->assign(1, inertia);

  for (int it = 0; it < opt.max_iters; ++it) {
    const std::vector<int> previous = state.labels();
    state.update_centers();
    state.assign();
    state.repair_empty_clusters();
    inertia = state.inertia();
    if (trace) trace->push_back(inertia);
    if (state.labels() == previous) break;
  }
  try {
    return Codebook(state.centers(), opt.seed, inertia);
  } catch (const ValidationError& e) {
    throw FitError(std::string("k-means: ") + e.what());
  }
}

// `.codebook`: "ISTACB01", u32 N, u32 D, u64 seed, N*D f64 centers.
inline constexpr std::string_view kCodebookMagic = "ISTACB01";

inline void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic(kCodebookMagic);
  w.u32(static_cast<std::uint32_t>(cb.size()));
  w.u32(static_cast<std::uint32_t>(cb.dim()));
  w.u64(cb.seed());
  w.f64s({cb.centers().data(), static_cast<std::size_t>(cb.centers().size())});
  io::write_file(path, w.bytes());
}

inline Codebook load_codebook(const std::filesystem::path& path) {
  io::ByteReader r = io::read_file(path);
  r.expect_magic(kCodebookMagic);
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint64_t seed = r.u64();
  RowMatrix centers(n, d);
  r.f64s({centers.data(), static_cast<std::size_t>(centers.size())});
  r.expect_end();
  try {
    return Codebook(std::move(centers), seed);
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace ista
