#pragma once

// Spatial tensor aggregation with centering and eigenspace projection.
//
// For every ordered cluster pair (k, l) the training corpus gives a mean
// correlation matrix M_kl = E[x_r x_u^T] over spatially coupled descriptors
// x_r in cluster k, x_u in cluster l. Its truncated SVD M_kl = U L V^T
// defines the block of an image signature:
//
//   S_kl = sum_{pairs} (U^T x_r)(V^T x_u)^T - n_kl * L
//
// which is U^T (sum_{pairs} x_r x_u^T - n_kl M_kl) V restricted to the
// retained components.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "ista/binary_io.hpp"
#include "ista/codebook.hpp"
#include "ista/descriptor_store.hpp"
#include "ista/error.hpp"
#include "ista/linalg.hpp"
#include "ista/parallel.hpp"

namespace ista {

/// Offset and length of each ordered pair's segment in a concatenated
/// vector, pairs in (k, l) row-major order. Pairs of length 0 are absent.
struct PairSegments {
  int n_clusters = 0;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> sizes;
  std::size_t total = 0;

  static PairSegments from_sizes(int n_clusters, std::vector<std::size_t> sizes) {
    PairSegments s{n_clusters, {}, std::move(sizes), 0};
    s.offsets.resize(s.sizes.size());
    for (std::size_t p = 0; p < s.sizes.size(); ++p) {
      s.offsets[p] = s.total;
      s.total += s.sizes[p];
    }
    return s;
  }
  std::size_t pairs() const { return sizes.size(); }
  friend bool operator==(const PairSegments&, const PairSegments&) = default;
};

/// Per-pair ranks of a raw signature. Block (k, l) is an r x r matrix stored
/// row-major; blocks are concatenated in (k, l) row-major order.
class BlockLayout {
 public:
  BlockLayout() = default;
  BlockLayout(int n_clusters, std::vector<int> ranks)
      : n_clusters_(n_clusters), ranks_(std::move(ranks)) {
    if (n_clusters_ < 1 ||
        ranks_.size() != static_cast<std::size_t>(n_clusters_) * n_clusters_) {
      throw ArgumentError("block layout needs N*N ranks");
    }
    offsets_.resize(ranks_.size());
    for (std::size_t p = 0; p < ranks_.size(); ++p) {
      if (ranks_[p] < 0) throw ArgumentError("negative block rank");
      offsets_[p] = total_;
      total_ += block_size(p);
    }
  }

  int n_clusters() const { return n_clusters_; }
  std::size_t pairs() const { return ranks_.size(); }
  std::size_t pair_index(int k, int l) const {
    return static_cast<std::size_t>(k) * n_clusters_ + static_cast<std::size_t>(l);
  }
  int rank(std::size_t p) const { return ranks_[p]; }
  const std::vector<int>& ranks() const { return ranks_; }
  std::size_t block_size(std::size_t p) const {
    return static_cast<std::size_t>(ranks_[p]) * ranks_[p];
  }
  std::size_t offset(std::size_t p) const { return offsets_[p]; }
  std::size_t total_dim() const { return total_; }
  bool is_diagonal(std::size_t p) const {
    return p / n_clusters_ == p % n_clusters_;
  }

  PairSegments segments() const {
    std::vector<std::size_t> sizes(ranks_.size());
    for (std::size_t p = 0; p < sizes.size(); ++p) sizes[p] = block_size(p);
    return PairSegments::from_sizes(n_clusters_, std::move(sizes));
  }

  friend bool operator==(const BlockLayout& a, const BlockLayout& b) {
    return a.n_clusters_ == b.n_clusters_ && a.ranks_ == b.ranks_;
  }

 private:
  int n_clusters_ = 0;
  std::vector<int> ranks_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

struct RawSignature {
  std::string image_id;
  int resolution = 0;
  BlockLayout layout;
  Vector values;

  using BlockMap = Eigen::Map<const RowMatrix>;
  using MutableBlockMap = Eigen::Map<RowMatrix>;

  BlockMap block(std::size_t p) const {
    const int r = layout.rank(p);
    return BlockMap(values.data() + layout.offset(p), r, r);
  }
  MutableBlockMap block(std::size_t p) {
    const int r = layout.rank(p);
    return MutableBlockMap(values.data() + layout.offset(p), r, r);
  }
  BlockMap block(int k, int l) const { return block(layout.pair_index(k, l)); }
};

// ---------------------------------------------------------------------------
// Pair statistics
// ---------------------------------------------------------------------------

/// Running sums of x_r x_u^T and pair counts per ordered cluster pair.
/// A pair that has never been observed keeps an empty (logically zero) sum.
struct PairStatistics {
  int n_clusters = 0;
  int dim = 0;
  std::vector<Matrix> sums;
  std::vector<std::uint64_t> counts;

  static PairStatistics zeros(int n_clusters, int dim) {
    const auto pairs = static_cast<std::size_t>(n_clusters) * n_clusters;
    return {n_clusters, dim, std::vector<Matrix>(pairs),
            std::vector<std::uint64_t>(pairs, 0)};
  }
  std::size_t pair_index(int k, int l) const {
    return static_cast<std::size_t>(k) * n_clusters + static_cast<std::size_t>(l);
  }
  std::size_t pairs() const { return counts.size(); }

  /// Sum matrix of a pair, materialized as zeros when never observed.
  Matrix sum(std::size_t p) const {
    return sums[p].size() ? sums[p] : Matrix::Zero(dim, dim);
  }
  Matrix mean(std::size_t p) const {
    if (counts[p] == 0) return Matrix::Zero(dim, dim);
    return sums[p] / static_cast<double>(counts[p]);
  }

  void add_block(std::size_t p, const Matrix& s, std::uint64_t n) {
    if (n == 0) return;
    if (sums[p].size() == 0) {
      sums[p] = s;
    } else {
      sums[p] += s;
    }
    counts[p] += n;
  }

  /// Entrywise addition of another statistics object.
  void merge(const PairStatistics& other) {
    if (other.n_clusters != n_clusters || other.dim != dim) {
      throw ArgumentError("cannot merge pair statistics of different shape");
    }
    for (std::size_t p = 0; p < pairs(); ++p) {
      if (other.counts[p]) add_block(p, other.sums[p], other.counts[p]);
    }
  }
};

namespace detail {

/// Cell pairs (r, u) with u in the neighborhood of r, grouped by the ordered
/// cluster pair of their labels. Visits cells and neighbors in row-major
/// order, matching neighborhood().
inline std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>>
coupled_pairs_by_cluster(const DescriptorGrid& grid,
                         const std::vector<int>& labels, int n_clusters,
                         int radius, bool include_center = false) {
  if (radius < 1) throw ArgumentError("neighborhood radius must be >= 1");
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> by_pair(
      static_cast<std::size_t>(n_clusters) * n_clusters);
  const int h = static_cast<int>(grid.height());
  const int w = static_cast<int>(grid.width());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto r = static_cast<std::uint32_t>(y * w + x);
      for (int v = std::max(0, y - radius); v <= std::min(h - 1, y + radius); ++v) {
        for (int u = std::max(0, x - radius); u <= std::min(w - 1, x + radius); ++u) {
          if (!include_center && v == y && u == x) continue;
          const auto c = static_cast<std::uint32_t>(v * w + u);
          by_pair[static_cast<std::size_t>(labels[r]) * n_clusters +
                  static_cast<std::size_t>(labels[c])]
              .emplace_back(r, c);
        }
      }
    }
  }
  return by_pair;
}

/// Columns are the descriptors of `cells`, widened to double.
inline Matrix gather(const DescriptorGrid& grid,
                     const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
                     bool second) {
  const auto d = static_cast<Eigen::Index>(grid.depth());
  Matrix m(d, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const auto desc = grid.descriptor(second ? pairs[j].second : pairs[j].first);
    for (Eigen::Index i = 0; i < d; ++i) {
      m(i, static_cast<Eigen::Index>(j)) = desc[static_cast<std::size_t>(i)];
    }
  }
  return m;
}

inline void check_depth(const DescriptorGrid& grid, const Codebook& cb) {
  if (static_cast<int>(grid.depth()) != cb.dim()) {
    throw ArgumentError("grid '" + grid.image_id() + "' has depth " +
                        std::to_string(grid.depth()) +
                        " but the codebook dimension is " +
                        std::to_string(cb.dim()));
  }
}

}  // namespace detail

/// Adds the coupled pairs of one grid to `stats`.
inline void accumulate_grid(PairStatistics& stats, const DescriptorGrid& grid,
                            const Codebook& cb, int radius) {
  detail::check_depth(grid, cb);
  const auto by_pair = detail::coupled_pairs_by_cluster(
      grid, cb.assign_grid(grid), cb.size(), radius);
  for (std::size_t p = 0; p < by_pair.size(); ++p) {
    if (by_pair[p].empty()) continue;
    const Matrix a = detail::gather(grid, by_pair[p], false);
    const Matrix b = detail::gather(grid, by_pair[p], true);
    stats.add_block(p, a * b.transpose(), by_pair[p].size());
  }
}

/// Pair statistics over a corpus. Grids are folded in fixed-size chunks
/// merged in input order, so the result does not depend on `threads`.
inline PairStatistics accumulate_pair_stats(std::span<const DescriptorGrid> grids,
                                            const Codebook& cb, int radius,
                                            unsigned threads = 1) {
  if (grids.empty()) throw ArgumentError("accumulate_pair_stats: no grids");
  for (const auto& g : grids) detail::check_depth(g, cb);
  PairStatistics acc = PairStatistics::zeros(cb.size(), cb.dim());
  constexpr std::size_t kGridsPerChunk = 8;
  chunked_reduce(
      grids.size(), kGridsPerChunk, threads, acc,
      [&](std::size_t begin, std::size_t end) {
        PairStatistics part = PairStatistics::zeros(cb.size(), cb.dim());
        for (std::size_t i = begin; i < end; ++i) {
          accumulate_grid(part, grids[i], cb, radius);
        }
        return part;
      },
      [](PairStatistics& a, PairStatistics&& p) { a.merge(p); });
  return acc;
}

// ---------------------------------------------------------------------------
// Pair basis
// ---------------------------------------------------------------------------

struct PairFactors {
  std::uint64_t pair_count = 0;
  Vector singular_values;  // descending, length = rank
  Matrix u;                // D x rank
  Matrix v;                // D x rank
  int rank() const { return static_cast<int>(singular_values.size()); }
};

struct PairBasis {
  int n_clusters = 0;
  int dim = 0;
  std::vector<PairFactors> pairs;

  BlockLayout layout() const {
    std::vector<int> ranks(pairs.size());
    for (std::size_t p = 0; p < pairs.size(); ++p) ranks[p] = pairs[p].rank();
    return BlockLayout(n_clusters, std::move(ranks));
  }
  const PairFactors& at(int k, int l) const {
    return pairs[static_cast<std::size_t>(k) * n_clusters + static_cast<std::size_t>(l)];
  }
};

struct BasisOptions {
  double variance_target = 0.8;
  /// Pairs observed fewer times than this get rank 0.
  std::uint64_t min_pair_count = 100;
  unsigned threads = 1;
};

/// Smallest r whose leading squared singular values reach `target` of the
/// total energy. Zero energy gives rank 0.
inline int rank_for_energy(const Vector& singular_values, double target) {
  const double total = singular_values.squaredNorm();
  if (!(total > 0.0)) return 0;
  // Guards against the cumulative ratio landing one ulp short of the target.
  constexpr double kSlack = 1e-12;
  double cumulative = 0.0;
  for (Eigen::Index i = 0; i < singular_values.size(); ++i) {
    cumulative += singular_values(i) * singular_values(i);
    if (cumulative / total >= target - kSlack) return static_cast<int>(i + 1);
  }
  return static_cast<int>(singular_values.size());
}

inline PairFactors factor_mean_tensor(const Matrix& mean, std::uint64_t count,
                                      double variance_target) {
  Eigen::BDCSVD<Matrix> svd(mean, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  const int r = rank_for_energy(sigma, variance_target);
  PairFactors f;
  f.pair_count = count;
  f.singular_values = sigma.head(r);
  f.u = svd.matrixU().leftCols(r);
  f.v = svd.matrixV().leftCols(r);
  for (int c = 0; c < r; ++c) canonical_sign(f.u.col(c), f.v.col(c));
  return f;
}

inline PairBasis compute_pair_basis(const PairStatistics& stats,
                                    const BasisOptions& opt = {}) {
  if (!(opt.variance_target > 0.0 && opt.variance_target <= 1.0)) {
    throw ArgumentError("variance_target must lie in (0, 1]");
  }
  PairBasis basis{stats.n_clusters, stats.dim, std::vector<PairFactors>(stats.pairs())};
  parallel_for(stats.pairs(), opt.threads, [&](std::size_t p) {
    const std::uint64_t n = stats.counts[p];
    if (n == 0 || n < opt.min_pair_count) {
      basis.pairs[p].pair_count = n;
      return;
    }
    basis.pairs[p] = factor_mean_tensor(stats.mean(p), n, opt.variance_target);
  });
  return basis;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

inline RawSignature encode_raw(const DescriptorGrid& grid, const Codebook& cb,
                               const PairBasis& basis, int radius) {
  detail::check_depth(grid, cb);
  if (basis.n_clusters != cb.size() || basis.dim != cb.dim()) {
    throw ArgumentError("pair model (N=" + std::to_string(basis.n_clusters) +
                        ", D=" + std::to_string(basis.dim) +
                        ") does not match codebook (N=" + std::to_string(cb.size()) +
                        ", D=" + std::to_string(cb.dim()) + ")");
  }
  RawSignature sig{grid.image_id(), grid.resolution(), basis.layout(), {}};
  sig.values = Vector::Zero(static_cast<Eigen::Index>(sig.layout.total_dim()));
  const auto by_pair = detail::coupled_pairs_by_cluster(
      grid, cb.assign_grid(grid), cb.size(), radius);
  for (std::size_t p = 0; p < by_pair.size(); ++p) {
    const PairFactors& f = basis.pairs[p];
    if (f.rank() == 0 || by_pair[p].empty()) continue;
    const Matrix left = f.u.transpose() * detail::gather(grid, by_pair[p], false);
    const Matrix right = f.v.transpose() * detail::gather(grid, by_pair[p], true);
    RowMatrix block = left * right.transpose();
    block.diagonal() -= static_cast<double>(by_pair[p].size()) * f.singular_values;
    sig.block(p) = block;
  }
  return sig;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

// `.pairstats`: "ISTAPS01", u32 N, u32 D, per pair u64 count then, when the
// count is positive, D*D f64 row-major sum.
inline constexpr std::string_view kPairStatsMagic = "ISTAPS01";
// `.pairmodel`: "ISTAPM01", u32 N, u32 D, per pair u64 count, u32 rank,
// rank f64 singular values, rank*D f64 U columns, rank*D f64 V columns.
inline constexpr std::string_view kPairModelMagic = "ISTAPM01";
// `.raw`: "ISTARW01", u32 N, N*N u32 ranks, u32 total dim, f64 values.
inline constexpr std::string_view kRawSignatureMagic = "ISTARW01";

inline void save_pair_stats(const PairStatistics& s, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic(kPairStatsMagic);
  w.u32(static_cast<std::uint32_t>(s.n_clusters));
  w.u32(static_cast<std::uint32_t>(s.dim));
  for (std::size_t p = 0; p < s.pairs(); ++p) {
    w.u64(s.counts[p]);
    if (s.counts[p] == 0) continue;
    const RowMatrix m = s.sum(p);
    w.f64s({m.data(), static_cast<std::size_t>(m.size())});
  }
  io::write_file(path, w.bytes());
}

inline PairStatistics load_pair_stats(const std::filesystem::path& path) {
  io::ByteReader r = io::read_file(path);
  r.expect_magic(kPairStatsMagic);
  const int n = static_cast<int>(r.u32());
  const int d = static_cast<int>(r.u32());
  PairStatistics s = PairStatistics::zeros(n, d);
  for (std::size_t p = 0; p < s.pairs(); ++p) {
    s.counts[p] = r.u64();
    if (s.counts[p] == 0) continue;
    RowMatrix m(d, d);
    r.f64s({m.data(), static_cast<std::size_t>(m.size())});
    s.sums[p] = m;
  }
  r.expect_end();
  return s;
}

inline void save_pair_model(const PairBasis& b, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic(kPairModelMagic);
  w.u32(static_cast<std::uint32_t>(b.n_clusters));
  w.u32(static_cast<std::uint32_t>(b.dim));
  for (const PairFactors& f : b.pairs) {
    w.u64(f.pair_count);
    w.u32(static_cast<std::uint32_t>(f.rank()));
    w.f64s({f.singular_values.data(), static_cast<std::size_t>(f.rank())});
    // Column-major storage: each column is contiguous.
    w.f64s({f.u.data(), static_cast<std::size_t>(f.u.size())});
    w.f64s({f.v.data(), static_cast<std::size_t>(f.v.size())});
  }
  io::write_file(path, w.bytes());
}

inline PairBasis load_pair_model(const std::filesystem::path& path) {
  io::ByteReader r = io::read_file(path);
  r.expect_magic(kPairModelMagic);
  PairBasis b;
  b.n_clusters = static_cast<int>(r.u32());
  b.dim = static_cast<int>(r.u32());
  b.pairs.resize(static_cast<std::size_t>(b.n_clusters) * b.n_clusters);
  for (PairFactors& f : b.pairs) {
    f.pair_count = r.u64();
    const auto rank = static_cast<Eigen::Index>(r.u32());
    if (rank > b.dim) throw FormatError(path.string() + ": rank exceeds dimension");
    f.singular_values.resize(rank);
    f.u.resize(b.dim, rank);
    f.v.resize(b.dim, rank);
    r.f64s({f.singular_values.data(), static_cast<std::size_t>(rank)});
    r.f64s({f.u.data(), static_cast<std::size_t>(f.u.size())});
    r.f64s({f.v.data(), static_cast<std::size_t>(f.v.size())});
  }
  r.expect_end();
  return b;
}

inline void save_raw_signature(const RawSignature& s, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic(kRawSignatureMagic);
  w.u32(static_cast<std::uint32_t>(s.layout.n_clusters()));
  for (int r : s.layout.ranks()) w.u32(static_cast<std::uint32_t>(r));
  w.u32(static_cast<std::uint32_t>(s.values.size()));
  w.f64s({s.values.data(), static_cast<std::size_t>(s.values.size())});
  io::write_file(path, w.bytes());
}

inline RawSignature load_raw_signature(const std::filesystem::path& path) {
  io::ByteReader r = io::read_file(path);
  r.expect_magic(kRawSignatureMagic);
  const int n = static_cast<int>(r.u32());
  std::vector<int> ranks(static_cast<std::size_t>(n) * n);
  for (int& k : ranks) k = static_cast<int>(r.u32());
  const GridName name = parse_artifact_name(path);
  RawSignature s{name.image_id, name.resolution, BlockLayout(n, std::move(ranks)), {}};
  const std::uint32_t dim = r.u32();
  if (dim != s.layout.total_dim()) {
    throw FormatError(path.string() + ": dimension does not match block layout");
  }
  s.values.resize(dim);
  r.f64s({s.values.data(), dim});
  r.expect_end();
  return s;
}

}  // namespace ista
