#pragma once

// Two-stage, inner-product preserving dimension reduction.
//
// Both stages learn a projection from the Gram matrix G = S S^T of m fit
// samples (rows of S). With G = V L V^T, the map s -> L^{-1/2} V^T S s sends
// fit sample i to L^{1/2} V^T e_i, so projected fit samples reproduce G
// exactly on the retained components. The block stage does this per
// cluster pair and concatenates (a block-diagonal projection); it never
// whitens. The full stage runs on the concatenated block outputs and may
// whiten, i.e. use L^{-1} instead of L^{-1/2} so every retained component
// carries the same second moment over the fit samples.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ista/binary_io.hpp"
#include "ista/error.hpp"
#include "ista/linalg.hpp"
#include "ista/normalizer.hpp"
#include "ista/parallel.hpp"
#include "ista/sta_encoder.hpp"

namespace ista {

/// Eigenvalues below this fraction of the largest are dropped before
/// inversion.
inline constexpr double kRelativeEigenFloor = 1e-10;

struct GramProjection {
  RowMatrix matrix;  // out x in
  Vector eigenvalues;
  bool capped = false;  // fewer components than requested
};

/// Projection learned from the rows of `samples`, keeping at most `keep`
/// components.
inline GramProjection fit_gram_projection(const RowMatrix& samples, std::size_t keep,
                                          bool whiten) {
  const Eigen::Index m = samples.rows();
  GramProjection out;
  if (m == 0 || samples.cols() == 0 || keep == 0) {
    out.matrix.resize(0, samples.cols());
    out.capped = keep > 0;
    return out;
  }
  const Matrix gram = samples * samples.transpose();
  SortedEigen eig = sorted_symmetric_eigen(gram);
  const double top = eig.values(0);
  Eigen::Index retained = 0;
  if (top > 0.0) {
    while (retained < m && eig.values(retained) > kRelativeEigenFloor * top) ++retained;
  }
  const auto d = static_cast<Eigen::Index>(std::min<std::size_t>(keep, static_cast<std::size_t>(retained)));
  out.capped = static_cast<std::size_t>(d) < keep;
  out.eigenvalues = eig.values.head(d);

  Matrix basis = eig.vectors.leftCols(d);  // m x d
  for (Eigen::Index c = 0; c < d; ++c) {
    auto col = basis.col(c);
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < 0) col = -col;
    const double lambda = out.eigenvalues(c);
    // Whitened components get unit mean square over the fit samples.
    col *= whiten ? std::sqrt(static_cast<double>(m)) / lambda : 1.0 / std::sqrt(lambda);
  }
  out.matrix = basis.transpose() * samples;
  return out;
}

// ---------------------------------------------------------------------------
// Block stage
// ---------------------------------------------------------------------------

class BlockProjection {
 public:
  BlockProjection() = default;
  BlockProjection(BlockLayout input, std::vector<RowMatrix> blocks)
      : input_(std::move(input)), blocks_(std::move(blocks)) {
    if (blocks_.size() != input_.pairs()) {
      throw ArgumentError("block projection needs one matrix per ordered pair");
    }
    std::vector<std::size_t> sizes(blocks_.size());
    for (std::size_t p = 0; p < blocks_.size(); ++p) {
      const auto in = static_cast<Eigen::Index>(input_.block_size(p));
      if (blocks_[p].rows() > 0 && blocks_[p].cols() != in) {
        throw ArgumentError("block projection input size does not match layout");
      }
      if (blocks_[p].rows() == 0) blocks_[p].resize(0, in);
      sizes[p] = static_cast<std::size_t>(blocks_[p].rows());
    }
    output_ = PairSegments::from_sizes(input_.n_clusters(), std::move(sizes));
  }

  const BlockLayout& input_layout() const { return input_; }
  const PairSegments& output_segments() const { return output_; }
  const RowMatrix& block(std::size_t p) const { return blocks_[p]; }
  std::size_t output_dim() const { return output_.total; }
  std::size_t input_dim() const { return input_.total_dim(); }

  /// Number of pairs that got fewer components than requested.
  std::size_t capped_pairs = 0;

 private:
  BlockLayout input_;
  std::vector<RowMatrix> blocks_;
  PairSegments output_;
};

/// Output size of a block of the given input size.
inline std::size_t kept_components(double keep_ratio, std::size_t input_dim) {
  // Round away float noise before ceil: 0.4 * 25 must give 10, not 11.
  const double raw = keep_ratio * static_cast<double>(input_dim);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

inline BlockProjection fit_block_reduction(std::span<const RawSignature> samples,
                                           double keep_ratio, unsigned threads = 1) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) {
    throw ArgumentError("keep_ratio must lie in (0, 1]");
  }
  if (samples.size() < 2) throw ArgumentError("block reduction needs >= 2 samples");
  const BlockLayout& layout = samples.front().layout;
  for (const auto& s : samples) {
    if (!(s.layout == layout)) {
      throw ArgumentError("sample '" + s.image_id + "' has a different block layout");
    }
  }
  const auto m = static_cast<Eigen::Index>(samples.size());
  std::vector<RowMatrix> blocks(layout.pairs());
  std::vector<char> capped(layout.pairs(), 0);
  parallel_for(layout.pairs(), threads, [&](std::size_t p) {
    const auto in = static_cast<Eigen::Index>(layout.block_size(p));
    if (in == 0) return;
    RowMatrix stacked(m, in);
    for (Eigen::Index i = 0; i < m; ++i) {
      stacked.row(i) = samples[static_cast<std::size_t>(i)].values.segment(
          static_cast<Eigen::Index>(layout.offset(p)), in);
    }
    GramProjection g = fit_gram_projection(
        stacked, kept_components(keep_ratio, static_cast<std::size_t>(in)), false);
    blocks[p] = std::move(g.matrix);
    capped[p] = g.capped;
  });
  BlockProjection proj(layout, std::move(blocks));
  proj.capped_pairs = static_cast<std::size_t>(std::count(capped.begin(), capped.end(), 1));
  return proj;
}

inline Vector apply_block_reduction(const BlockProjection& proj, const Vector& raw) {
  const BlockLayout& in = proj.input_layout();
  if (static_cast<std::size_t>(raw.size()) != in.total_dim()) {
    throw ArgumentError("signature dimension " + std::to_string(raw.size()) +
                        " does not match block projection input " +
                        std::to_string(in.total_dim()));
  }
  const PairSegments& out_seg = proj.output_segments();
  Vector out(static_cast<Eigen::Index>(out_seg.total));
  for (std::size_t p = 0; p < in.pairs(); ++p) {
    if (out_seg.sizes[p] == 0) continue;
    out.segment(static_cast<Eigen::Index>(out_seg.offsets[p]),
                static_cast<Eigen::Index>(out_seg.sizes[p])) =
        proj.block(p) * raw.segment(static_cast<Eigen::Index>(in.offset(p)),
                                    static_cast<Eigen::Index>(in.block_size(p)));
  }
  return out;
}

inline Vector apply_block_reduction(const BlockProjection& proj, const RawSignature& sig) {
  if (!(sig.layout == proj.input_layout())) {
    throw ArgumentError("signature '" + sig.image_id +
                        "' layout does not match the block projection");
  }
  return apply_block_reduction(proj, sig.values);
}

// ---------------------------------------------------------------------------
// Full stage
// ---------------------------------------------------------------------------

struct FullProjection {
  RowMatrix matrix;  // target x input
  bool whiten = false;
  Vector eigenvalues;  // empty after loading from file
  bool capped = false;

  std::size_t input_dim() const { return static_cast<std::size_t>(matrix.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(matrix.rows()); }
};

inline FullProjection fit_full_reduction(std::span<const Vector> samples, int target_dim,
                                         bool whiten) {
  if (target_dim <= 0) throw ArgumentError("target_dim must be positive");
  if (samples.empty()) throw ArgumentError("full reduction needs samples");
  const auto dim = samples.front().size();
  RowMatrix stacked(static_cast<Eigen::Index>(samples.size()), dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != dim) throw ArgumentError("samples differ in dimension");
    stacked.row(static_cast<Eigen::Index>(i)) = samples[i].transpose();
  }
  GramProjection g = fit_gram_projection(stacked, static_cast<std::size_t>(target_dim), whiten);
  return {std::move(g.matrix), whiten, std::move(g.eigenvalues), g.capped};
}

inline Vector apply_full_reduction(const FullProjection& proj, const Vector& v,
                                   bool renorm) {
  if (static_cast<std::size_t>(v.size()) != proj.input_dim()) {
    throw ArgumentError("vector dimension " + std::to_string(v.size()) +
                        " does not match full projection input " +
                        std::to_string(proj.input_dim()));
  }
  Vector out = proj.matrix * v;
  return renorm ? l2_normalize(out) : out;
}

// ---------------------------------------------------------------------------
// `.redmodel`: "ISTARD01", u32 pair record count, then per ordered pair u32
// in-dim, u32 out-dim, f64 matrix row-major; then the full section u32
// in-dim, u32 out-dim, u8 whiten, f64 matrix row-major. A full section with
// zero dims means the full stage has not been fitted yet.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kReductionMagic = "ISTARD01";

struct ReductionModel {
  BlockProjection block;
  std::optional<FullProjection> full;
};

inline void save_reduction_model(const ReductionModel& model,
                                 const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic(kReductionMagic);
  const BlockLayout& layout = model.block.input_layout();
  w.u32(static_cast<std::uint32_t>(layout.pairs()));
  for (std::size_t p = 0; p < layout.pairs(); ++p) {
    const RowMatrix& m = model.block.block(p);
    w.u32(static_cast<std::uint32_t>(layout.block_size(p)));
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.f64s({m.data(), static_cast<std::size_t>(m.size())});
  }
  if (model.full) {
    w.u32(static_cast<std::uint32_t>(model.full->input_dim()));
    w.u32(static_cast<std::uint32_t>(model.full->output_dim()));
    w.u8(model.full->whiten ? 1 : 0);
    w.f64s({model.full->matrix.data(), static_cast<std::size_t>(model.full->matrix.size())});
  } else {
    w.u32(0);
    w.u32(0);
    w.u8(0);
  }
  io::write_file(path, w.bytes());
}

inline ReductionModel load_reduction_model(const std::filesystem::path& path) {
  io::ByteReader r = io::read_file(path);
  r.expect_magic(kReductionMagic);
  const std::uint32_t pairs = r.u32();
  const auto n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(pairs))));
  if (n < 1 || static_cast<std::uint32_t>(n * n) != pairs) {
    throw FormatError(path.string() + ": pair record count is not a square");
  }
  std::vector<int> ranks(pairs);
  std::vector<RowMatrix> blocks(pairs);
  for (std::uint32_t p = 0; p < pairs; ++p) {
    const std::uint32_t in = r.u32();
    const std::uint32_t out = r.u32();
    const auto rank = static_cast<int>(std::lround(std::sqrt(static_cast<double>(in))));
    if (static_cast<std::uint32_t>(rank * rank) != in) {
      throw FormatError(path.string() + ": block input size is not a square");
    }
    ranks[p] = rank;
    blocks[p].resize(out, in);
    r.f64s({blocks[p].data(), static_cast<std::size_t>(blocks[p].size())});
  }
  ReductionModel model{BlockProjection(BlockLayout(n, std::move(ranks)), std::move(blocks)),
                       std::nullopt};
  const std::uint32_t in = r.u32();
  const std::uint32_t out = r.u32();
  const bool whiten = r.u8() != 0;
  if (in != 0 || out != 0) {
    FullProjection full;
    full.whiten = whiten;
    full.matrix.resize(out, in);
    r.f64s({full.matrix.data(), static_cast<std::size_t>(full.matrix.size())});
    model.full = std::move(full);
  }
  r.expect_end();
  return model;
}

}  // namespace ista
