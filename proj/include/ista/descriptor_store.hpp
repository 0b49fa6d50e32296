#pragma once

// Descriptor grids: one H x W map of D-dimensional local descriptors per
// image and resolution, the `.desc` file format and the spatial
// neighborhood used to couple descriptor pairs.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ista/binary_io.hpp"
#include "ista/error.hpp"

namespace ista {

struct GridPosition {
  int y = 0;
  int x = 0;
  friend auto operator<=>(const GridPosition&, const GridPosition&) = default;
};

class DescriptorGrid {
 public:
  DescriptorGrid() = default;

  /// Throws ValidationError unless values.size() == h*w*d and every value is
  /// finite. `resolution` is the pixel size tag (0 when unknown).
  DescriptorGrid(std::string image_id, int resolution, std::uint32_t height,
                 std::uint32_t width, std::uint32_t depth,
                 std::vector<float> values)
      : image_id_(std::move(image_id)),
        resolution_(resolution),
        height_(height),
        width_(width),
        depth_(depth),
        values_(std::move(values)) {
    validate();
  }

  const std::string& image_id() const { return image_id_; }
  int resolution() const { return resolution_; }
  std::uint32_t height() const { return height_; }
  std::uint32_t width() const { return width_; }
  std::uint32_t depth() const { return depth_; }
  std::size_t cells() const { return std::size_t{height_} * width_; }
  std::span<const float> values() const { return values_; }

  /// Row-major cell index of a position.
  std::size_t cell(GridPosition p) const {
    return static_cast<std::size_t>(p.y) * width_ + static_cast<std::size_t>(p.x);
  }
  std::span<const float> descriptor(std::size_t cell) const {
    return {values_.data() + cell * depth_, depth_};
  }
  std::span<const float> descriptor(GridPosition p) const {
    return descriptor(cell(p));
  }
  bool contains(GridPosition p) const {
    return p.y >= 0 && p.x >= 0 && static_cast<std::uint32_t>(p.y) < height_ &&
           static_cast<std::uint32_t>(p.x) < width_;
  }

  void validate() const {
    if (height_ == 0 || width_ == 0 || depth_ == 0) {
      throw ValidationError("grid '" + image_id_ +
                            "': H, W and D must be positive");
    }
    const std::size_t expected = cells() * depth_;
    if (values_.size() != expected) {
      throw ValidationError("grid '" + image_id_ + "': expected " +
                            std::to_string(expected) + " values, got " +
                            std::to_string(values_.size()));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw ValidationError("grid '" + image_id_ +
                              "': non-finite value at index " +
                              std::to_string(i));
      }
    }
  }

  /// Ingest preprocessing: every descriptor scaled to unit l2 norm, zero
  /// descriptors kept as zero. Norms are computed in double; descriptors
  /// already unit-norm to within f32 rounding are left untouched so the
  /// operation is idempotent.
  DescriptorGrid normalized() const {
    constexpr double kUnitNormTolerance = 1e-6;
    DescriptorGrid out = *this;
    for (std::size_t c = 0; c < cells(); ++c) {
      float* v = out.values_.data() + c * depth_;
      double sq = 0.0;
      for (std::uint32_t i = 0; i < depth_; ++i) sq += double{v[i]} * v[i];
      const double norm = std::sqrt(sq);
      if (norm == 0.0 || std::abs(norm - 1.0) <= kUnitNormTolerance) continue;
      for (std::uint32_t i = 0; i < depth_; ++i) {
        v[i] = static_cast<float>(v[i] / norm);
      }
    }
    return out;
  }

  friend bool operator==(const DescriptorGrid&, const DescriptorGrid&) = default;

 private:
  std::string image_id_;
  int resolution_ = 0;
  std::uint32_t height_ = 0;
  std::uint32_t width_ = 0;
  std::uint32_t depth_ = 0;
  std::vector<float> values_;
};

/// All in-bounds positions q with Chebyshev distance(q, p) <= radius in
/// row-major order. The center is excluded unless include_center is set.
inline std::vector<GridPosition> neighborhood(std::uint32_t height,
                                              std::uint32_t width,
                                              GridPosition p, int radius,
                                              bool include_center = false) {
  if (radius < 1) throw ArgumentError("neighborhood radius must be >= 1");
  if (p.y < 0 || p.x < 0 || static_cast<std::uint32_t>(p.y) >= height ||
      static_cast<std::uint32_t>(p.x) >= width) {
    throw ArgumentError("position (" + std::to_string(p.y) + "," +
                        std::to_string(p.x) + ") outside " +
                        std::to_string(height) + "x" + std::to_string(width) +
                        " grid");
  }
  const int h = static_cast<int>(height);
  const int w = static_cast<int>(width);
  std::vector<GridPosition> out;
  for (int y = std::max(0, p.y - radius); y <= std::min(h - 1, p.y + radius);
       ++y) {
    for (int x = std::max(0, p.x - radius); x <= std::min(w - 1, p.x + radius);
         ++x) {
      if (!include_center && y == p.y && x == p.x) continue;
      out.push_back({y, x});
    }
  }
  return out;
}

inline std::vector<GridPosition> neighborhood(const DescriptorGrid& grid,
                                              GridPosition p, int radius,
                                              bool include_center = false) {
  return neighborhood(grid.height(), grid.width(), p, radius, include_center);
}

// ---------------------------------------------------------------------------
// `.desc` files: "ISTA0001", u32 H, u32 W, u32 D, then H*W*D f32 row-major.
// image_id and resolution travel in the name: <image_id>.<pixels>.desc
// ---------------------------------------------------------------------------

inline constexpr std::string_view kGridMagic = "ISTA0001";
inline constexpr std::size_t kGridHeaderBytes = 8 + 3 * 4;

struct GridName {
  std::string image_id;
  int resolution = 0;
};

/// Splits "<image_id>.<pixels>.<ext>"; a stem without a numeric pixel tag
/// becomes the image id with resolution 0.
inline GridName parse_artifact_name(const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  const auto dot = stem.rfind('.');
  if (dot != std::string::npos && dot + 1 < stem.size()) {
    const std::string tag = stem.substr(dot + 1);
    if (tag.find_first_not_of("0123456789") == std::string::npos &&
        tag.size() < 9) {
      return {stem.substr(0, dot), std::stoi(tag)};
    }
  }
  return {stem, 0};
}

inline std::string artifact_name(const std::string& image_id, int resolution,
                                 std::string_view ext) {
  std::string name = image_id;
  if (resolution > 0) name += "." + std::to_string(resolution);
  name += ext;
  return name;
}

inline void save_grid(const DescriptorGrid& grid,
                      const std::filesystem::path& path) {
  grid.validate();
  io::ByteWriter w;
  w.magic(kGridMagic);
  w.u32(grid.height());
  w.u32(grid.width());
  w.u32(grid.depth());
  w.f32s(grid.values());
  io::write_file(path, w.bytes());
}

inline DescriptorGrid load_grid(const std::filesystem::path& path) {
  io::ByteReader r = io::read_file(path);
  r.expect_magic(kGridMagic);
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint64_t count = std::uint64_t{h} * w * d;
  const std::uint64_t expected = kGridHeaderBytes + count * sizeof(float);
  if (r.size() != expected) {
    throw FormatError(path.string() + ": payload length mismatch, expected " +
                      std::to_string(expected) + " bytes, actual " +
                      std::to_string(r.size()) + " bytes");
  }
  std::vector<float> values(count);
  r.f32s(values);
  const GridName name = parse_artifact_name(path);
  try {
    return DescriptorGrid(name.image_id, name.resolution, h, w, d,
                          std::move(values));
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace ista
