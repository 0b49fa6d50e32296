#pragma once

// Planted-structure corpus for end-to-end retrieval checks.
//
// Descriptors live in D = 4 + V: cluster k in {0..3} is anchored on e_k and
// carries one of V variants e_{4+v}. Grids are tiled with 2x2 blocks
// holding clusters [0 1; 2 3]. In each tile the variant of cluster 0 is
// drawn from a balanced shuffle and the variants of clusters 1, 2, 3 follow from it
// through three class-specific permutations. Every image therefore has the
// same per-cluster variant histogram; only which variants sit next to each
// other differs. Shuffling cell positions destroys exactly that.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "ista/descriptor_store.hpp"
#include "ista/oracle.hpp"
#include "ista/retrieval.hpp"
#include "ista/rng.hpp"

namespace ista::test {

using Perm = std::vector<int>;

struct SyntheticOptions {
  int classes = 20;
  int per_class = 10;
  int variants = 8;
  std::uint32_t tiles = 8;  // per side; grids are 2*tiles square
  double anchor = 3.0;
  double noise = 0.0;
  bool shuffle_positions = false;
  int resolution = 512;
  int fit_per_class = 20;  // training and reduction corpora
};

struct ClassPattern {
  std::array<Perm, 3> couplings;  // variant of cluster 0 -> clusters 1, 2, 3
};

inline Perm random_perm(Rng& rng, int n) {
  Perm p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = p.size() - 1; i > 0; --i) std::swap(p[i], p[uniform_index(rng, i + 1)]);
  return p;
}

/// Within each coupling slot the classes use distinct permutations.
inline std::vector<ClassPattern> make_patterns(int classes, int variants, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ClassPattern> out(static_cast<std::size_t>(classes));
  for (std::size_t slot = 0; slot < 3; ++slot) {
    std::set<Perm> used;
    for (auto& c : out) {
      do c.couplings[slot] = random_perm(rng, variants);
      while (!used.insert(c.couplings[slot]).second);
    }
  }
  return out;
}

inline DescriptorGrid make_image(const ClassPattern& pattern, const std::string& id,
                                 const SyntheticOptions& opt, Rng& rng) {
  const auto d = static_cast<std::uint32_t>(4 + opt.variants);
  const std::uint32_t side = 2 * opt.tiles;
  std::vector<float> values(std::size_t{side} * side * d);
  auto put = [&](std::uint32_t y, std::uint32_t x, int cluster, int variant) {
    float* v = values.data() + (std::size_t{y} * side + x) * d;
    for (std::uint32_t i = 0; i < d; ++i) {
      v[i] = opt.noise > 0.0 ? static_cast<float>(opt.noise * oracle::gaussian(rng)) : 0.0f;
    }
    v[cluster] += static_cast<float>(opt.anchor);
    v[4 + variant] += 1.0f;
  };
  // Balanced base variants: every image has the same per-cluster variant
  // histogram, so only co-occurrence separates the classes.
  const std::size_t n_tiles = std::size_t{opt.tiles} * opt.tiles;
  std::vector<int> bases(n_tiles);
  for (std::size_t t = 0; t < n_tiles; ++t) bases[t] = static_cast<int>(t % static_cast<std::size_t>(opt.variants));
  for (std::size_t i = n_tiles - 1; i > 0; --i) std::swap(bases[i], bases[uniform_index(rng, i + 1)]);
  for (std::uint32_t ty = 0; ty < opt.tiles; ++ty) {
    for (std::uint32_t tx = 0; tx < opt.tiles; ++tx) {
      const auto base = static_cast<std::size_t>(bases[std::size_t{ty} * opt.tiles + tx]);
      put(2 * ty, 2 * tx, 0, static_cast<int>(base));
      put(2 * ty, 2 * tx + 1, 1, pattern.couplings[0][base]);
      put(2 * ty + 1, 2 * tx, 2, pattern.couplings[1][base]);
      put(2 * ty + 1, 2 * tx + 1, 3, pattern.couplings[2][base]);
    }
  }
  if (opt.shuffle_positions) {
    const std::size_t cells = std::size_t{side} * side;
    for (std::size_t i = cells - 1; i > 0; --i) {
      const std::size_t j = uniform_index(rng, i + 1);
      std::swap_ranges(values.begin() + static_cast<std::ptrdiff_t>(i * d),
                       values.begin() + static_cast<std::ptrdiff_t>((i + 1) * d),
                       values.begin() + static_cast<std::ptrdiff_t>(j * d));
    }
  }
  return DescriptorGrid(id, opt.resolution, side, side, d, std::move(values)).normalized();
}

inline std::string image_id(const std::string& prefix, int cls, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02d_%02d", prefix.c_str(), cls, i);
  return buf;
}

/// Writes one `.desc` per image into `dir`; returns the ids grouped by class.
inline std::vector<std::vector<std::string>> write_corpus(
    const std::filesystem::path& dir, const std::string& prefix,
    const std::vector<ClassPattern>& patterns, const SyntheticOptions& opt,
    std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  std::vector<std::vector<std::string>> ids(patterns.size());
  for (int c = 0; c < static_cast<int>(patterns.size()); ++c) {
    for (int i = 0; i < opt.per_class; ++i) {
      const std::string id = image_id(prefix, c, i);
      const auto grid = make_image(patterns[static_cast<std::size_t>(c)], id, opt, rng);
      save_grid(grid, dir / artifact_name(id, opt.resolution, ".desc"));
      ids[static_cast<std::size_t>(c)].push_back(id);
    }
  }
  return ids;
}

/// Every image queries; its class mates are the positives.
inline GroundTruth class_ground_truth(const std::vector<std::vector<std::string>>& ids) {
  GroundTruth gt;
  for (const auto& cls : ids) {
    for (const auto& q : cls) {
      QueryTruth t{q, {}, {}};
      for (const auto& p : cls) {
        if (p != q) t.positives.insert(p);
      }
      gt.push_back(std::move(t));
    }
  }
  return gt;
}

struct SyntheticSetup {
  std::filesystem::path root;
  std::filesystem::path config;
};

/// Training, reduction-fitting and database corpora plus a config file
/// under `root`. The three corpora share the class patterns but not the
/// images.
inline SyntheticSetup write_synthetic_setup(const std::filesystem::path& root,
                                            SyntheticOptions opt, std::uint64_t seed = 7) {
  const auto patterns = make_patterns(opt.classes, opt.variants, seed);
  SyntheticOptions fit_opt = opt;
  fit_opt.per_class = opt.fit_per_class;
  write_corpus(root / "train", "t", patterns, fit_opt, seed + 1);
  write_corpus(root / "fit", "f", patterns, fit_opt, seed + 2);
  const auto ids = write_corpus(root / "db", "q", patterns, opt, seed + 3);
  {
    std::ofstream gt(root / "gt.txt");
    write_ground_truth(gt, class_ground_truth(ids));
  }
  std::ofstream cfg(root / "synthetic.cfg");
  cfg << "# planted-coupling corpus\n"
         "codebook_size = 4\n"
         "variance_target = 1.0\n"
         "min_pair_count = 100\n"
         "keep_ratio = 0.4\n"
         "final_dim = 24\n"
         "whiten = true\n"
         "seed = 11\n"
         "training_dir = train\n"
         "reduction_dir = fit\n"
         "database_dir = db\n"
         "ground_truth = gt.txt\n"
         "work_dir = work\n";
  return {root, root / "synthetic.cfg"};
}

}  // namespace ista::test
