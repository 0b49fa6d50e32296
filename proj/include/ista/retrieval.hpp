#pragma once

// Final signatures, ranking by inner product, average precision with junk
// removal, and the per-cluster-pair similarity breakdown.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ista/binary_io.hpp"
#include "ista/descriptor_store.hpp"
#include "ista/error.hpp"
#include "ista/linalg.hpp"
#include "ista/normalizer.hpp"
#include "ista/sta_encoder.hpp"

namespace ista {

struct Signature {
  std::string image_id;
  Vector vector;
  std::vector<int> resolutions;
};

/// Entrywise sum of one image's per-resolution signatures, l2-normalized.
inline Signature combine_resolutions(std::span<const Signature> sigs) {
  if (sigs.empty()) throw ArgumentError("combine_resolutions: no signatures");
  Signature out{sigs.front().image_id, Vector::Zero(sigs.front().vector.size()), {}};
  for (const auto& s : sigs) {
    if (s.image_id != out.image_id) {
      throw ArgumentError("combine_resolutions: mixed image ids '" + out.image_id +
                          "' and '" + s.image_id + "'");
    }
    if (s.vector.size() != out.vector.size()) {
      throw ArgumentError("combine_resolutions: dimension mismatch for '" + s.image_id + "'");
    }
    out.vector += s.vector;
    out.resolutions.insert(out.resolutions.end(), s.resolutions.begin(), s.resolutions.end());
  }
  std::sort(out.resolutions.begin(), out.resolutions.end());
  out.vector = l2_normalize(out.vector);
  return out;
}

inline double similarity(const Signature& a, const Signature& b) {
  if (a.vector.size() != b.vector.size()) {
    throw ArgumentError("similarity: dimension " + std::to_string(a.vector.size()) +
                        " vs " + std::to_string(b.vector.size()));
  }
  return a.vector.dot(b.vector);
}

struct RankedHit {
  std::string image_id;
  double score = 0.0;
};

/// Index entries by decreasing similarity to the query, ties broken by
/// image id; the query's own id is left out.
inline std::vector<RankedHit> rank(std::span<const Signature> index, const Signature& query) {
  std::vector<RankedHit> hits;
  hits.reserve(index.size());
  for (const auto& s : index) {
    if (s.image_id == query.image_id) continue;
    hits.push_back({s.image_id, similarity(s, query)});
  }
  std::sort(hits.begin(), hits.end(), [](const RankedHit& a, const RankedHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.image_id < b.image_id;
  });
  return hits;
}

// ---------------------------------------------------------------------------
// Ground truth and mAP
// ---------------------------------------------------------------------------

struct QueryTruth {
  std::string query_id;
  std::set<std::string> positives;
  std::set<std::string> junk;

  void validate() const {
    for (const auto& p : positives) {
      if (junk.count(p)) {
        throw FormatError("query '" + query_id + "': '" + p + "' is both positive and junk");
      }
    }
    if (positives.count(query_id)) {
      throw FormatError("query '" + query_id + "' lists itself as a positive");
    }
  }
};

using GroundTruth = std::vector<QueryTruth>;

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

}  // namespace detail

/// One query per line: `query_id | positive ids... | junk ids...`. Blank
/// lines and lines starting with '#' are skipped; the junk field may be
/// omitted.
inline GroundTruth parse_ground_truth(std::istream& in, const std::string& origin = "<stream>") {
  GroundTruth gt;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t bar; (bar = line.find('|', start)) != std::string::npos; start = bar + 1) {
      fields.push_back(line.substr(start, bar - start));
    }
    fields.push_back(line.substr(start));
    const auto where = origin + ":" + std::to_string(lineno);
    if (fields.size() < 2 || fields.size() > 3) {
      throw FormatError(where + ": expected 'query | positives | junk'");
    }
    const auto q = detail::split_ws(fields[0]);
    if (q.size() != 1) throw FormatError(where + ": expected exactly one query id");
    QueryTruth t{q[0], {}, {}};
    for (auto& id : detail::split_ws(fields[1])) t.positives.insert(id);
    if (fields.size() == 3) {
      for (auto& id : detail::split_ws(fields[2])) t.junk.insert(id);
    }
    try {
      t.validate();
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
    gt.push_back(std::move(t));
  }
  return gt;
}

inline GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth: " + path.string());
  return parse_ground_truth(in, path.string());
}

inline void write_ground_truth(std::ostream& out, const GroundTruth& gt) {
  for (const auto& t : gt) {
    out << t.query_id << " |";
    for (const auto& p : t.positives) out << ' ' << p;
    out << " |";
    for (const auto& j : t.junk) out << ' ' << j;
    out << '\n';
  }
}

/// Junk ids are dropped from the ranking, then
/// AP = (1/|positives|) * sum over ranks r holding a positive of precision@r.
/// Positives missing from the ranking contribute zero.
inline double average_precision(std::span<const std::string> ranking, const QueryTruth& truth) {
  if (truth.positives.empty()) {
    throw EvaluationError("query '" + truth.query_id + "' has no positives");
  }
  double sum = 0.0;
  std::size_t rank_pos = 0;
  std::size_t hits = 0;
  for (const auto& id : ranking) {
    if (truth.junk.count(id)) continue;
    ++rank_pos;
    if (truth.positives.count(id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank_pos);
    }
  }
  return sum / static_cast<double>(truth.positives.size());
}

inline double average_precision(std::span<const RankedHit> ranking, const QueryTruth& truth) {
  std::vector<std::string> ids;
  ids.reserve(ranking.size());
  for (const auto& h : ranking) ids.push_back(h.image_id);
  return average_precision(ids, truth);
}

/// Pairwise (cascade) summation; the result does not depend on how the
/// terms were produced, only on their order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double mean_ap(std::span<const double> aps) {
  if (aps.empty()) throw EvaluationError("mean_ap: no queries");
  return pairwise_sum(aps) / static_cast<double>(aps.size());
}

struct QueryRanking {
  std::vector<std::string> ranking;
  QueryTruth truth;
};

inline double mean_ap(std::span<const QueryRanking> queries) {
  std::vector<double> aps;
  aps.reserve(queries.size());
  for (const auto& q : queries) aps.push_back(average_precision(q.ranking, q.truth));
  return mean_ap(aps);
}

/// Ranks every ground-truth query against the index and averages AP.
inline double evaluate_index(std::span<const Signature> index, const GroundTruth& gt) {
  std::vector<double> aps;
  aps.reserve(gt.size());
  for (const auto& t : gt) {
    const auto it = std::find_if(index.begin(), index.end(),
                                 [&](const Signature& s) { return s.image_id == t.query_id; });
    if (it == index.end()) {
      throw EvaluationError("query '" + t.query_id + "' is not in the index");
    }
    aps.push_back(average_precision(rank(index, *it), t));
  }
  return mean_ap(aps);
}

// ---------------------------------------------------------------------------
// Similarity breakdown
// ---------------------------------------------------------------------------

/// N x N matrix whose (k, l) entry is the inner product of the (k, l)
/// segments of a and b. Its entries sum to <a, b>.
inline Matrix contribution_by_pair(const Vector& a, const Vector& b,
                                   const PairSegments& segments) {
  if (a.size() != b.size() || static_cast<std::size_t>(a.size()) != segments.total) {
    throw ArgumentError("contribution_by_pair: vectors do not match the block layout");
  }
  const int n = segments.n_clusters;
  Matrix out = Matrix::Zero(n, n);
  for (std::size_t p = 0; p < segments.pairs(); ++p) {
    if (segments.sizes[p] == 0) continue;
    const auto off = static_cast<Eigen::Index>(segments.offsets[p]);
    const auto len = static_cast<Eigen::Index>(segments.sizes[p]);
    out(static_cast<Eigen::Index>(p / n), static_cast<Eigen::Index>(p % n)) =
        a.segment(off, len).dot(b.segment(off, len));
  }
  return out;
}

inline Matrix contribution_by_pair(const RawSignature& a, const RawSignature& b) {
  if (!(a.layout == b.layout)) {
    throw ArgumentError("contribution_by_pair: signatures have different layouts");
  }
  return contribution_by_pair(a.values, b.values, a.layout.segments());
}

struct DominantPair {
  int k = 0;
  int l = 0;
  double contribution = 0.0;
};

/// Cluster pair contributing most to the similarity (lowest index on ties).
inline DominantPair dominant_pair(const Matrix& contributions) {
  DominantPair best{0, 0, contributions(0, 0)};
  for (Eigen::Index k = 0; k < contributions.rows(); ++k) {
    for (Eigen::Index l = 0; l < contributions.cols(); ++l) {
      if (contributions(k, l) > best.contribution) {
        best = {static_cast<int>(k), static_cast<int>(l), contributions(k, l)};
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

// `.sig`: "ISTASG01", u32 dim, f32 vector. The image id (and resolution,
// for per-resolution signatures) comes from the file name.
inline constexpr std::string_view kSignatureMagic = "ISTASG01";
// `.index`: "ISTAIX01", u32 count, u32 dim, then per entry a u32-length
// prefixed image id and dim f32 values.
inline constexpr std::string_view kIndexMagic = "ISTAIX01";

inline void save_signature(const Signature& s, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic(kSignatureMagic);
  w.u32(static_cast<std::uint32_t>(s.vector.size()));
  for (Eigen::Index i = 0; i < s.vector.size(); ++i) w.f32(static_cast<float>(s.vector(i)));
  io::write_file(path, w.bytes());
}

inline Signature load_signature(const std::filesystem::path& path) {
  io::ByteReader r = io::read_file(path);
  r.expect_magic(kSignatureMagic);
  const std::uint32_t dim = r.u32();
  std::vector<float> v(dim);
  r.f32s(v);
  r.expect_end();
  const GridName name = parse_artifact_name(path);
  Signature s{name.image_id, Vector(dim), {}};
  if (name.resolution > 0) s.resolutions.push_back(name.resolution);
  for (std::uint32_t i = 0; i < dim; ++i) s.vector(i) = v[i];
  return s;
}

inline void save_index(std::span<const Signature> index, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic(kIndexMagic);
  w.u32(static_cast<std::uint32_t>(index.size()));
  const auto dim = index.empty() ? 0 : index.front().vector.size();
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& s : index) {
    if (s.vector.size() != dim) throw ArgumentError("index entries differ in dimension");
    w.str(s.image_id);
    for (Eigen::Index i = 0; i < dim; ++i) w.f32(static_cast<float>(s.vector(i)));
  }
  io::write_file(path, w.bytes());
}

inline std::vector<Signature> load_index(const std::filesystem::path& path) {
  io::ByteReader r = io::read_file(path);
  r.expect_magic(kIndexMagic);
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  std::vector<Signature> index;
  index.reserve(count);
  std::vector<float> buf(dim);
  for (std::uint32_t e = 0; e < count; ++e) {
    Signature s{r.str(), Vector(dim), {}};
    r.f32s(buf);
    for (std::uint32_t i = 0; i < dim; ++i) s.vector(i) = buf[i];
    index.push_back(std::move(s));
  }
  r.expect_end();
  return index;
}

/// `rank<TAB>image_id<TAB>score`, ranks starting at 1.
inline void write_ranking_tsv(std::ostream& out, std::span<const RankedHit> hits) {
  char score[64];
  for (std::size_t i = 0; i < hits.size(); ++i) {
    std::snprintf(score, sizeof score, "%.9g", hits[i].score);
    out << (i + 1) << '\t' << hits[i].image_id << '\t' << score << '\n';
  }
}

}  // namespace ista
