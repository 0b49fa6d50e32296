#pragma once

// Signature normalization, applied in this order: signed power,
// cross-cluster normalization of like-ranked eigen-components, global l2.

#include <cmath>
#include <vector>

#include "ista/error.hpp"
#include "ista/linalg.hpp"
#include "ista/sta_encoder.hpp"

namespace ista {

struct NormalizationConfig {
  double alpha = 0.5;
  double epsilon = 1e-12;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
      throw ArgumentError("power exponent alpha must lie in (0, 1]");
    }
    if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
  }
};

/// s <- sign(s) |s|^alpha, componentwise.
inline Vector power_normalize(const Vector& v, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ArgumentError("power exponent alpha must lie in (0, 1]");
  }
  if (alpha == 1.0) return v;
  return v.unaryExpr([alpha](double s) {
    return s == 0.0 ? 0.0 : std::copysign(std::pow(std::abs(s), alpha), s);
  });
}

inline RawSignature power_normalize(RawSignature sig, double alpha) {
  sig.values = power_normalize(sig.values, alpha);
  return sig;
}

/// Divides component (i, j) of every diagonal block (k == l) by the root sum
/// of squares of (i, j) over all diagonal blocks, and likewise for the
/// off-diagonal blocks. Blocks are ragged: the group at (i, j) only contains
/// blocks whose rank exceeds both i and j. Denominators below eps leave the
/// components unchanged.
inline RawSignature cross_cluster_normalize(RawSignature sig, double eps = 1e-12) {
  const BlockLayout& layout = sig.layout;
  int max_rank = 0;
  for (int r : layout.ranks()) max_rank = std::max(max_rank, r);
  if (max_rank == 0) return sig;

  RowMatrix diag_ss = RowMatrix::Zero(max_rank, max_rank);
  RowMatrix off_ss = RowMatrix::Zero(max_rank, max_rank);
  for (std::size_t p = 0; p < layout.pairs(); ++p) {
    const int r = layout.rank(p);
    if (r == 0) continue;
    auto& acc = layout.is_diagonal(p) ? diag_ss : off_ss;
    acc.topLeftCorner(r, r) += sig.block(p).array().square().matrix();
  }
  const RowMatrix diag_den = diag_ss.array().sqrt();
  const RowMatrix off_den = off_ss.array().sqrt();
  for (std::size_t p = 0; p < layout.pairs(); ++p) {
    const int r = layout.rank(p);
    if (r == 0) continue;
    const RowMatrix& den = layout.is_diagonal(p) ? diag_den : off_den;
    auto block = sig.block(p);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        if (den(i, j) >= eps) block(i, j) /= den(i, j);
      }
    }
  }
  return sig;
}

/// v / ||v|| when ||v|| > eps, otherwise v unchanged.
inline Vector l2_normalize(const Vector& v, double eps = 1e-12) {
  const double n = v.norm();
  return n > eps ? Vector(v / n) : v;
}

/// Full per-image normalization: power, cross-cluster, then l2.
inline RawSignature normalize_signature(RawSignature sig,
                                        const NormalizationConfig& cfg = {}) {
  cfg.validate();
  sig = power_normalize(std::move(sig), cfg.alpha);
  sig = cross_cluster_normalize(std::move(sig), cfg.epsilon);
  sig.values = l2_normalize(sig.values, cfg.epsilon);
  return sig;
}

}  // namespace ista
