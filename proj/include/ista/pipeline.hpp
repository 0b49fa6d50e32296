#pragma once

// File-driven pipeline stages. Each stage reads the artifacts of earlier
// stages from disk and writes its own, so any stage can be rerun alone.
// Default locations derive from the config's work_dir:
//
//   model.codebook  model.pairstats  model.pairmodel  model.redmodel
//   raw/            encoded + normalized database signatures (.raw)
//   raw_fit/        same for the reduction-fitting corpus
//   sig_res/        reduced per-resolution signatures (.sig)
//   sig/            resolution-combined signatures (.sig)
//   database.index

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <typeinfo>
#include <vector>

#include "ista/codebook.hpp"
#include "ista/config.hpp"
#include "ista/descriptor_store.hpp"
#include "ista/error.hpp"
#include "ista/normalizer.hpp"
#include "ista/oracle.hpp"
#include "ista/parallel.hpp"
#include "ista/reducer.hpp"
#include "ista/retrieval.hpp"
#include "ista/sta_encoder.hpp"

namespace ista::pipeline {

namespace fs = std::filesystem;

/// Per-invocation overrides of the default artifact locations.
struct StageIo {
  std::optional<fs::path> in;
  std::optional<fs::path> out;
  std::optional<fs::path> codebook;
  std::optional<fs::path> stats;
  std::optional<fs::path> pairmodel;
  std::optional<fs::path> redmodel;
  std::optional<fs::path> index;
  std::optional<fs::path> ground_truth;
  std::string query;   // image id in the index, or a .sig path
  std::size_t top = 0; // 0 keeps the whole ranking
  int trials = 50;
};

struct Streams {
  std::ostream& out;
  std::ostream& log;
};

inline constexpr std::string_view kStages[] = {
    "fit-codebook",       "fit-stats", "fit-basis", "encode", "fit-block-reduction",
    "fit-full-reduction", "reduce",    "combine",   "index",  "query",
    "evaluate",           "oracle-check"};

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

struct Layout {
  fs::path work;
  fs::path codebook() const { return work / "model.codebook"; }
  fs::path stats() const { return work / "model.pairstats"; }
  fs::path pairmodel() const { return work / "model.pairmodel"; }
  fs::path redmodel() const { return work / "model.redmodel"; }
  fs::path raw() const { return work / "raw"; }
  fs::path raw_fit() const { return work / "raw_fit"; }
  fs::path sig_res() const { return work / "sig_res"; }
  fs::path sig() const { return work / "sig"; }
  fs::path index() const { return work / "database.index"; }
};

inline fs::path pick(const std::optional<fs::path>& override_path, const fs::path& fallback) {
  return override_path ? *override_path : fallback;
}

inline void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw MissingInputError("missing input file: " + p.string());
}

/// Files with extension `ext` directly inside `dir`, sorted by name.
inline std::vector<fs::path> list_artifacts(const fs::path& dir, std::string_view ext) {
  if (!fs::is_directory(dir)) throw MissingInputError("missing input directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) {
    throw MissingInputError("no " + std::string(ext) + " files in " + dir.string());
  }
  return out;
}

inline void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

/// Corpus used for the codebook and pair statistics.
inline fs::path training_corpus(const PipelineConfig& cfg) {
  if (!cfg.training_dir.empty()) return cfg.training_dir;
  if (cfg.allow_single_corpus && !cfg.database_dir.empty()) return cfg.database_dir;
  throw ConfigError(
      "training_dir is not set (set allow_single_corpus = true to fit on database_dir)");
}

/// Encoded signatures used to fit the reductions.
inline fs::path reduction_signatures(const PipelineConfig& cfg) {
  const Layout layout{cfg.work_dir};
  if (!cfg.reduction_dir.empty()) return layout.raw_fit();
  if (cfg.allow_single_corpus) return layout.raw();
  throw ConfigError(
      "reduction_dir is not set (set allow_single_corpus = true to fit on database_dir)");
}

inline std::vector<DescriptorGrid> load_corpus(const fs::path& dir) {
  std::vector<DescriptorGrid> grids;
  for (const auto& p : list_artifacts(dir, ".desc")) grids.push_back(load_grid(p).normalized());
  return grids;
}

template <class T>
void check_finite(const T& v, const std::string& what) {
  if (!all_finite(v.data(), static_cast<std::size_t>(v.size()))) {
    throw NumericalError(what + " contains non-finite values");
  }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void fit_codebook_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const fs::path corpus = pick(io.in, training_corpus(cfg));
  const fs::path out = pick(io.out, Layout{cfg.work_dir}.codebook());
  const auto grids = load_corpus(corpus);
  const int d = static_cast<int>(grids.front().depth());
  std::size_t rows = 0;
  for (const auto& g : grids) {
    if (static_cast<int>(g.depth()) != d) {
      throw ArgumentError("grid '" + g.image_id() + "' has depth " + std::to_string(g.depth()) +
                          ", expected " + std::to_string(d));
    }
    rows += g.cells();
  }
  RowMatrix all(static_cast<Eigen::Index>(rows), d);
  Eigen::Index row = 0;
  for (const auto& g : grids) {
    for (std::size_t c = 0; c < g.cells(); ++c, ++row) {
      const auto desc = g.descriptor(c);
      for (int i = 0; i < d; ++i) all(row, i) = desc[static_cast<std::size_t>(i)];
    }
  }
  const RowMatrix train = subsample_rows(all, cfg.kmeans_sample_cap, cfg.seed ^ 0x5eedULL);
  KMeansOptions opt{cfg.codebook_size, cfg.seed, cfg.kmeans_max_iters, cfg.threads};
  const Codebook cb = fit_kmeans(train, opt);
  ensure_parent(out);
  save_codebook(cb, out);
  s.log << "fit-codebook: " << cb.size() << " words from " << train.rows()
        << " descriptors, inertia " << cb.inertia() << " -> " << out.string() << '\n';
}

inline void fit_stats_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const Layout layout{cfg.work_dir};
  const fs::path cb_path = pick(io.codebook, layout.codebook());
  const fs::path out = pick(io.out, layout.stats());
  require_file(cb_path);
  const fs::path corpus = pick(io.in, training_corpus(cfg));
  const Codebook cb = load_codebook(cb_path);
  const auto grids = load_corpus(corpus);
  const PairStatistics stats = accumulate_pair_stats(grids, cb, cfg.radius, cfg.threads);
  ensure_parent(out);
  save_pair_stats(stats, out);
  std::uint64_t total = 0;
  for (auto c : stats.counts) total += c;
  s.log << "fit-stats: " << total << " coupled pairs from " << grids.size() << " grids -> "
        << out.string() << '\n';
}

inline void fit_basis_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const Layout layout{cfg.work_dir};
  const fs::path in = pick(io.in, pick(io.stats, layout.stats()));
  const fs::path out = pick(io.out, layout.pairmodel());
  require_file(in);
  const PairStatistics stats = load_pair_stats(in);
  BasisOptions opt{cfg.effective_variance_target(), cfg.min_pair_count, cfg.threads};
  const PairBasis basis = compute_pair_basis(stats, opt);
  for (const auto& f : basis.pairs) {
    check_finite(f.u, "pair basis");
    check_finite(f.v, "pair basis");
  }
  ensure_parent(out);
  save_pair_model(basis, out);
  s.log << "fit-basis: raw dimension " << basis.layout().total_dim() << " -> " << out.string()
        << '\n';
}

/// Encodes and normalizes every grid of `in_dir` into `out_dir`.
inline std::size_t encode_directory(const PipelineConfig& cfg, const Codebook& cb,
                                    const PairBasis& basis, const fs::path& in_dir,
                                    const fs::path& out_dir) {
  const auto files = list_artifacts(in_dir, ".desc");
  fs::create_directories(out_dir);
  const NormalizationConfig norm{cfg.alpha, 1e-12};
  parallel_for(files.size(), cfg.threads, [&](std::size_t i) {
    const DescriptorGrid grid = load_grid(files[i]).normalized();
    RawSignature sig = normalize_signature(encode_raw(grid, cb, basis, cfg.radius), norm);
    check_finite(sig.values, "signature of '" + grid.image_id() + "'");
    save_raw_signature(sig, out_dir / artifact_name(grid.image_id(), grid.resolution(), ".raw"));
  });
  return files.size();
}

inline void encode_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const Layout layout{cfg.work_dir};
  const fs::path cb_path = pick(io.codebook, layout.codebook());
  const fs::path pm_path = pick(io.pairmodel, layout.pairmodel());
  require_file(cb_path);
  require_file(pm_path);
  const Codebook cb = load_codebook(cb_path);
  const PairBasis basis = load_pair_model(pm_path);
  if (basis.n_clusters != cb.size() || basis.dim != cb.dim()) {
    throw ArgumentError("pair model (N=" + std::to_string(basis.n_clusters) + ", D=" +
                        std::to_string(basis.dim) + ") does not match codebook (N=" +
                        std::to_string(cb.size()) + ", D=" + std::to_string(cb.dim()) + ")");
  }
  if (io.in) {
    const fs::path out = pick(io.out, layout.raw());
    const auto n = encode_directory(cfg, cb, basis, *io.in, out);
    s.log << "encode: " << n << " signatures -> " << out.string() << '\n';
    return;
  }
  if (cfg.database_dir.empty()) throw ConfigError("database_dir is not set");
  const fs::path out = pick(io.out, layout.raw());
  const auto n = encode_directory(cfg, cb, basis, cfg.database_dir, out);
  s.log << "encode: " << n << " signatures -> " << out.string() << '\n';
  if (!cfg.reduction_dir.empty()) {
    const auto m = encode_directory(cfg, cb, basis, cfg.reduction_dir, layout.raw_fit());
    s.log << "encode: " << m << " fitting signatures -> " << layout.raw_fit().string() << '\n';
  }
}

inline std::vector<RawSignature> load_raw_directory(const fs::path& dir) {
  std::vector<RawSignature> sigs;
  for (const auto& p : list_artifacts(dir, ".raw")) sigs.push_back(load_raw_signature(p));
  return sigs;
}

inline void fit_block_reduction_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const fs::path in = pick(io.in, reduction_signatures(cfg));
  const fs::path out = pick(io.out, Layout{cfg.work_dir}.redmodel());
  const auto samples = load_raw_directory(in);
  ReductionModel model{fit_block_reduction(samples, cfg.keep_ratio, cfg.threads), std::nullopt};
  if (model.block.capped_pairs) {
    s.log << "fit-block-reduction: warning: " << model.block.capped_pairs
          << " pairs kept fewer components than requested (too few or degenerate samples)\n";
  }
  ensure_parent(out);
  save_reduction_model(model, out);
  s.log << "fit-block-reduction: " << model.block.input_dim() << " -> "
        << model.block.output_dim() << " from " << samples.size() << " samples -> "
        << out.string() << '\n';
}

inline void fit_full_reduction_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const fs::path model_path = pick(io.redmodel, Layout{cfg.work_dir}.redmodel());
  const fs::path out = pick(io.out, model_path);
  require_file(model_path);
  const fs::path in = pick(io.in, reduction_signatures(cfg));
  ReductionModel model = load_reduction_model(model_path);
  std::vector<Vector> reduced;
  for (const auto& sig : load_raw_directory(in)) {
    reduced.push_back(apply_block_reduction(model.block, sig));
  }
  model.full = fit_full_reduction(reduced, cfg.final_dim, cfg.whiten);
  check_finite(model.full->matrix, "full projection");
  if (model.full->capped) {
    s.log << "fit-full-reduction: warning: kept " << model.full->output_dim() << " of "
          << cfg.final_dim << " requested dimensions\n";
  }
  ensure_parent(out);
  save_reduction_model(model, out);
  s.log << "fit-full-reduction: " << model.full->input_dim() << " -> "
        << model.full->output_dim() << (cfg.whiten ? " (whitened)" : "") << " -> "
        << out.string() << '\n';
}

inline void reduce_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const Layout layout{cfg.work_dir};
  const fs::path model_path = pick(io.redmodel, layout.redmodel());
  require_file(model_path);
  const fs::path in = pick(io.in, layout.raw());
  const fs::path out = pick(io.out, layout.sig_res());
  const ReductionModel model = load_reduction_model(model_path);
  if (!model.full) {
    throw MissingInputError(model_path.string() +
                            " has no full reduction; run fit-full-reduction first");
  }
  const auto files = list_artifacts(in, ".raw");
  fs::create_directories(out);
  parallel_for(files.size(), cfg.threads, [&](std::size_t i) {
    const RawSignature raw = load_raw_signature(files[i]);
    Signature sig{raw.image_id,
                  apply_full_reduction(*model.full, apply_block_reduction(model.block, raw),
                                       cfg.renorm),
                  {}};
    check_finite(sig.vector, "reduced signature of '" + raw.image_id + "'");
    save_signature(sig, out / artifact_name(raw.image_id, raw.resolution, ".sig"));
  });
  s.log << "reduce: " << files.size() << " signatures -> " << out.string() << '\n';
}

inline void combine_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const Layout layout{cfg.work_dir};
  const fs::path in = pick(io.in, layout.sig_res());
  const fs::path out = pick(io.out, layout.sig());
  std::map<std::string, std::vector<Signature>> by_image;
  for (const auto& p : list_artifacts(in, ".sig")) {
    Signature sig = load_signature(p);
    by_image[sig.image_id].push_back(std::move(sig));
  }
  fs::create_directories(out);
  for (const auto& [id, sigs] : by_image) {
    save_signature(combine_resolutions(sigs), out / artifact_name(id, 0, ".sig"));
  }
  s.log << "combine: " << by_image.size() << " images -> " << out.string() << '\n';
}

inline void index_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const Layout layout{cfg.work_dir};
  const fs::path in = pick(io.in, layout.sig());
  const fs::path out = pick(io.out, pick(io.index, layout.index()));
  std::vector<Signature> sigs;
  for (const auto& p : list_artifacts(in, ".sig")) sigs.push_back(load_signature(p));
  ensure_parent(out);
  save_index(sigs, out);
  s.log << "index: " << sigs.size() << " signatures -> " << out.string() << '\n';
}

inline void query_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const fs::path index_path = pick(io.index, Layout{cfg.work_dir}.index());
  require_file(index_path);
  if (io.query.empty()) throw ConfigError("query: --query <image id or .sig file> is required");
  const auto index = load_index(index_path);
  Signature query;
  if (fs::is_regular_file(io.query)) {
    query = load_signature(io.query);
  } else {
    const auto it = std::find_if(index.begin(), index.end(),
                                 [&](const Signature& x) { return x.image_id == io.query; });
    if (it == index.end()) {
      throw MissingInputError("query '" + io.query + "' is neither a file nor an indexed id");
    }
    query = *it;
  }
  auto hits = rank(index, query);
  if (io.top > 0 && hits.size() > io.top) hits.resize(io.top);
  if (io.out) {
    ensure_parent(*io.out);
    std::ofstream f(*io.out);
    if (!f) throw IoError("cannot open for writing: " + io.out->string());
    write_ranking_tsv(f, hits);
  } else {
    write_ranking_tsv(s.out, hits);
  }
}

inline double evaluate_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const fs::path index_path = pick(io.index, Layout{cfg.work_dir}.index());
  const fs::path gt_path = pick(io.ground_truth, cfg.ground_truth);
  if (gt_path.empty()) throw ConfigError("evaluate: no ground truth configured");
  require_file(index_path);
  require_file(gt_path);
  const double map = evaluate_index(load_index(index_path), load_ground_truth(gt_path));
  char line[64];
  std::snprintf(line, sizeof line, "mAP\t%.6f\n", map);
  s.out << line;
  return map;
}

/// Returns false when any trial fails.
inline bool oracle_check_stage(const PipelineConfig& cfg, const StageIo& io, Streams s) {
  const auto report = oracle::run_linearization_suite(cfg.seed, io.trials, cfg.radius);
  s.out << "pass\t" << report.passed << "\nfail\t" << report.failed << '\n';
  s.log << "oracle-check: worst relative error " << report.worst_relative_error << '\n';
  return report.failed == 0;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// 2 missing input, 3 config or model mismatch, 4 numerical failure.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingInputError*>(&e)) return 2;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e)) return 3;
  if (dynamic_cast<const FitError*>(&e) || dynamic_cast<const NumericalError*>(&e)) return 4;
  return 1;
}

/// Runs one stage; returns the process exit status.
inline int run_stage(std::string_view stage, const PipelineConfig& cfg, const StageIo& io,
                     Streams s) {
  try {
    cfg.validate();
    if (stage == "fit-codebook") fit_codebook_stage(cfg, io, s);
    else if (stage == "fit-stats") fit_stats_stage(cfg, io, s);
    else if (stage == "fit-basis") fit_basis_stage(cfg, io, s);
    else if (stage == "encode") encode_stage(cfg, io, s);
    else if (stage == "fit-block-reduction") fit_block_reduction_stage(cfg, io, s);
    else if (stage == "fit-full-reduction") fit_full_reduction_stage(cfg, io, s);
    else if (stage == "reduce") reduce_stage(cfg, io, s);
    else if (stage == "combine") combine_stage(cfg, io, s);
    else if (stage == "index") index_stage(cfg, io, s);
    else if (stage == "query") query_stage(cfg, io, s);
    else if (stage == "evaluate") evaluate_stage(cfg, io, s);
    else if (stage == "oracle-check") return oracle_check_stage(cfg, io, s) ? 0 : 4;
    else throw ConfigError("unknown stage '" + std::string(stage) + "'");
    return 0;
  } catch (const std::exception& e) {
    s.log << "error: " << stage << ": " << e.what() << '\n';
    return exit_code_for(e);
  }
}

/// Every stage from fit-codebook to index, plus evaluate when a ground truth
/// is configured. Stops at the first failing stage.
inline int run_all(const PipelineConfig& cfg, Streams s) {
  const StageIo io;
  for (std::string_view stage : {"fit-codebook", "fit-stats", "fit-basis", "encode",
                                 "fit-block-reduction", "fit-full-reduction", "reduce",
                                 "combine", "index"}) {
    if (int rc = run_stage(stage, cfg, io, s)) return rc;
  }
  if (!cfg.ground_truth.empty()) return run_stage("evaluate", cfg, io, s);
  return 0;
}

}  // namespace ista::pipeline
