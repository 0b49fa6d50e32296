#pragma once

// Pipeline configuration: a flat `key = value` file. Unknown keys and
// out-of-range values are rejected before any stage runs.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "ista/error.hpp"

namespace ista {

struct PipelineConfig {
  int codebook_size = 32;
  int radius = 1;
  std::string backbone = "vgg16";
  double variance_target_vgg16 = 0.80;
  double variance_target_mobilenet = 0.95;
  /// Overrides the per-backbone default when set.
  std::optional<double> variance_target;
  std::uint64_t min_pair_count = 100;
  double alpha = 0.5;
  double keep_ratio = 0.4;
  int final_dim = 512;
  bool whiten = true;
  bool renorm = true;
  std::uint64_t seed = 0;
  int kmeans_max_iters = 100;
  std::uint64_t kmeans_sample_cap = 500'000;
  unsigned threads = 1;

  std::filesystem::path training_dir;   // codebook and pair statistics
  std::filesystem::path reduction_dir;  // block and full reduction fits
  std::filesystem::path database_dir;   // images to index
  std::filesystem::path ground_truth;
  std::filesystem::path work_dir = ".";
  /// Lets fits fall back to the database corpus when no dedicated corpus
  /// is configured.
  bool allow_single_corpus = false;

  double effective_variance_target() const {
    if (variance_target) return *variance_target;
    return backbone == "mobilenet" ? variance_target_mobilenet : variance_target_vgg16;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (codebook_size < 1 || codebook_size > 4096) fail("codebook_size must be in [1, 4096]");
    if (radius < 1 || radius > 64) fail("radius must be in [1, 64]");
    if (backbone != "vgg16" && backbone != "mobilenet") {
      fail("backbone must be 'vgg16' or 'mobilenet'");
    }
    auto unit = [&](double v, const char* key) {
      if (!(v > 0.0 && v <= 1.0)) fail(std::string(key) + " must be in (0, 1]");
    };
    unit(variance_target_vgg16, "variance_target_vgg16");
    unit(variance_target_mobilenet, "variance_target_mobilenet");
    if (variance_target) unit(*variance_target, "variance_target");
    unit(alpha, "alpha");
    unit(keep_ratio, "keep_ratio");
    if (final_dim < 1) fail("final_dim must be positive");
    if (kmeans_max_iters < 1) fail("kmeans_max_iters must be positive");
    if (kmeans_sample_cap < 1) fail("kmeans_sample_cap must be positive");
    if (threads < 1 || threads > 1024) fail("threads must be in [1, 1024]");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

}  // namespace detail

/// Applies one `key = value` assignment. Relative paths resolve against
/// `base`.
inline void set_config_value(PipelineConfig& cfg, const std::string& key,
                             const std::string& value,
                             const std::filesystem::path& base = {}) {
  using detail::parse_bool;
  using detail::parse_number;
  auto path = [&](std::filesystem::path& dst) {
    std::filesystem::path p(value);
    dst = p.is_relative() && !base.empty() ? base / p : p;
  };
  const std::map<std::string, std::function<void()>> setters = {
      {"codebook_size", [&] { cfg.codebook_size = parse_number<int>(key, value); }},
      {"radius", [&] { cfg.radius = parse_number<int>(key, value); }},
      {"backbone", [&] { cfg.backbone = value; }},
      {"variance_target", [&] { cfg.variance_target = parse_number<double>(key, value); }},
      {"variance_target_vgg16", [&] { cfg.variance_target_vgg16 = parse_number<double>(key, value); }},
      {"variance_target_mobilenet",
       [&] { cfg.variance_target_mobilenet = parse_number<double>(key, value); }},
      {"min_pair_count", [&] { cfg.min_pair_count = parse_number<std::uint64_t>(key, value); }},
      {"alpha", [&] { cfg.alpha = parse_number<double>(key, value); }},
      {"keep_ratio", [&] { cfg.keep_ratio = parse_number<double>(key, value); }},
      {"final_dim", [&] { cfg.final_dim = parse_number<int>(key, value); }},
      {"whiten", [&] { cfg.whiten = parse_bool(key, value); }},
      {"renorm", [&] { cfg.renorm = parse_bool(key, value); }},
      {"seed", [&] { cfg.seed = parse_number<std::uint64_t>(key, value); }},
      {"kmeans_max_iters", [&] { cfg.kmeans_max_iters = parse_number<int>(key, value); }},
      {"kmeans_sample_cap",
       [&] { cfg.kmeans_sample_cap = parse_number<std::uint64_t>(key, value); }},
      {"threads", [&] { cfg.threads = parse_number<unsigned>(key, value); }},
      {"training_dir", [&] { path(cfg.training_dir); }},
      {"reduction_dir", [&] { path(cfg.reduction_dir); }},
      {"database_dir", [&] { path(cfg.database_dir); }},
      {"ground_truth", [&] { path(cfg.ground_truth); }},
      {"work_dir", [&] { path(cfg.work_dir); }},
      {"allow_single_corpus", [&] { cfg.allow_single_corpus = parse_bool(key, value); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second();
}

inline PipelineConfig parse_config(std::istream& in, const std::string& origin = "<config>",
                                   const std::filesystem::path& base = {}) {
  PipelineConfig cfg;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)),
                       base);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("config file not found: " + path.string());
  return parse_config(in, path.string(), path.parent_path());
}

}  // namespace ista
