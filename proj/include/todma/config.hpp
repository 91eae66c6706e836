#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "todma/amp_detector.hpp"
#include "todma/assignment.hpp"
#include "todma/phy_sim.hpp"

namespace todma {

struct SourceConfig {
  std::string kind = "sparse";  // uniform | sparse | corpus
  int order = 1;
  std::size_t successors = 4;   // sparse: nonzero entries per transition row
  double smoothing = 0.01;      // corpus: additive smoothing of the fitted model
  std::string corpus;           // corpus: path to a corpus file
};

struct PredictorConfig {
  std::string kind = "markov";  // markov | random | external
  std::string endpoint;         // external: tcp://host:port or exec:<command line>
  double timeout_s = 10.0;
};

struct LatencyConfig {
  double bandwidth_hz = 1e7;
  double ber = 1e-3;  // target BER of the orthogonal baseline's rate model
};

/// How L follows K at each grid point.
enum class CodeLength { Fixed, KPlusOne, OnePointFiveK };

struct ExperimentConfig {
  SimConfig sim;
  CodeLength code_length = CodeLength::Fixed;
  DetectorConfig detector;
  KMeansOptions clustering;
  SourceConfig source;
  PredictorConfig predictor;
  std::map<std::string, std::vector<double>> sweep;  // axes: K, L, M, Q, N, snr_db
  std::size_t trials = 1;
  std::size_t workers = 1;
  LatencyConfig latency;
  double orth_ber = 0.0;      // BER applied to the orthogonal baseline's tokens
  bool nmse_squared = false;
  std::string output_dir = "out";

  void validate() const;
};

inline constexpr const char* kSweepAxes[] = {"K", "L", "M", "Q", "N", "snr_db"};

/// Named starting points: "desk" (CI scale), "full" (full scale, L = K + 1)
/// and "text" (full scale, L = 1.5 K).
ExperimentConfig preset(const std::string& name);

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Strict: unknown keys and wrong types are errors. A top-level "preset" key
/// selects the base that the remaining keys override.
ExperimentConfig config_from_json(const nlohmann::json& doc);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Applies "a.b.c=value" overrides. The value is parsed as JSON when
/// possible and taken as a string otherwise.
ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides);

/// Config with one grid point applied and the code-length rule resolved.
SimConfig resolve_point(const ExperimentConfig& cfg, const std::map<std::string, double>& point);

/// Cartesian product of the sweep axes in canonical axis order. A config
/// without a sweep yields one empty point.
std::vector<std::map<std::string, double>> sweep_points(const ExperimentConfig& cfg);

/// Hex FNV-1a of the canonical JSON, ignoring fields that do not affect
/// results (output_dir, workers, trials).
std::string config_hash(const ExperimentConfig& cfg);

const char* to_string(CodeLength rule);

}  // namespace todma
