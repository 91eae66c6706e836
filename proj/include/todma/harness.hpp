#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "todma/assignment.hpp"
#include "todma/config.hpp"
#include "todma/metrics.hpp"
#include "todma/predictor.hpp"
#include "todma/source_model.hpp"

namespace todma {

/// Failure inside one stage of a trial (source, channel, detect, cluster,
/// assign, predict, metrics) or of the sweep plumbing (config, io).
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct MetricsRecord {
  std::size_t trial = 0;
  std::size_t K = 0, L = 0, M = 0, Q = 0, N = 0;
  double snr_db = 0.0;
  double tder = 0.0;
  double nmse_db = 0.0;
  double ter_todma = 0.0;
  double ter_nonorth = 0.0;
  double ter_orth = 0.0;
  double latency_todma_s = 0.0;
  double latency_orth_s = 0.0;
  std::uint64_t seed = 0;

  // diagnostics (manifest only)
  std::size_t collision_slots = 0;
  std::size_t same_cluster_conflicts = 0;
  std::size_t empty_detections = 0;
  std::size_t masked_cells = 0;
  double wall_s = 0.0;
};

/// Everything the receiver produced for one frame, kept for inspection.
struct ReceiverResult {
  std::vector<DetectionOutput> detections;
  ClusterModel clusters;
  AssignmentState coarse;
  AssignmentState refined;
  std::vector<std::vector<TokenId>> todma;    // one filled sequence per cluster
  std::vector<std::vector<TokenId>> nonorth;
};

struct ReceiverOptions {
  DetectorConfig detector;
  KMeansOptions clustering;
  std::uint64_t seed = 0;  // clustering and random-fill streams
};

/// Detection, clustering, coarse/fine assignment and masked prediction for
/// one received frame (ToDMA), plus the random-fill baseline built from the
/// same coarse assignment.
ReceiverResult run_receiver(const ModulationCodebook& cb, const ReceivedFrame& frame, std::size_t K, std::size_t Q,
                            MaskedTokenPredictor& predictor, const ReceiverOptions& options);

/// Source model named by the config for codebook size Q.
SourceModel build_source_model(const ExperimentConfig& cfg, std::size_t Q);

std::unique_ptr<MaskedTokenPredictor> make_predictor(const ExperimentConfig& cfg, const SourceModel& model,
                                                     std::size_t Q, std::uint64_t seed);

/// Seed of trial `trial` under the config's master seed; the same for every grid point.
std::uint64_t trial_seed(std::uint64_t master, std::size_t trial);

/// One end-to-end trial at the config's base point. `model` may be passed
/// to reuse a source model built for the same Q.
MetricsRecord run_trial(const ExperimentConfig& cfg, std::size_t trial_index, const SourceModel* model = nullptr);

/// Same, at an explicit grid point.
MetricsRecord run_trial_at(const ExperimentConfig& cfg, const SimConfig& sim, std::size_t trial_index,
                           const SourceModel* model = nullptr);

inline constexpr const char* kResultsHeader =
    "trial,K,L,M,Q,N,snr_db,tder,nmse_db,ter_todma,ter_nonorth,ter_orth,latency_todma_s,latency_orth_s,seed";

std::string csv_row(const MetricsRecord& r);
MetricsRecord parse_csv_row(const std::string& line);
std::vector<MetricsRecord> read_results(const std::filesystem::path& path);

struct SweepOptions {
  std::optional<std::size_t> stop_after;  // stop once this many new trials are written
  std::function<void(const MetricsRecord&)> on_record;
};

struct SweepSummary {
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::vector<MetricsRecord> records;  // canonical order, including resumed rows
  bool complete = false;
};

/// Runs every (grid point, trial) pair not yet present in
/// <output_dir>/results.csv, then rewrites the file in canonical order and
/// writes manifest.json.
SweepSummary run_sweep(const ExperimentConfig& cfg, const SweepOptions& options = {});

/// Per-grid-point means (and standard errors) of a results file, as CSV text.
std::string report(const std::vector<MetricsRecord>& records);

}  // namespace todma
