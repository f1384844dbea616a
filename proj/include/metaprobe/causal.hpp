#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metaprobe/backend.hpp"
#include "metaprobe/paradigm.hpp"

// Corrupt / patch / ablate interventions on the Phase-1 forward pass.
//
// Corruption replaces every answer-token embedding with the calibration mean
// for its offset inside the answer. Patching restores one clean cell
// (position, layer) inside a corrupted run. Ablation replaces residual states
// in an otherwise clean run with calibration means.
namespace metaprobe::causal {

enum class MeansKind { kEmbedding, kResidual };
enum class LengthPolicy { kExclude, kTruncate };

struct CalibrationMeans {
  MeansKind kind = MeansKind::kEmbedding;
  /// Embedding kind: relative answer offset -> mean layer-0 state.
  std::map<int, std::vector<float>> offset_means;
  /// Residual kind: (position key, layer) -> mean state.
  std::map<std::pair<std::string, int>, std::vector<float>> residual_means;
  std::size_t source_n = 0;
  std::map<paradigm::SdtCell, std::size_t> balance;
  int max_offset() const { return offset_means.empty() ? -1 : offset_means.rbegin()->first; }
};

CalibrationMeans compute_embedding_means(backend::Backend& model, std::span<const paradigm::TrialRecord> calibration);

/// Balanced residual means: the first `per_cell` complete trials of each SDT
/// cell. Throws kQuotaUnmet naming deficient cells.
CalibrationMeans compute_residual_means(backend::Backend& model, std::span<const paradigm::TrialRecord> calibration,
                                        std::span<const std::string> positions, std::span<const int> layers,
                                        std::size_t per_cell = 50);

struct Outcome {
  paradigm::Verification verification = paradigm::Verification::kN;
  double logprob_diff = 0.0;
};

/// Clean activations for the cells a sweep may restore.
using CleanCache = std::map<std::pair<std::string, int>, std::vector<float>>;

struct PreparedTrial {
  const paradigm::TrialRecord* record = nullptr;
  std::string prompt;
  paradigm::PositionMap positions;
  std::size_t length = 0;
};
PreparedTrial prepare(const backend::Backend& model, const paradigm::TrialRecord& record);

/// Corruption cells for a trial, or nullopt if the answer is longer than the
/// calibrated offsets and the policy excludes it.
std::optional<backend::InterventionSpec> corruption_spec(const PreparedTrial& t, const CalibrationMeans& means,
                                                         LengthPolicy policy);

struct CorruptRun {
  backend::GenerationResult result;
  std::vector<backend::ActivationSlice> slices;
};
CorruptRun corrupt_run(backend::Backend& model, const paradigm::TrialRecord& trial, const CalibrationMeans& means,
                       LengthPolicy policy = LengthPolicy::kExclude, const backend::ActivationRequest* capture = nullptr);

CleanCache capture_clean(backend::Backend& model, const PreparedTrial& t, std::span<const std::string> positions,
                         std::span<const int> layers);

Outcome patch_run(backend::Backend& model, const paradigm::TrialRecord& trial, const std::string& position, int layer,
                  const CleanCache& clean, const CalibrationMeans& means, LengthPolicy policy = LengthPolicy::kExclude);

Outcome ablate_run(backend::Backend& model, const paradigm::TrialRecord& trial, std::span<const std::string> positions,
                   int layer, const CalibrationMeans& means);

enum class Mode { kPatch, kAblate };
std::string to_string(Mode m);

struct SweepConfig {
  Mode mode = Mode::kPatch;
  /// Each entry is one cell's position set (singletons for patching).
  std::vector<std::vector<std::string>> position_sets;
  std::vector<int> layers;
  LengthPolicy length_policy = LengthPolicy::kExclude;
};

struct CellResult {
  std::vector<std::string> positions;
  int layer = 0;
  std::size_t n = 0;
  double d_prime = 0.0;
  double mean_logprob_diff = 0.0;
  std::optional<double> recovery_pct;
  std::string error;
};

struct Baseline {
  std::size_t n = 0;
  double d_prime = 0.0;
  double mean_logprob_diff = 0.0;
};

struct SweepResult {
  Mode mode = Mode::kPatch;
  Baseline clean;
  std::optional<Baseline> corrupt;
  std::size_t excluded = 0;
  std::vector<CellResult> cells;
};

struct DprimeAccumulator {
  std::int64_t hits = 0, misses = 0, fas = 0, crs = 0;
  double lpd_sum = 0.0;
  std::size_t n = 0;
  void add(bool correct, const Outcome& o);
  Baseline finish() const;
};

std::optional<double> recovery(double d_cell, double d_clean, double d_corrupt);

SweepResult sweep(backend::Backend& model, std::span<const paradigm::TrialRecord> trials, const SweepConfig& config,
                  const CalibrationMeans* embedding_means, const CalibrationMeans* residual_means);

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result);

}  // namespace metaprobe::causal
