#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "metaprobe/causal.hpp"
#include "metaprobe/paradigm.hpp"
#include "metaprobe/pik.hpp"
#include "metaprobe/probing.hpp"
#include "metaprobe/synthetic.hpp"

// Configuration, staged execution, run manifests and the report emitter.
//
// A run directory holds one file per stage output plus stages/<name>.json
// records (input hash and output hashes) that make reruns resumable, and a
// manifest.json listing every file with its SHA-256. Timestamps appear only
// in the manifest.
namespace metaprobe::pipeline {

namespace fs = std::filesystem;

inline constexpr std::string_view kArtifactVersion = "1.0.0";

struct ProbeTarget {
  probing::Target target = probing::Target::kVerification;
  probing::Subset subset = probing::Subset::kAll;
  std::string key() const { return probing::to_string(target) + "/" + probing::to_string(subset); }
};
ProbeTarget parse_probe_target(std::string_view key);

/// Default probe targets: verification (all, incorrect), answer change
/// (incorrect), A2 correctness (incorrect, incorrect + changed).
std::vector<ProbeTarget> default_probe_targets();

struct Seeds {
  std::uint64_t cohort = 1;
  std::uint64_t folds = 0;
  std::uint64_t pik = 0;
  std::uint64_t calibration = 2;
  std::uint64_t transfer = 3;
};

struct RunConfig {
  paradigm::Task task = paradigm::Task::kTriviaQa;
  std::string backend_kind = "synthetic";
  backend::SyntheticConfig synthetic;

  std::optional<fs::path> questions;
  std::optional<fs::path> foils;
  std::size_t cohort_size = 2000;
  std::string judge = "exact";
  std::vector<paradigm::Condition> conditions{paradigm::kAllConditions.begin(), paradigm::kAllConditions.end()};

  std::optional<paradigm::Task> transfer_task;
  std::optional<fs::path> transfer_questions;
  std::size_t transfer_cohort_size = 1000;

  std::vector<std::string> capture_positions{"question_third_token", "lat", "panl", "prompt_last_token", "panl+1",
                                             "panl+6"};
  /// Empty means every layer.
  std::vector<int> capture_layers;

  std::vector<std::string> probe_positions{"question_third_token", "lat", "panl", "prompt_last_token"};
  std::vector<int> probe_layers;
  /// Negative means the last layer of the PANL band.
  int headline_layer = -1;
  double l2_strength = 1000.0;
  int folds = 5;
  double behavioural_l2 = 1.0;
  std::vector<ProbeTarget> probe_targets = default_probe_targets();

  bool pik_enabled = true;
  pik::PikOptions pik;

  bool causal_enabled = true;
  std::vector<std::string> patch_positions{"question_third_token", "lat", "panl", "prompt_last_token", "panl+1"};
  std::vector<std::vector<std::string>> ablation_sets{{"lat"}, {"panl"}, {"prompt_last_token"}, {"lat", "panl"}};
  std::vector<int> causal_layers;
  causal::LengthPolicy length_policy = causal::LengthPolicy::kExclude;
  std::size_t calibration_size = 4000;
  std::size_t per_cell = 50;
  std::size_t causal_max_trials = 0;

  Seeds seeds;
  fs::path output_dir = "runs/default";
};

/// Parses a JSON config. Relative paths resolve against `base_dir`. Unknown
/// keys are rejected.
RunConfig parse_config(const nlohmann::json& j, const fs::path& base_dir = {});
RunConfig load_config(const fs::path& path);
/// Fully resolved config, every default spelled out.
nlohmann::ordered_json to_json(const RunConfig& c);
/// Throws kConfig naming the offending field.
void validate(const RunConfig& c);
/// SHA-256 of the canonical resolved config without output_dir.
std::string config_hash(const RunConfig& c);
/// Layers a grid field resolves to for this backend.
std::vector<int> resolve_layers(const RunConfig& c, const std::vector<int>& layers);
int resolve_headline_layer(const RunConfig& c);

enum class Stage { kPhases, kFoil, kCapture, kPik, kSweep, kProbe, kCausal, kReport };
std::string to_string(Stage s);
Stage parse_stage(std::string_view s);
const std::vector<Stage>& all_stages();

struct RunOptions {
  /// Stages to bring up to date; prerequisites are added. Empty means all.
  std::vector<Stage> stages;
  bool resume = false;
  std::ostream* log = nullptr;
};

struct StageOutcome {
  Stage stage = Stage::kPhases;
  bool executed = false;
  std::size_t rows = 0;
};

struct RunSummary {
  fs::path run_dir;
  std::vector<StageOutcome> stages;
  std::vector<std::string> report_gaps;
};

/// Executes the requested stages in order. A completed stage whose input
/// hash and output files are unchanged is skipped. A failing stage leaves a
/// manifest that marks the stages completed so far, then rethrows.
RunSummary run_pipeline(const RunConfig& config, const RunOptions& options = {});

struct ReportResult {
  std::vector<fs::path> files;
  std::vector<std::string> gaps;
};

/// Builds the report tables under <run_dir>/report from stored stage outputs
/// only. Missing inputs become entries in report/gaps.txt.
ReportResult emit_report(const fs::path& run_dir);

/// Every regular file under `run_dir` except the manifest and the lock, as
/// sorted relative paths.
std::vector<std::string> walk_files(const fs::path& run_dir);

/// Rewrites manifest.json from the current directory contents.
void write_manifest(const fs::path& run_dir, const nlohmann::ordered_json& header);

/// Holds <run_dir>/.lock for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

}  // namespace metaprobe::pipeline
