#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metaprobe/glm.hpp"
#include "metaprobe/paradigm.hpp"
#include "metaprobe/store.hpp"

// Cross-validated linear probes on captured activations.
//
// Binary targets use an L2 logistic probe; continuous targets use ridge and
// report Pearson r in place of AUROC. Columns are z-scored inside each fold
// with training-row statistics only.
namespace metaprobe::probing {

enum class Target { kVerification, kAnswerChanged, kA2Correct, kVerifLogprobDiff, kPik };
enum class Subset { kAll, kIncorrect, kChanged, kIncorrectChanged, kFa, kCr };

std::string to_string(Target t);
std::string to_string(Subset s);
Target parse_target(std::string_view s);
Subset parse_subset(std::string_view s);
bool is_continuous(Target t);

/// trial_id -> P(IK); required only for the pik target.
using PikTable = std::map<std::string, double>;

struct ProbeSpec {
  Target target = Target::kVerification;
  Subset subset = Subset::kAll;
  std::string position = "panl";
  int layer = 0;
  double l2_strength = 1000.0;
  int folds = 5;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  ProbeSpec spec;
  /// AUROC per fold (Pearson r for continuous targets).
  std::vector<double> fold_auroc;
  double pooled_auroc = 0.5;
  std::vector<std::string> trial_ids;
  /// Out-of-fold probability (fitted value for continuous targets).
  std::vector<double> probe_scores;
  std::vector<int> fold_of;
  /// Full-data refit on z-scored columns.
  Eigen::VectorXd weights;
  double intercept = 0.0;
  std::size_t n = 0;
};

bool in_subset(const paradigm::TrialRecord& r, Subset s);
/// Row indices of complete trials in the subset.
std::vector<std::size_t> subset_rows(std::span<const paradigm::TrialRecord> trials, Subset s);
double target_value(const paradigm::TrialRecord& r, Target t, const PikTable* pik);

/// Stratified (binary) or shuffled (continuous) fold assignment.
std::vector<int> assign_folds(std::span<const double> y, bool binary, int folds, std::uint64_t seed);

/// Cross-validation on an arbitrary design: out-of-fold scores, per-fold and
/// pooled metric. Row ids name offending rows in errors.
struct CvOutcome {
  std::vector<double> scores;
  std::vector<int> fold_of;
  std::vector<double> fold_metric;
  double pooled = 0.5;
};
CvOutcome cross_validate(const Eigen::MatrixXd& x, std::span<const double> y, bool binary, double l2_strength,
                         int folds, std::uint64_t seed, std::span<const std::string> row_ids);

/// `activations` rows align with `trials`.
ProbeResult cv_probe(const Eigen::MatrixXd& activations, std::span<const paradigm::TrialRecord> trials,
                     const ProbeSpec& spec, const PikTable* pik = nullptr);
ProbeResult cv_probe(const store::ActivationSet& acts, std::span<const paradigm::TrialRecord> trials,
                     const ProbeSpec& spec, const PikTable* pik = nullptr);

struct SweepRow {
  std::string position;
  int layer = 0;
  Target target = Target::kVerification;
  Subset subset = Subset::kAll;
  std::size_t n = 0;
  double pooled_auroc = 0.5;
  std::vector<double> fold_aurocs;
  bool absent = false;
  std::string error;
};

/// One cv_probe per grid cell with the template's seed; failures and missing
/// cells are recorded and the sweep continues.
std::vector<SweepRow> layer_sweep(const store::ActivationSet& acts, std::span<const paradigm::TrialRecord> trials,
                                  std::span<const std::string> positions, std::span<const int> layers,
                                  const ProbeSpec& spec_template, const PikTable* pik = nullptr);
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

struct TransferResult {
  std::string source_task;
  std::string target_task;
  double auroc_on_target = 0.5;
  double weight_cosine = 0.0;
};

/// Applies source full-data weights to target activations z-scored with
/// target statistics; cosine is against a full-data refit on the target and
/// is NaN when either weight vector is zero.
TransferResult probe_transfer(const ProbeResult& source, const Eigen::MatrixXd& target_activations,
                              std::span<const paradigm::TrialRecord> target_trials, const std::string& source_task,
                              const std::string& target_task, const PikTable* pik = nullptr);

/// Out-of-fold scores as a design column aligned to `trial_ids`.
glm::DesignMatrix probe_score_feature(const ProbeResult& result, std::span<const std::string> trial_ids,
                                      const std::string& name = "panl_probe");

double weight_cosine(const ProbeResult& a, const ProbeResult& b);

}  // namespace metaprobe::probing
