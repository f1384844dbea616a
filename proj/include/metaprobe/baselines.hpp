#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "metaprobe/glm.hpp"
#include "metaprobe/paradigm.hpp"
#include "metaprobe/probing.hpp"

namespace metaprobe::baselines {

struct FeatureBlock {
  std::string name;
  std::vector<std::string> trial_ids;
  glm::DesignMatrix design;
  std::vector<std::string> dropped;
  std::vector<std::string> warnings;
};

/// Behavioural predictors for a probe target. Verification uses answer
/// log-probability, verbal confidence and A1 correctness; the other targets
/// swap A1 correctness for the verification log-probability difference.
/// Columns constant over the given trials are dropped.
FeatureBlock behavioural_features(std::span<const paradigm::TrialRecord> trials, probing::Target target);

inline constexpr int kSurfaceTerms = 100;

/// Two 100-term TF-IDF blocks (question, answer) plus two whitespace-token
/// length columns. idf = ln((1+N)/(1+df)) + 1; rows L2-normalised per block;
/// vocabulary is the top terms by document frequency, ties lexicographic.
FeatureBlock surface_features(std::span<const paradigm::TrialRecord> trials);

struct TfidfBlock {
  std::vector<std::string> vocabulary;
  std::vector<double> idf;
  Eigen::MatrixXd values;
};
TfidfBlock tfidf(std::span<const std::string> documents, int max_terms);
std::vector<std::string> whitespace_tokens(std::string_view text);

/// Feature dump keyed by trial_id.
void write_feature_csv(const std::filesystem::path& path, const FeatureBlock& block);

}  // namespace metaprobe::baselines
