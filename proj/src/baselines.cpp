#include "metaprobe/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "metaprobe/error.hpp"

namespace metaprobe::baselines {

using paradigm::TrialRecord;

FeatureBlock behavioural_features(std::span<const TrialRecord> trials, probing::Target target) {
  if (trials.empty()) throw Error(ErrorCode::kInvalidArgument, "no trials for behavioural features");
  const bool verification = target == probing::Target::kVerification;
  const std::vector<std::string> names =
      verification ? std::vector<std::string>{"mean_answer_logprob", "verbal_confidence", "a1_correct"}
                   : std::vector<std::string>{"mean_answer_logprob", "verbal_confidence", "verification_logprob_diff"};
  const auto n = static_cast<Eigen::Index>(trials.size());
  Eigen::MatrixXd all(n, 3);
  FeatureBlock b;
  b.name = "behavioural";
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = trials[static_cast<std::size_t>(i)];
    if (!t.complete()) throw Error(ErrorCode::kMissingSlot, "behavioural features need complete trials", t.trial_id);
    b.trial_ids.push_back(t.trial_id);
    all(i, 0) = t.mean_answer_logprob;
    all(i, 1) = t.verbal_confidence;
    all(i, 2) = verification ? (t.a1_correct ? 1.0 : 0.0) : t.verification_logprob_diff;
  }
  if (!all.allFinite()) throw Error(ErrorCode::kNonFinite, "behavioural feature is not finite");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < 3; ++j) {
    if ((all.col(j).array() == all(0, j)).all()) {
      b.dropped.push_back(names[static_cast<std::size_t>(j)]);
      b.warnings.push_back("dropped constant column " + names[static_cast<std::size_t>(j)]);
    } else {
      keep.push_back(j);
    }
  }
  if (keep.empty()) throw Error(ErrorCode::kConstantInput, "every behavioural column is constant");
  b.design.values.resize(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    b.design.values.col(static_cast<Eigen::Index>(k)) = all.col(keep[k]);
    b.design.columns.push_back(names[static_cast<std::size_t>(keep[k])]);
  }
  return b;
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

TfidfBlock tfidf(std::span<const std::string> documents, int max_terms) {
  if (documents.empty()) throw Error(ErrorCode::kInvalidArgument, "empty corpus");
  std::vector<std::map<std::string, int>> tf(documents.size());
  std::map<std::string, int> df;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    for (const auto& w : whitespace_tokens(documents[d])) ++tf[d][w];
    for (const auto& [w, c] : tf[d]) ++df[w];
  }
  std::vector<std::pair<std::string, int>> terms(df.begin(), df.end());
  std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (static_cast<int>(terms.size()) > max_terms) terms.resize(static_cast<std::size_t>(max_terms));

  TfidfBlock b;
  const double N = static_cast<double>(documents.size());
  std::map<std::string, std::size_t> column;
  for (const auto& [w, c] : terms) {
    column[w] = b.vocabulary.size();
    b.vocabulary.push_back(w);
    b.idf.push_back(std::log((1.0 + N) / (1.0 + c)) + 1.0);
  }
  b.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(documents.size()), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t d = 0; d < documents.size(); ++d) {
    const auto row = static_cast<Eigen::Index>(d);
    for (const auto& [w, c] : tf[d]) {
      const auto it = column.find(w);
      if (it == column.end()) continue;
      b.values(row, static_cast<Eigen::Index>(it->second)) = c * b.idf[it->second];
    }
    const double norm = b.values.row(row).norm();
    if (norm > 0) b.values.row(row) /= norm;
  }
  return b;
}

FeatureBlock surface_features(std::span<const TrialRecord> trials) {
  if (trials.empty()) throw Error(ErrorCode::kInvalidArgument, "empty corpus for surface features");
  std::vector<std::string> questions, answers;
  FeatureBlock b;
  b.name = "surface";
  for (const auto& t : trials) {
    b.trial_ids.push_back(t.trial_id);
    questions.push_back(t.question);
    answers.push_back(t.a1);
  }
  const auto q = tfidf(questions, kSurfaceTerms);
  const auto a = tfidf(answers, kSurfaceTerms);
  for (const auto* blk : {&q, &a}) {
    if (static_cast<int>(blk->vocabulary.size()) < kSurfaceTerms) {
      b.warnings.push_back((blk == &q ? std::string("question") : std::string("answer")) + " vocabulary has only " +
                           std::to_string(blk->vocabulary.size()) + " terms");
    }
  }
  const auto n = static_cast<Eigen::Index>(trials.size());
  b.design.values.resize(n, q.values.cols() + a.values.cols() + 2);
  b.design.values << q.values, a.values, Eigen::MatrixXd::Zero(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    b.design.values(i, q.values.cols() + a.values.cols()) =
        static_cast<double>(whitespace_tokens(questions[static_cast<std::size_t>(i)]).size());
    b.design.values(i, q.values.cols() + a.values.cols() + 1) =
        static_cast<double>(whitespace_tokens(answers[static_cast<std::size_t>(i)]).size());
  }
  for (const auto& w : q.vocabulary) b.design.columns.push_back("q_tfidf:" + w);
  for (const auto& w : a.vocabulary) b.design.columns.push_back("a_tfidf:" + w);
  b.design.columns.push_back("q_length");
  b.design.columns.push_back("a_length");
  return b;
}

void write_feature_csv(const std::filesystem::path& path, const FeatureBlock& block) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write", path.string());
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  out << "trial_id";
  for (const auto& c : block.design.columns) out << ',' << quote(c);
  out << '\n';
  out.precision(9);
  for (Eigen::Index i = 0; i < block.design.rows(); ++i) {
    out << quote(block.trial_ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < block.design.cols(); ++j) out << ',' << block.design.values(i, j);
    out << '\n';
  }
}

}  // namespace metaprobe::baselines
