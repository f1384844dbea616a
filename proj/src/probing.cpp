#include "metaprobe/probing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "metaprobe/error.hpp"
#include "metaprobe/stats.hpp"

namespace metaprobe::probing {

using paradigm::TrialRecord;

namespace {

glm::DesignMatrix design_of(const Eigen::MatrixXd& x) {
  glm::DesignMatrix d;
  d.values = x;
  d.columns.reserve(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) d.columns.push_back("h" + std::to_string(j));
  return d;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

glm::FittedGlm fit(const Eigen::MatrixXd& z, std::span<const double> y, bool binary, double l2) {
  const auto d = design_of(z);
  if (!binary) return glm::fit_ridge(d, y, l2);
  std::vector<int> yi(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) yi[i] = y[i] > 0.5 ? 1 : 0;
  return glm::fit_logistic(d, yi, l2);
}

double metric(std::span<const double> scores, std::span<const double> y, bool binary) {
  if (!binary) return stats::pearson_r(scores, y);
  std::vector<int> yi(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) yi[i] = y[i] > 0.5 ? 1 : 0;
  return stats::auroc(scores, yi);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

std::string to_string(Target t) {
  switch (t) {
    case Target::kVerification: return "verification";
    case Target::kAnswerChanged: return "answer_changed";
    case Target::kA2Correct: return "a2_correct";
    case Target::kVerifLogprobDiff: return "verif_logprob_diff";
    case Target::kPik: return "pik";
  }
  return "verification";
}

std::string to_string(Subset s) {
  switch (s) {
    case Subset::kAll: return "all";
    case Subset::kIncorrect: return "incorrect";
    case Subset::kChanged: return "changed";
    case Subset::kIncorrectChanged: return "incorrect_changed";
    case Subset::kFa: return "fa";
    case Subset::kCr: return "cr";
  }
  return "all";
}

Target parse_target(std::string_view s) {
  for (auto t : {Target::kVerification, Target::kAnswerChanged, Target::kA2Correct, Target::kVerifLogprobDiff,
                 Target::kPik})
    if (to_string(t) == s) return t;
  throw Error(ErrorCode::kInvalidArgument, "unknown probe target", std::string(s));
}

Subset parse_subset(std::string_view s) {
  for (auto x : {Subset::kAll, Subset::kIncorrect, Subset::kChanged, Subset::kIncorrectChanged, Subset::kFa,
                 Subset::kCr})
    if (to_string(x) == s) return x;
  throw Error(ErrorCode::kInvalidArgument, "unknown subset", std::string(s));
}

bool is_continuous(Target t) { return t == Target::kVerifLogprobDiff || t == Target::kPik; }

bool in_subset(const TrialRecord& r, Subset s) {
  switch (s) {
    case Subset::kAll: return true;
    case Subset::kIncorrect: return !r.a1_correct;
    case Subset::kChanged: return r.answer_changed;
    case Subset::kIncorrectChanged: return !r.a1_correct && r.answer_changed;
    case Subset::kFa: return r.sdt_cell == paradigm::SdtCell::kFa;
    case Subset::kCr: return r.sdt_cell == paradigm::SdtCell::kCr;
  }
  return false;
}

std::vector<std::size_t> subset_rows(std::span<const TrialRecord> trials, Subset s) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < trials.size(); ++i)
    if (trials[i].complete() && in_subset(trials[i], s)) rows.push_back(i);
  return rows;
}

double target_value(const TrialRecord& r, Target t, const PikTable* pik) {
  switch (t) {
    case Target::kVerification: return r.verification == paradigm::Verification::kY ? 1.0 : 0.0;
    case Target::kAnswerChanged: return r.answer_changed ? 1.0 : 0.0;
    case Target::kA2Correct: return r.a2_correct ? 1.0 : 0.0;
    case Target::kVerifLogprobDiff: return r.verification_logprob_diff;
    case Target::kPik: {
      if (!pik) throw Error(ErrorCode::kCoverage, "pik target requires a P(IK) table");
      const auto it = pik->find(r.trial_id);
      if (it == pik->end()) throw Error(ErrorCode::kCoverage, "trial has no P(IK) estimate", r.trial_id);
      return it->second;
    }
  }
  return 0.0;
}

std::vector<int> assign_folds(std::span<const double> y, bool binary, int folds, std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorCode::kInvalidArgument, "folds must be >= 2");
  std::mt19937_64 rng(seed);
  auto shuffle = [&](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
  };
  std::vector<int> fold(y.size(), 0);
  std::vector<std::vector<std::size_t>> groups(binary ? 2 : 1);
  for (std::size_t i = 0; i < y.size(); ++i) groups[binary && y[i] > 0.5 ? 1 : 0].push_back(i);
  // Continue the round-robin across classes so fold sizes stay within one.
  std::size_t next = 0;
  for (auto& g : groups) {
    shuffle(g);
    for (std::size_t i : g) fold[i] = static_cast<int>(next++ % static_cast<std::size_t>(folds));
  }
  return fold;
}

CvOutcome cross_validate(const Eigen::MatrixXd& x, std::span<const double> y, bool binary, double l2_strength,
                         int folds, std::uint64_t seed, std::span<const std::string> row_ids) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (y.size() != n || row_ids.size() != n) throw Error(ErrorCode::kLengthMismatch, "cross_validate: row mismatch");
  if (n < static_cast<std::size_t>(folds)) {
    throw Error(ErrorCode::kCoverage, "fewer rows than folds", std::to_string(n));
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!x.row(i).allFinite()) {
      throw Error(ErrorCode::kNonFinite, "non-finite activation", row_ids[static_cast<std::size_t>(i)]);
    }
  }
  CvOutcome out;
  out.fold_of = assign_folds(y, binary, folds, seed);
  out.scores.assign(n, 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (out.fold_of[i] == f ? test : train).push_back(i);
    std::vector<double> ytr, yte;
    for (auto i : train) ytr.push_back(y[i]);
    for (auto i : test) yte.push_back(y[i]);
    if (binary) {
      const auto pos_tr = std::count_if(ytr.begin(), ytr.end(), [](double v) { return v > 0.5; });
      const auto pos_te = std::count_if(yte.begin(), yte.end(), [](double v) { return v > 0.5; });
      if (pos_tr == 0 || pos_tr == static_cast<long>(ytr.size()) || pos_te == 0 ||
          pos_te == static_cast<long>(yte.size())) {
        throw Error(ErrorCode::kSingleClass, "fold has a single class", "fold " + std::to_string(f));
      }
    }
    const Eigen::MatrixXd xtr = take_rows(x, train);
    const auto z = glm::Standardizer::fit(xtr);
    const auto model = fit(z.apply(xtr), ytr, binary, l2_strength);
    const Eigen::VectorXd pred = model.predict(z.apply(take_rows(x, test)));
    std::vector<double> fold_scores(test.size());
    for (std::size_t k = 0; k < test.size(); ++k) {
      out.scores[test[k]] = pred[static_cast<Eigen::Index>(k)];
      fold_scores[k] = pred[static_cast<Eigen::Index>(k)];
    }
    out.fold_metric.push_back(metric(fold_scores, yte, binary));
  }
  out.pooled = metric(out.scores, y, binary);
  return out;
}

ProbeResult cv_probe(const Eigen::MatrixXd& activations, std::span<const TrialRecord> trials, const ProbeSpec& spec,
                     const PikTable* pik) {
  if (static_cast<std::size_t>(activations.rows()) != trials.size()) {
    throw Error(ErrorCode::kLengthMismatch, "activation rows do not align with trials");
  }
  const auto rows = subset_rows(trials, spec.subset);
  if (rows.size() < 2 || rows.size() < static_cast<std::size_t>(spec.folds)) {
    throw Error(ErrorCode::kCoverage, "subset too small for cross-validation",
                to_string(spec.subset) + " n=" + std::to_string(rows.size()));
  }
  ProbeResult r;
  r.spec = spec;
  r.n = rows.size();
  std::vector<double> y;
  for (auto i : rows) {
    r.trial_ids.push_back(trials[i].trial_id);
    y.push_back(target_value(trials[i], spec.target, pik));
  }
  const bool binary = !is_continuous(spec.target);
  const Eigen::MatrixXd x = take_rows(activations, rows);
  auto cv = cross_validate(x, y, binary, spec.l2_strength, spec.folds, spec.seed, r.trial_ids);
  r.probe_scores = std::move(cv.scores);
  r.fold_of = std::move(cv.fold_of);
  r.fold_auroc = std::move(cv.fold_metric);
  r.pooled_auroc = cv.pooled;
  const auto z = glm::Standardizer::fit(x);
  const auto full = fit(z.apply(x), y, binary, spec.l2_strength);
  r.weights = full.weights;
  r.intercept = full.intercept;
  return r;
}

ProbeResult cv_probe(const store::ActivationSet& acts, std::span<const TrialRecord> trials, const ProbeSpec& spec,
                     const PikTable* pik) {
  if (acts.rows() != trials.size()) throw Error(ErrorCode::kLengthMismatch, "activation store and trials differ in size");
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (acts.trial_ids()[i] != trials[i].trial_id) {
      throw Error(ErrorCode::kLengthMismatch, "activation rows do not align with trials", trials[i].trial_id);
    }
  }
  return cv_probe(acts.matrix(spec.position, spec.layer), trials, spec, pik);
}

std::vector<SweepRow> layer_sweep(const store::ActivationSet& acts, std::span<const TrialRecord> trials,
                                  std::span<const std::string> positions, std::span<const int> layers,
                                  const ProbeSpec& spec_template, const PikTable* pik) {
  std::vector<SweepRow> out;
  for (const auto& pos : positions) {
    for (int layer : layers) {
      SweepRow row;
      row.position = pos;
      row.layer = layer;
      row.target = spec_template.target;
      row.subset = spec_template.subset;
      if (!acts.has(pos, layer)) {
        row.absent = true;
        row.error = "cell not captured";
        out.push_back(row);
        continue;
      }
      ProbeSpec spec = spec_template;
      spec.position = pos;
      spec.layer = layer;
      try {
        const auto r = cv_probe(acts, trials, spec, pik);
        row.n = r.n;
        row.pooled_auroc = r.pooled_auroc;
        row.fold_aurocs = r.fold_auroc;
      } catch (const Error& e) {
        row.absent = true;
        row.error = e.what();
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write", path.string());
  out << "position,layer,target,subset,n,pooled_auroc,fold_aurocs\n";
  for (const auto& r : rows) {
    out << r.position << ',' << r.layer << ',' << to_string(r.target) << ',' << to_string(r.subset) << ',' << r.n
        << ',';
    if (r.absent) {
      out << "NA,NA\n";
      continue;
    }
    out << fmt(r.pooled_auroc) << ',';
    for (std::size_t i = 0; i < r.fold_aurocs.size(); ++i) out << (i ? ";" : "") << fmt(r.fold_aurocs[i]);
    out << '\n';
  }
}

TransferResult probe_transfer(const ProbeResult& source, const Eigen::MatrixXd& target_activations,
                              std::span<const TrialRecord> target_trials, const std::string& source_task,
                              const std::string& target_task, const PikTable* pik) {
  if (target_activations.cols() != source.weights.size()) {
    throw Error(ErrorCode::kWidthMismatch, "source probe width differs from target activations");
  }
  const auto target = cv_probe(target_activations, target_trials, source.spec, pik);
  const auto rows = subset_rows(target_trials, source.spec.subset);
  const Eigen::MatrixXd x = take_rows(target_activations, rows);
  const auto z = glm::Standardizer::fit(x);
  const Eigen::VectorXd scores = (z.apply(x) * source.weights).array() + source.intercept;
  std::vector<double> s(scores.data(), scores.data() + scores.size()), y;
  for (auto i : rows) y.push_back(target_value(target_trials[i], source.spec.target, pik));
  TransferResult t;
  t.source_task = source_task;
  t.target_task = target_task;
  t.auroc_on_target = metric(s, y, !is_continuous(source.spec.target));
  try {
    t.weight_cosine = weight_cosine(source, target);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kZeroVector) throw;
    t.weight_cosine = std::numeric_limits<double>::quiet_NaN();
  }
  return t;
}

glm::DesignMatrix probe_score_feature(const ProbeResult& result, std::span<const std::string> trial_ids,
                                      const std::string& name) {
  std::map<std::string, double> by_id;
  for (std::size_t i = 0; i < result.trial_ids.size(); ++i) by_id[result.trial_ids[i]] = result.probe_scores[i];
  glm::DesignMatrix d;
  d.columns = {name};
  d.values.resize(static_cast<Eigen::Index>(trial_ids.size()), 1);
  std::string missing;
  for (std::size_t i = 0; i < trial_ids.size(); ++i) {
    const auto it = by_id.find(trial_ids[i]);
    if (it == by_id.end()) {
      missing += (missing.empty() ? "" : ",") + trial_ids[i];
      continue;
    }
    d.values(static_cast<Eigen::Index>(i), 0) = it->second;
  }
  if (!missing.empty()) throw Error(ErrorCode::kCoverage, "probe scores missing for trials", missing);
  return d;
}

double weight_cosine(const ProbeResult& a, const ProbeResult& b) {
  if (a.weights.size() != b.weights.size()) throw Error(ErrorCode::kWidthMismatch, "probe widths differ");
  std::vector<double> u(a.weights.data(), a.weights.data() + a.weights.size());
  std::vector<double> v(b.weights.data(), b.weights.data() + b.weights.size());
  return stats::cosine_similarity(u, v);
}

}  // namespace metaprobe::probing
