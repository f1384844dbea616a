#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "metaprobe/backend.hpp"
#include "metaprobe/baselines.hpp"
#include "metaprobe/error.hpp"
#include "metaprobe/glm.hpp"
#include "metaprobe/hash.hpp"
#include "metaprobe/judge.hpp"
#include "metaprobe/pipeline.hpp"
#include "metaprobe/stats.hpp"
#include "metaprobe/store.hpp"
#include "metaprobe/trial.hpp"

namespace metaprobe::pipeline {

using nlohmann::ordered_json;
using paradigm::TrialRecord;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kPhases: return "phases";
    case Stage::kFoil: return "foil";
    case Stage::kCapture: return "capture";
    case Stage::kPik: return "pik";
    case Stage::kSweep: return "sweep";
    case Stage::kProbe: return "probe";
    case Stage::kCausal: return "causal";
    case Stage::kReport: return "report";
  }
  return "?";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::kPhases, Stage::kFoil,  Stage::kCapture, Stage::kPik,
                                    Stage::kSweep,  Stage::kProbe, Stage::kCausal,  Stage::kReport};
  return s;
}

Stage parse_stage(std::string_view s) {
  for (auto st : all_stages())
    if (to_string(st) == s) return st;
  throw Error(ErrorCode::kInvalidArgument, "unknown stage", std::string(s));
}

namespace {

std::vector<Stage> dependencies(Stage s) {
  switch (s) {
    case Stage::kFoil: return {Stage::kPhases};
    case Stage::kCapture: return {Stage::kPhases, Stage::kFoil};
    case Stage::kPik: return {Stage::kPhases};
    case Stage::kSweep: return {Stage::kCapture};
    case Stage::kProbe: return {Stage::kPhases, Stage::kFoil, Stage::kCapture, Stage::kPik};
    case Stage::kCausal: return {Stage::kPhases};
    default: return {};
  }
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const ordered_json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write", path.string());
  out << j.dump(2) << '\n';
}

ordered_json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read", path.string());
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, "malformed JSON", path.string() + ": " + e.what());
  }
}

std::vector<TrialRecord> complete_only(std::vector<TrialRecord> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](const TrialRecord& r) { return !r.complete(); }), v.end());
  return v;
}

double logit(double p) {
  p = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(p / (1.0 - p));
}

ordered_json num(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(); }

struct StageResult {
  std::size_t rows = 0;
  std::vector<std::string> outputs;
  bool disabled = false;
};

class Runner {
 public:
  Runner(const RunConfig& cfg, const RunOptions& opts) : cfg_(cfg), opts_(opts), dir_(cfg.output_dir) {}

  RunSummary run();

 private:
  backend::SyntheticModel& model() {
    if (!model_) model_ = backend::build_synthetic(cfg_.synthetic);
    return *model_;
  }
  paradigm::Judge& judge() {
    if (!judge_) {
      if (cfg_.judge == "http") {
        judge_ = std::make_unique<backend::HttpJudge>(backend::HttpJudge::from_environment(dir_ / "cache" / "judge"));
      } else {
        judge_ = std::make_unique<paradigm::ExactMatchJudge>();
      }
    }
    return *judge_;
  }
  void log(const std::string& line) {
    if (opts_.log) *opts_.log << line << '\n' << std::flush;
  }

  fs::path record_path(Stage s) const { return dir_ / "stages" / (to_string(s) + ".json"); }
  std::string input_hash(Stage s) const;
  bool up_to_date(Stage s, const std::string& hash) const;
  void write_record(Stage s, const std::string& hash, const StageResult& r) const;
  ordered_json manifest_header() const;
  std::vector<std::string> files_under(const std::string& rel) const;

  StageResult run_stage(Stage s);
  StageResult phases();
  StageResult foil();
  StageResult capture();
  StageResult pik();
  StageResult sweep();
  StageResult probe();
  StageResult causal();
  StageResult report();

  std::vector<TrialRecord> load_trials(const std::string& name) const {
    return store::read_trials(dir_ / "trials" / (name + ".jsonl"));
  }
  std::vector<paradigm::QuestionItem> primary_items();
  std::vector<paradigm::QuestionItem> transfer_items();
  std::vector<TrialRecord> run_condition(const std::vector<paradigm::QuestionItem>& items, paradigm::Condition c);
  std::vector<std::string> foil_conditions() const;
  std::vector<std::string> capture_sets() const;

  const RunConfig& cfg_;
  RunOptions opts_;
  fs::path dir_;
  std::string config_hash_;
  std::unique_ptr<backend::SyntheticModel> model_;
  std::unique_ptr<paradigm::Judge> judge_;
  std::map<Stage, ordered_json> status_;
};

std::vector<std::string> Runner::files_under(const std::string& rel) const {
  std::vector<std::string> out;
  for (const auto& f : walk_files(dir_))
    if (f.rfind(rel, 0) == 0) out.push_back(f);
  return out;
}

std::string Runner::input_hash(Stage s) const {
  ordered_json j;
  j["stage"] = to_string(s);
  j["artifact_version"] = kArtifactVersion;
  j["config_hash"] = config_hash_;
  ordered_json up = ordered_json::object();
  auto deps = dependencies(s);
  if (s == Stage::kReport) {
    for (auto d : all_stages())
      if (d != Stage::kReport) deps.push_back(d);
  }
  for (auto d : deps) {
    const auto p = record_path(d);
    up[to_string(d)] = fs::exists(p) ? read_json(p)["outputs"] : ordered_json();
  }
  j["upstream"] = up;
  return sha256_hex(j.dump());
}

bool Runner::up_to_date(Stage s, const std::string& hash) const {
  const auto p = record_path(s);
  if (!fs::exists(p)) return false;
  const auto rec = read_json(p);
  if (rec.value("input_hash", "") != hash) return false;
  for (const auto& [rel, sha] : rec["outputs"].items()) {
    const auto f = dir_ / rel;
    if (!fs::exists(f) || sha256_file(f) != sha.get<std::string>()) return false;
  }
  return true;
}

void Runner::write_record(Stage s, const std::string& hash, const StageResult& r) const {
  ordered_json rec;
  rec["stage"] = to_string(s);
  rec["input_hash"] = hash;
  rec["disabled"] = r.disabled;
  rec["rows"] = r.rows;
  ordered_json outs = ordered_json::object();
  auto files = r.outputs;
  std::sort(files.begin(), files.end());
  for (const auto& f : files) outs[f] = sha256_file(dir_ / f);
  rec["outputs"] = outs;
  write_json(record_path(s), rec);
}

ordered_json Runner::manifest_header() const {
  ordered_json h;
  h["artifact_version"] = kArtifactVersion;
  h["config_hash"] = config_hash_;
  // Descriptor of the configured backend; built lazily, so stage-free runs
  // construct it here.
  backend::SyntheticModel& m = const_cast<Runner*>(this)->model();
  h["backend"] = store::to_json(m.descriptor());
  h["seeds"] = {{"cohort", cfg_.seeds.cohort},
                {"folds", cfg_.seeds.folds},
                {"pik", cfg_.seeds.pik},
                {"calibration", cfg_.seeds.calibration},
                {"transfer", cfg_.seeds.transfer},
                {"backend", cfg_.synthetic.seed}};
  h["design_notes"] = {
      "P(IK) samples reuse the Phase-0 prompt (answer plus confidence request) and score the answer field",
      "subsets: incorrect = not a1_correct; changed = answer_changed; incorrect_changed = both",
      "causal trials whose answer is longer than the calibrated offsets are handled per causal.length_policy"};
  ordered_json stages = ordered_json::array();
  for (auto s : all_stages()) {
    auto it = status_.find(s);
    if (it != status_.end()) stages.push_back(it->second);
  }
  h["stages"] = stages;
  h["written_at"] = now_iso();
  return h;
}

std::vector<paradigm::QuestionItem> Runner::primary_items() {
  if (cfg_.questions) {
    auto items = store::read_questions(*cfg_.questions, cfg_.task);
    if (cfg_.foils) store::attach_foils(*cfg_.foils, items);
    return items;
  }
  return model().make_cohort(cfg_.cohort_size, cfg_.task, cfg_.seeds.cohort);
}

std::vector<paradigm::QuestionItem> Runner::transfer_items() {
  if (cfg_.transfer_questions) return store::read_questions(*cfg_.transfer_questions, *cfg_.transfer_task);
  return model().make_cohort(cfg_.transfer_cohort_size, *cfg_.transfer_task, cfg_.seeds.transfer);
}

std::vector<TrialRecord> Runner::run_condition(const std::vector<paradigm::QuestionItem>& items,
                                               paradigm::Condition c) {
  std::vector<TrialRecord> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    if (c != paradigm::Condition::kOwn && !item.foils.count(c)) continue;
    out.push_back(paradigm::run_trial(model(), item, c, {}, judge()).record);
  }
  return out;
}

std::vector<std::string> Runner::foil_conditions() const {
  std::vector<std::string> out;
  for (auto c : cfg_.conditions)
    if (c != paradigm::Condition::kOwn) out.push_back(paradigm::to_string(c));
  return out;
}

std::vector<std::string> Runner::capture_sets() const {
  std::vector<std::string> sets{"own"};
  for (const auto& c : foil_conditions())
    if (fs::exists(dir_ / "trials" / (c + ".jsonl"))) sets.push_back(c);
  if (cfg_.transfer_task) sets.push_back("transfer");
  return sets;
}

StageResult Runner::phases() {
  StageResult r;
  const auto items = primary_items();
  store::write_questions(dir_ / "inputs" / "questions.jsonl", items);
  const auto own = run_condition(items, paradigm::Condition::kOwn);
  store::write_trials(dir_ / "trials" / "own.jsonl", own);
  r.outputs = {"inputs/questions.jsonl", "trials/own.jsonl"};
  r.rows = own.size();
  if (cfg_.transfer_task) {
    const auto titems = transfer_items();
    store::write_questions(dir_ / "inputs" / "transfer_questions.jsonl", titems);
    store::write_trials(dir_ / "trials" / "transfer.jsonl", run_condition(titems, paradigm::Condition::kOwn));
    r.outputs.push_back("inputs/transfer_questions.jsonl");
    r.outputs.push_back("trials/transfer.jsonl");
  }
  return r;
}

StageResult Runner::foil() {
  StageResult r;
  const auto conds = foil_conditions();
  if (conds.empty()) {
    r.disabled = true;
    return r;
  }
  auto items = store::read_questions(dir_ / "inputs" / "questions.jsonl", cfg_.task);
  if (cfg_.foils) store::attach_foils(*cfg_.foils, items);
  for (const auto& name : conds) {
    const auto trials = run_condition(items, paradigm::parse_condition(name));
    if (trials.empty()) continue;
    const auto rel = "trials/" + name + ".jsonl";
    store::write_trials(dir_ / rel, trials);
    r.outputs.push_back(rel);
    r.rows += trials.size();
  }
  if (r.outputs.empty()) r.disabled = true;
  return r;
}

StageResult Runner::capture() {
  StageResult r;
  fs::remove_all(dir_ / "activations");
  const auto layers = resolve_layers(cfg_, cfg_.capture_layers);
  for (const auto& set : capture_sets()) {
    const auto trials = complete_only(load_trials(set));
    std::vector<std::string> ids;
    for (const auto& t : trials) ids.push_back(t.trial_id);
    store::ActivationSet acts(model().config().width, ids);
    for (std::size_t i = 0; i < trials.size(); ++i) {
      const auto p = paradigm::phase1_prompt(model(), trials[i]);
      backend::ActivationRequest req;
      req.layers = layers;
      for (const auto& key : cfg_.capture_positions) {
        const auto pos = p.positions.resolve(key);
        if (!pos) throw Error(ErrorCode::kCoverage, "capture position does not resolve", trials[i].trial_id + ":" + key);
        req.positions.push_back({key, *pos});
      }
      for (auto& slice : model().generate_greedy(p.render.text, 1, &req).slices) {
        slice.trial_id = trials[i].trial_id;
        acts.put(i, slice);
      }
    }
    acts.save(dir_ / "activations" / set, {{"set", set}, {"hook_point", "post-mlp-residual"}});
    r.rows += trials.size();
  }
  r.outputs = files_under("activations/");
  return r;
}

StageResult Runner::pik() {
  StageResult r;
  if (!cfg_.pik_enabled) {
    r.disabled = true;
    return r;
  }
  auto opts = cfg_.pik;
  opts.seed = cfg_.seeds.pik;
  std::vector<pik::PikEstimate> rows;
  for (const auto& t : load_trials("own")) {
    rows.push_back(pik::estimate_pik(model(), t.trial_id, t.task, t.question, t.gold_answers, judge(), opts));
  }
  pik::write_pik_csv(dir_ / "pik" / "pik.csv", rows);
  r.outputs = {"pik/pik.csv"};
  r.rows = rows.size();
  return r;
}

StageResult Runner::sweep() {
  StageResult r;
  const auto trials = complete_only(load_trials("own"));
  const auto acts = store::ActivationSet::load(dir_ / "activations" / "own");
  const auto layers = resolve_layers(cfg_, cfg_.probe_layers);
  std::vector<probing::SweepRow> rows;
  for (const auto& t : cfg_.probe_targets) {
    if (t.target == probing::Target::kPik) continue;
    probing::ProbeSpec spec;
    spec.target = t.target;
    spec.subset = t.subset;
    spec.l2_strength = cfg_.l2_strength;
    spec.folds = cfg_.folds;
    spec.seed = cfg_.seeds.folds;
    auto part = probing::layer_sweep(acts, trials, cfg_.probe_positions, layers, spec);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  fs::create_directories(dir_ / "probes");
  probing::write_sweep_csv(dir_ / "probes" / "sweep.csv", rows);
  r.outputs = {"probes/sweep.csv"};
  r.rows = rows.size();
  return r;
}

// Predictor comparison for one target on one trial set: individual
// behavioural AUROCs, the combined behavioural model, the PANL probe, the
// combination, and the nested LR test of the probe beyond behaviour.
struct TargetEval {
  ordered_json row;
  std::optional<probing::ProbeResult> probe;
  std::vector<TrialRecord> subset;
  std::optional<baselines::FeatureBlock> behaviour;
};

class Analysis {
 public:
  Analysis(const RunConfig& cfg, int layer) : cfg_(cfg), layer_(layer) {}

  probing::ProbeSpec spec(const ProbeTarget& t, const std::string& position) const {
    probing::ProbeSpec s;
    s.target = t.target;
    s.subset = t.subset;
    s.position = position;
    s.layer = layer_;
    s.l2_strength = cfg_.l2_strength;
    s.folds = cfg_.folds;
    s.seed = cfg_.seeds.folds;
    return s;
  }

  TargetEval evaluate(const std::vector<TrialRecord>& trials, const store::ActivationSet& acts, const ProbeTarget& t,
                      const std::string& condition) const {
    TargetEval e;
    auto& row = e.row;
    row["condition"] = condition;
    row["target"] = probing::to_string(t.target);
    row["subset"] = probing::to_string(t.subset);
    for (const auto& r : trials)
      if (r.complete() && probing::in_subset(r, t.subset)) e.subset.push_back(r);
    row["n"] = e.subset.size();
    try {
      std::vector<int> y;
      std::vector<double> yd;
      std::vector<std::string> ids;
      for (const auto& r : e.subset) {
        const double v = probing::target_value(r, t.target, nullptr);
        y.push_back(v > 0.5 ? 1 : 0);
        yd.push_back(v);
        ids.push_back(r.trial_id);
      }
      row["n_positive"] = std::count(y.begin(), y.end(), 1);
      e.probe = probing::cv_probe(acts, trials, spec(t, "panl"));
      row["panl"] = num(e.probe->pooled_auroc);

      e.behaviour = baselines::behavioural_features(e.subset, t.target);
      const auto& b = e.behaviour->design;
      ordered_json preds = ordered_json::object();
      for (Eigen::Index c = 0; c < b.cols(); ++c) {
        std::vector<double> col(b.values.col(c).data(), b.values.col(c).data() + b.rows());
        preds[b.columns[static_cast<std::size_t>(c)]] = num(stats::auroc(col, y));
      }
      row["predictors"] = preds;
      row["dropped"] = e.behaviour->dropped;
      row["behavioural"] =
          num(probing::cross_validate(b.values, yd, true, cfg_.behavioural_l2, cfg_.folds, cfg_.seeds.folds, ids)
                  .pooled);
      const auto score = probe_logit(*e.probe, ids);
      const auto both = b.hstack(score);
      row["behavioural_panl"] =
          num(probing::cross_validate(both.values, yd, true, cfg_.behavioural_l2, cfg_.folds, cfg_.seeds.folds, ids)
                  .pooled);
      const auto lr = nested_lr(b, both, y);
      row["lr_chi2"] = num(lr.chi2);
      row["lr_df"] = lr.df;
      row["lr_p"] = num(lr.p);
    } catch (const Error& err) {
      row["error"] = std::string(err.what()) + (err.detail().empty() ? "" : " (" + err.detail() + ")");
    }
    return e;
  }

  static glm::DesignMatrix probe_logit(const probing::ProbeResult& p, const std::vector<std::string>& ids) {
    auto d = probing::probe_score_feature(p, ids, "panl_probe");
    d.values = d.values.unaryExpr([](double v) { return logit(v); });
    return d;
  }

  static glm::LrTestResult nested_lr(const glm::DesignMatrix& restricted, const glm::DesignMatrix& full,
                                     const std::vector<int>& y) {
    const auto z = glm::Standardizer::fit(full.values);
    const auto zf = z.apply(full);
    glm::DesignMatrix zr;
    zr.columns = restricted.columns;
    zr.values = zf.values.leftCols(restricted.cols());
    zr.standardized = true;
    const auto r = glm::fit_logistic(zr, y, 0.0);
    const auto f = glm::fit_logistic(zf, y, 0.0);
    return glm::lr_test(r, f);
  }

 private:
  const RunConfig& cfg_;
  int layer_;
};

StageResult Runner::probe() {
  StageResult r;
  const int head = resolve_headline_layer(cfg_);
  const Analysis an(cfg_, head);
  const auto own = complete_only(load_trials("own"));
  const auto acts = store::ActivationSet::load(dir_ / "activations" / "own");
  std::optional<probing::PikTable> pik_table;
  if (fs::exists(dir_ / "pik" / "pik.csv")) pik_table = pik::to_table(pik::read_pik_csv(dir_ / "pik" / "pik.csv"));

  fs::remove_all(dir_ / "features");
  fs::create_directories(dir_ / "features");
  ordered_json out;
  out["headline"] = {{"position", "panl"}, {"layer", head}};

  // Own-answer predictors, plus the LR test with P(IK) in the restricted model.
  ordered_json preds = ordered_json::array();
  ordered_json lr_pik = ordered_json::array();
  std::optional<probing::ProbeResult> verification_probe;
  for (const auto& t : cfg_.probe_targets) {
    if (probing::is_continuous(t.target)) continue;
    auto e = an.evaluate(own, acts, t, "own");
    preds.push_back(e.row);
    if (e.behaviour) {
      const auto name = "features/behavioural_" + probing::to_string(t.target) + "_" + probing::to_string(t.subset) + ".csv";
      baselines::write_feature_csv(dir_ / name, *e.behaviour);
    }
    if (t.target == probing::Target::kVerification && t.subset == probing::Subset::kAll) verification_probe = e.probe;
    if (pik_table && e.probe && e.behaviour) {
      ordered_json row{{"target", probing::to_string(t.target)}, {"subset", probing::to_string(t.subset)},
                       {"n", e.subset.size()}};
      try {
        std::vector<int> y;
        std::vector<std::string> ids;
        glm::DesignMatrix pcol;
        pcol.columns = {"p_ik"};
        pcol.values.resize(static_cast<Eigen::Index>(e.subset.size()), 1);
        for (std::size_t i = 0; i < e.subset.size(); ++i) {
          y.push_back(probing::target_value(e.subset[i], t.target, nullptr) > 0.5 ? 1 : 0);
          ids.push_back(e.subset[i].trial_id);
          const auto it = pik_table->find(e.subset[i].trial_id);
          if (it == pik_table->end()) throw Error(ErrorCode::kCoverage, "P(IK) missing", e.subset[i].trial_id);
          pcol.values(static_cast<Eigen::Index>(i), 0) = it->second;
        }
        const auto restricted = e.behaviour->design.hstack(pcol);
        const auto lr = Analysis::nested_lr(restricted, restricted.hstack(Analysis::probe_logit(*e.probe, ids)), y);
        row["lr_chi2"] = num(lr.chi2);
        row["lr_df"] = lr.df;
        row["lr_p"] = num(lr.p);
      } catch (const Error& err) {
        row["error"] = err.what();
      }
      lr_pik.push_back(row);
    }
  }
  out["predictors"] = preds;

  // Foil conditions: verification, answer change, A2 correctness given change.
  ordered_json foil_rows = ordered_json::array();
  for (const auto& cond : foil_conditions()) {
    if (!fs::exists(dir_ / "activations" / cond)) continue;
    const auto trials = complete_only(load_trials(cond));
    const auto facts = store::ActivationSet::load(dir_ / "activations" / cond);
    for (const auto& t : {ProbeTarget{probing::Target::kVerification, probing::Subset::kAll},
                          ProbeTarget{probing::Target::kAnswerChanged, probing::Subset::kAll},
                          ProbeTarget{probing::Target::kA2Correct, probing::Subset::kChanged}}) {
      foil_rows.push_back(an.evaluate(trials, facts, t, cond).row);
    }
  }
  out["foil"] = foil_rows;

  // Cross-task transfer at the headline layer, plus a control position.
  ordered_json transfer_rows = ordered_json::array();
  if (cfg_.transfer_task && fs::exists(dir_ / "activations" / "transfer")) {
    const auto other = complete_only(load_trials("transfer"));
    const auto tacts = store::ActivationSet::load(dir_ / "activations" / "transfer");
    std::vector<std::pair<ProbeTarget, std::string>> jobs;
    for (const auto& t : cfg_.probe_targets)
      if (!probing::is_continuous(t.target)) jobs.push_back({t, "panl"});
    jobs.push_back({{probing::Target::kVerification, probing::Subset::kAll}, "question_third_token"});
    const auto src_task = paradigm::to_string(cfg_.task), dst_task = paradigm::to_string(*cfg_.transfer_task);
    for (const auto& [t, pos] : jobs) {
      ordered_json row{{"target", probing::to_string(t.target)}, {"subset", probing::to_string(t.subset)},
                       {"position", pos}, {"source_task", src_task}, {"target_task", dst_task}};
      try {
        const auto s = an.spec(t, pos);
        const auto a = probing::cv_probe(acts, own, s);
        const auto b = probing::cv_probe(tacts, other, s);
        const auto fwd = probing::probe_transfer(a, tacts.matrix(pos, head), other, src_task, dst_task);
        const auto bwd = probing::probe_transfer(b, acts.matrix(pos, head), own, dst_task, src_task);
        row["n_source"] = a.n;
        row["n_target"] = b.n;
        row["source_auroc"] = num(a.pooled_auroc);
        row["target_auroc"] = num(b.pooled_auroc);
        row["forward_auroc"] = num(fwd.auroc_on_target);
        row["backward_auroc"] = num(bwd.auroc_on_target);
        row["weight_cosine"] = num(fwd.weight_cosine);
      } catch (const Error& err) {
        row["error"] = err.what();
      }
      transfer_rows.push_back(row);
    }
  }
  out["transfer"] = transfer_rows;

  // Orthogonality of the verification probe and the P(IK) ridge probe.
  ordered_json orth = ordered_json::object();
  if (pik_table && verification_probe) {
    try {
      const auto pik_probe =
          probing::cv_probe(acts, own, an.spec({probing::Target::kPik, probing::Subset::kAll}, "panl"), &*pik_table);
      orth["verification_pik_cosine"] = num(probing::weight_cosine(*verification_probe, pik_probe));
      orth["pik_probe_r"] = num(pik_probe.pooled_auroc);
      orth["n"] = pik_probe.n;
    } catch (const Error& err) {
      orth["error"] = err.what();
    }
  }
  orth["lr_with_pik"] = lr_pik;
  out["orthogonality"] = orth;

  // Correlations of the verification probe score with behavioural signals.
  ordered_json corr = ordered_json::array();
  if (verification_probe) {
    std::map<std::string, std::size_t> at;
    for (std::size_t i = 0; i < verification_probe->trial_ids.size(); ++i) at[verification_probe->trial_ids[i]] = i;
    for (const auto subset : {probing::Subset::kAll, probing::Subset::kIncorrect}) {
      std::vector<double> s, lpd, conf, corr_a1, lp;
      for (const auto& t : own) {
        if (!probing::in_subset(t, subset) || !at.count(t.trial_id)) continue;
        s.push_back(logit(verification_probe->probe_scores[at[t.trial_id]]));
        lpd.push_back(t.verification_logprob_diff);
        conf.push_back(t.verbal_confidence);
        corr_a1.push_back(t.a1_correct ? 1.0 : 0.0);
        lp.push_back(t.mean_answer_logprob);
      }
      const std::vector<std::pair<std::string, const std::vector<double>*>> cols{
          {"verification_logprob_diff", &lpd},
          {"verbal_confidence", &conf},
          {"a1_correct", &corr_a1},
          {"mean_answer_logprob", &lp}};
      for (const auto& [name, v] : cols) {
        ordered_json row{{"subset", probing::to_string(subset)}, {"signal", name}, {"n", s.size()}};
        try {
          row["r"] = num(stats::pearson_r(s, *v));
        } catch (const Error&) {
          row["r"] = nullptr;
        }
        corr.push_back(row);
      }
    }
  }
  out["signal_correlations"] = corr;

  // Surface-text control.
  ordered_json surface = ordered_json::array();
  try {
    const auto sf = baselines::surface_features(own);
    baselines::write_feature_csv(dir_ / "features" / "surface.csv", sf);
    std::map<std::string, Eigen::Index> row_of;
    for (std::size_t i = 0; i < sf.trial_ids.size(); ++i) row_of[sf.trial_ids[i]] = static_cast<Eigen::Index>(i);
    for (const auto& t : cfg_.probe_targets) {
      if (probing::is_continuous(t.target)) continue;
      ordered_json row{{"target", probing::to_string(t.target)},
                       {"subset", probing::to_string(t.subset)},
                       {"columns", sf.design.cols()}};
      std::vector<std::size_t> rows;
      std::vector<double> y;
      std::vector<std::string> ids;
      for (const auto& tr : own) {
        if (!probing::in_subset(tr, t.subset)) continue;
        rows.push_back(static_cast<std::size_t>(row_of.at(tr.trial_id)));
        y.push_back(probing::target_value(tr, t.target, nullptr));
        ids.push_back(tr.trial_id);
      }
      row["n"] = rows.size();
      try {
        const auto x = sf.design.select_rows(rows);
        row["auroc"] =
            num(probing::cross_validate(x.values, y, true, cfg_.behavioural_l2, cfg_.folds, cfg_.seeds.folds, ids)
                    .pooled);
      } catch (const Error& err) {
        row["error"] = err.what();
      }
      surface.push_back(row);
    }
  } catch (const Error& err) {
    surface.push_back({{"error", err.what()}});
  }
  out["surface"] = surface;

  write_json(dir_ / "analysis" / "analysis.json", out);
  r.outputs = files_under("features/");
  r.outputs.push_back("analysis/analysis.json");
  r.rows = preds.size() + foil_rows.size() + transfer_rows.size();
  return r;
}

ordered_json baseline_json(const causal::Baseline& b) {
  return {{"n", b.n}, {"d_prime", num(b.d_prime)}, {"mean_logprob_diff", num(b.mean_logprob_diff)}};
}

ordered_json sweep_json(const causal::SweepResult& s) {
  ordered_json j;
  j["mode"] = causal::to_string(s.mode);
  j["clean"] = baseline_json(s.clean);
  j["corrupt"] = s.corrupt ? baseline_json(*s.corrupt) : ordered_json();
  j["excluded_over_length"] = s.excluded;
  ordered_json cells = ordered_json::array();
  for (const auto& c : s.cells) {
    ordered_json cell{{"positions", c.positions}, {"layer", c.layer}, {"n", c.n}};
    if (c.error.empty()) {
      cell["d_prime"] = num(c.d_prime);
      cell["mean_logprob_diff"] = num(c.mean_logprob_diff);
      cell["recovery_pct"] = c.recovery_pct ? num(*c.recovery_pct) : ordered_json();
    } else {
      cell["error"] = c.error;
    }
    cells.push_back(cell);
  }
  j["cells"] = cells;
  return j;
}

StageResult Runner::causal() {
  StageResult r;
  if (!cfg_.causal_enabled) {
    r.disabled = true;
    return r;
  }
  auto trials = complete_only(load_trials("own"));
  if (cfg_.causal_max_trials > 0 && trials.size() > cfg_.causal_max_trials) trials.resize(cfg_.causal_max_trials);

  // Calibration trials come from a disjoint synthetic cohort unless the run
  // reads questions from disk, in which case the analysed trials are used.
  std::vector<TrialRecord> calibration;
  if (cfg_.questions) {
    calibration = trials;
  } else {
    const auto items = model().make_cohort(cfg_.calibration_size, cfg_.task, cfg_.seeds.calibration);
    calibration = complete_only(run_condition(items, paradigm::Condition::kOwn));
  }
  const auto layers = resolve_layers(cfg_, cfg_.causal_layers);
  const auto emb = causal::compute_embedding_means(model(), calibration);
  std::set<std::string> ablate_positions;
  for (const auto& set : cfg_.ablation_sets) ablate_positions.insert(set.begin(), set.end());
  const std::vector<std::string> ap(ablate_positions.begin(), ablate_positions.end());
  const auto res = causal::compute_residual_means(model(), calibration, ap, layers, cfg_.per_cell);

  causal::SweepConfig patch;
  patch.mode = causal::Mode::kPatch;
  for (const auto& p : cfg_.patch_positions) patch.position_sets.push_back({p});
  patch.layers = layers;
  patch.length_policy = cfg_.length_policy;
  const auto ps = causal::sweep(model(), trials, patch, &emb, nullptr);

  causal::SweepConfig ablate;
  ablate.mode = causal::Mode::kAblate;
  ablate.position_sets = cfg_.ablation_sets;
  ablate.layers = layers;
  ablate.length_policy = cfg_.length_policy;
  const auto as = causal::sweep(model(), trials, ablate, nullptr, &res);

  fs::create_directories(dir_ / "causal");
  causal::write_sweep_csv(dir_ / "causal" / "patch.csv", ps);
  causal::write_sweep_csv(dir_ / "causal" / "ablate.csv", as);
  ordered_json balance = ordered_json::object();
  for (const auto& [cell, n] : res.balance) balance[paradigm::to_string(cell)] = n;
  ordered_json summary;
  summary["route_bands"] = {{"lat", cfg_.synthetic.route_bands.lat},
                            {"panl", cfg_.synthetic.route_bands.panl},
                            {"last", cfg_.synthetic.route_bands.last}};
  summary["depth"] = cfg_.synthetic.depth;
  summary["redundancy"] = cfg_.synthetic.redundancy;
  summary["calibration"] = {{"trials", calibration.size()},
                            {"embedding_max_offset", emb.max_offset()},
                            {"residual_source_n", res.source_n},
                            {"residual_balance", balance},
                            {"length_policy", cfg_.length_policy == causal::LengthPolicy::kExclude ? "exclude"
                                                                                                    : "truncate"}};
  summary["patch"] = sweep_json(ps);
  summary["ablate"] = sweep_json(as);
  write_json(dir_ / "causal" / "summary.json", summary);
  r.outputs = {"causal/patch.csv", "causal/ablate.csv", "causal/summary.json"};
  r.rows = ps.clean.n;
  return r;
}

StageResult Runner::report() {
  StageResult r;
  const auto res = emit_report(dir_);
  for (const auto& f : res.files) r.outputs.push_back(fs::relative(f, dir_).generic_string());
  r.rows = res.files.size();
  return r;
}

StageResult Runner::run_stage(Stage s) {
  switch (s) {
    case Stage::kPhases: return phases();
    case Stage::kFoil: return foil();
    case Stage::kCapture: return capture();
    case Stage::kPik: return pik();
    case Stage::kSweep: return sweep();
    case Stage::kProbe: return probe();
    case Stage::kCausal: return causal();
    case Stage::kReport: return report();
  }
  return {};
}

RunSummary Runner::run() {
  validate(cfg_);
  config_hash_ = config_hash(cfg_);
  RunLock lock(dir_);

  const auto manifest = dir_ / "manifest.json";
  if (fs::exists(manifest) && !opts_.resume) {
    const auto m = read_json(manifest);
    if (m.value("config_hash", "") != config_hash_) {
      throw Error(ErrorCode::kConfig, "run directory holds a different configuration; use --resume or a new --out",
                  dir_.string());
    }
  }
  for (const auto* sub : {"inputs", "trials", "pik", "probes", "analysis", "causal", "stages"}) {
    fs::create_directories(dir_ / sub);
  }
  auto resolved = to_json(cfg_);
  resolved.erase("output_dir");
  write_json(dir_ / "config.json", resolved);

  std::set<Stage> wanted;
  std::vector<Stage> todo(opts_.stages.empty() ? all_stages() : opts_.stages);
  while (!todo.empty()) {
    const auto s = todo.back();
    todo.pop_back();
    if (!wanted.insert(s).second) continue;
    for (auto d : dependencies(s)) todo.push_back(d);
  }

  RunSummary summary;
  summary.run_dir = dir_;
  for (auto s : all_stages()) {
    if (!wanted.count(s)) continue;
    const auto hash = input_hash(s);
    ordered_json st{{"stage", to_string(s)}};
    StageOutcome outcome;
    outcome.stage = s;
    if (opts_.resume && up_to_date(s, hash)) {
      const auto rec = read_json(record_path(s));
      outcome.rows = rec.value("rows", std::size_t{0});
      st["status"] = rec.value("disabled", false) ? "disabled" : "up_to_date";
      st["rows"] = outcome.rows;
      status_[s] = st;
      log(to_string(s) + ": up to date");
      summary.stages.push_back(outcome);
      continue;
    }
    st["started"] = now_iso();
    log(to_string(s) + ": running");
    try {
      fs::remove(record_path(s));
      const auto res = run_stage(s);
      write_record(s, hash, res);
      outcome.executed = true;
      outcome.rows = res.rows;
      st["status"] = res.disabled ? "disabled" : "completed";
      st["rows"] = res.rows;
      st["finished"] = now_iso();
      status_[s] = st;
      log(to_string(s) + ": " + (res.disabled ? "disabled" : "rows=" + std::to_string(res.rows)));
    } catch (const std::exception& e) {
      st["status"] = "failed";
      st["error"] = e.what();
      st["finished"] = now_iso();
      status_[s] = st;
      write_manifest(dir_, manifest_header());
      throw;
    }
    summary.stages.push_back(outcome);
  }
  if (fs::exists(dir_ / "report" / "gaps.txt")) {
    std::ifstream in(dir_ / "report" / "gaps.txt");
    for (std::string line; std::getline(in, line);)
      if (line.rfind("gap: ", 0) == 0) summary.report_gaps.push_back(line.substr(5));
  }
  write_manifest(dir_, manifest_header());
  return summary;
}

}  // namespace

RunSummary run_pipeline(const RunConfig& config, const RunOptions& options) {
  Runner runner(config, options);
  return runner.run();
}

}  // namespace metaprobe::pipeline
