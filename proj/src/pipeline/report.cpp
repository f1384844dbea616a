#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "metaprobe/error.hpp"
#include "metaprobe/pipeline.hpp"
#include "metaprobe/stats.hpp"
#include "metaprobe/store.hpp"

namespace metaprobe::pipeline {

using nlohmann::ordered_json;

namespace {

// Reference values from the full-scale study, shown only as annotations.
const std::map<std::string, std::string>& summary_refs() {
  static const std::map<std::string, std::string> m{
      {"verification/all", "n=7223 behav=.908 panl=.986 behav_panl=.983 chi2=1100.0 p<.001"},
      {"verification/incorrect", "behav=.715 panl=.958 behav_panl=.948 chi2=443.7"},
      {"answer_changed/incorrect", "n=1764 behav=.901 panl=.921 behav_panl=.931 chi2=237.7 p<.001"},
      {"a2_correct/incorrect", "behav=.724 panl=.751 behav_panl=.760 chi2=46.4 p<.001"},
      {"a2_correct/incorrect_changed", "n=856 behav=.475 panl=.614 behav_panl=.605 chi2=9.5 p<.01"},
  };
  return m;
}

const std::map<std::string, std::string>& predictor_refs() {
  static const std::map<std::string, std::string> m{
      {"verification/all", "logprob=.665 conf=.800 a1_correct=.843 combined=.908 panl=.986 combined_panl=.983 chi2=1100.0"},
      {"verification/incorrect", "logprob=.530 conf=.703 combined=.715 panl=.958 combined_panl=.948 chi2=443.7"},
      {"answer_changed/incorrect",
       "logprob=.508 conf=.657 verif_ld=.907 combined=.901 panl=.921 combined_panl=.931 chi2=237.7"},
      {"a2_correct/incorrect", "logprob=.526 conf=.567 verif_ld=.740 combined=.724 panl=.751 combined_panl=.760 chi2=46.4"},
      {"a2_correct/incorrect_changed",
       "logprob=.518 conf=.524 verif_ld=.531 combined=.475 panl=.614 combined_panl=.605 chi2=9.5"},
  };
  return m;
}

const std::map<std::string, std::string>& foil_refs() {
  static const std::map<std::string, std::string> m{
      {"hard_foil/verification/all", "n=1924 conf=.886 behav=.879 panl=.981 behav_panl=.977 chi2=442.1"},
      {"easy_foil/verification/all", "n=1924 conf=.840 behav=.827 panl=.985 behav_panl=.983 chi2=258.0"},
      {"unrelated_foil/verification/all", "n=1929 conf=.775 behav=.771 panl=.995 behav_panl=.994 chi2=84.8"},
      {"hard_foil/answer_changed/all", "conf=.842 verif_ld=.930 behav=.922 panl=.938 behav_panl=.941 chi2=165.8"},
      {"easy_foil/answer_changed/all", "conf=.832 verif_ld=.973 behav=.967 panl=.965 behav_panl=.972 chi2=74.4"},
      {"unrelated_foil/answer_changed/all", "conf=.849 verif_ld=.994 behav=.993 panl=.989 behav_panl=.995 chi2=18.8"},
      {"hard_foil/a2_correct/changed", "n=1444 conf=.510 verif_ld=.656 behav=.637 panl=.859 behav_panl=.852 chi2=67.5"},
      {"easy_foil/a2_correct/changed", "n=1791 conf=.514 verif_ld=.697 behav=.694 panl=.822 behav_panl=.820 chi2=118.0"},
      {"unrelated_foil/a2_correct/changed",
       "n=1915 conf=.519 verif_ld=.711 behav=.706 panl=.813 behav_panl=.805 chi2=122.6"},
  };
  return m;
}

const std::map<std::string, std::string>& transfer_refs() {
  static const std::map<std::string, std::string> m{
      {"verification/all", "source=.986 target=.868 forward=.587 backward=.934 cos=+.132"},
      {"verification/incorrect", "source=.958 target=.813 forward=.573 backward=.897 cos=+.143"},
      {"a2_correct/all", "source=.891 target=.697 forward=.560 backward=.549 cos=+.051"},
      {"a2_correct/incorrect", "source=.752 target=.811 forward=.627 backward=.719 cos=+.069"},
      {"a2_correct/changed", "source=.617 target=.857 forward=.602 backward=.474 cos=+.023"},
      {"a2_correct/incorrect_changed", "source=.621 target=.862 forward=.547 backward=.477 cos=+.027"},
  };
  return m;
}

std::string ref(const std::map<std::string, std::string>& m, const std::string& key) {
  const auto it = m.find(key);
  return it == m.end() ? "NA" : it->second;
}

std::string fmt(double x) {
  if (!std::isfinite(x)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

std::string cell(const ordered_json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return "NA";
  const auto& v = j.at(key);
  if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<long long>());
  if (v.is_number()) return fmt(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  void write(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write", path.string());
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << quote(r[i]);
      out << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

ordered_json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read", path.string());
  return ordered_json::parse(in);
}

std::string key_of(const ordered_json& row) { return cell(row, "target") + "/" + cell(row, "subset"); }

std::string p_text(const ordered_json& row) { return cell(row, "lr_p"); }

class Emitter {
 public:
  explicit Emitter(const fs::path& run_dir) : dir_(run_dir), out_(run_dir / "report") {}

  ReportResult emit();

 private:
  void save(const Csv& csv, const std::string& name) {
    csv.write(out_ / name);
    result_.files.push_back(out_ / name);
  }
  void gap(const std::string& table, const std::string& input, const std::string& stage) {
    result_.gaps.push_back(table + ": missing " + input + " (" + stage + " stage)");
  }
  bool disabled(const std::string& stage) const {
    const auto p = dir_ / "stages" / (stage + ".json");
    if (!fs::exists(p)) return false;
    return read_json_file(p).value("disabled", false);
  }

  void summary_tables(const ordered_json& a);
  void foil_table(const ordered_json& a);
  void transfer_table(const ordered_json& a);
  void orthogonality_table(const ordered_json& a);
  void correlation_table(const ordered_json& a);
  void surface_table(const ordered_json& a);
  void sdt_table();
  void probe_curves();
  void causal_tables();

  fs::path dir_;
  fs::path out_;
  ordered_json config_;
  ReportResult result_;
  std::vector<std::string> omitted_;
};

void Emitter::summary_tables(const ordered_json& a) {
  Csv summary({"target", "n", "behav", "panl", "behav_panl", "lr_chi2", "p", "paper"});
  std::map<std::string, Csv> by_target;
  for (const auto& row : a["predictors"]) {
    const auto key = key_of(row);
    summary.add({key, cell(row, "n"), cell(row, "behavioural"), cell(row, "panl"), cell(row, "behavioural_panl"),
                 cell(row, "lr_chi2"), p_text(row), ref(summary_refs(), key)});
    const auto target = cell(row, "target");
    auto it = by_target.find(target);
    if (it == by_target.end()) {
      it = by_target
               .emplace(target, Csv({"target", "subset", "n", "mean_answer_logprob", "verbal_confidence", "a1_correct",
                                     "verification_logprob_diff", "combined", "panl", "combined_panl", "lr_chi2", "p",
                                     "error", "paper"}))
               .first;
    }
    const auto preds = row.value("predictors", ordered_json::object());
    it->second.add({target, cell(row, "subset"), cell(row, "n"), cell(preds, "mean_answer_logprob"),
                    cell(preds, "verbal_confidence"), cell(preds, "a1_correct"),
                    cell(preds, "verification_logprob_diff"), cell(row, "behavioural"), cell(row, "panl"),
                    cell(row, "behavioural_panl"), cell(row, "lr_chi2"), p_text(row),
                    row.contains("error") ? cell(row, "error") : "", ref(predictor_refs(), key)});
  }
  save(summary, "summary_auroc.csv");
  for (const auto& [target, csv] : by_target) save(csv, "predictors_" + target + ".csv");
}

void Emitter::foil_table(const ordered_json& a) {
  if (a["foil"].empty()) {
    omitted_.push_back("foil_auroc.csv: no foil conditions were run");
    return;
  }
  Csv csv({"condition", "target", "subset", "n", "conf", "verif_ld", "behav", "panl", "behav_panl", "lr_chi2", "p",
           "error", "paper"});
  for (const auto& row : a["foil"]) {
    const auto preds = row.value("predictors", ordered_json::object());
    const auto cond = cell(row, "condition");
    csv.add({cond, cell(row, "target"), cell(row, "subset"), cell(row, "n"), cell(preds, "verbal_confidence"),
             cell(preds, "verification_logprob_diff"), cell(row, "behavioural"), cell(row, "panl"),
             cell(row, "behavioural_panl"), cell(row, "lr_chi2"), p_text(row),
             row.contains("error") ? cell(row, "error") : "", ref(foil_refs(), cond + "/" + key_of(row))});
  }
  save(csv, "foil_auroc.csv");
}

void Emitter::transfer_table(const ordered_json& a) {
  if (a["transfer"].empty()) {
    omitted_.push_back("transfer.csv: no transfer task configured");
    return;
  }
  Csv csv({"target", "subset", "position", "source_task", "target_task", "n_source", "n_target", "source_auroc",
           "target_auroc", "forward_auroc", "backward_auroc", "weight_cosine", "error", "paper"});
  for (const auto& row : a["transfer"]) {
    const bool control = cell(row, "position") != "panl";
    csv.add({cell(row, "target"), cell(row, "subset"), cell(row, "position"), cell(row, "source_task"),
             cell(row, "target_task"), cell(row, "n_source"), cell(row, "n_target"), cell(row, "source_auroc"),
             cell(row, "target_auroc"), cell(row, "forward_auroc"), cell(row, "backward_auroc"),
             cell(row, "weight_cosine"), row.contains("error") ? cell(row, "error") : "",
             control ? "auroc=.45-.53 |cos|<.01" : ref(transfer_refs(), key_of(row))});
  }
  save(csv, "transfer.csv");
}

void Emitter::orthogonality_table(const ordered_json& a) {
  const auto& o = a["orthogonality"];
  if (!o.contains("verification_pik_cosine") && o["lr_with_pik"].empty()) {
    omitted_.push_back("orthogonality.csv: no P(IK) estimates");
    return;
  }
  Csv csv({"measure", "target", "subset", "n", "value", "p", "paper"});
  csv.add({"verification_pik_weight_cosine", "verification", "all", cell(o, "n"), cell(o, "verification_pik_cosine"),
           "NA", "+.007"});
  csv.add({"pik_probe_pearson_r", "pik", "all", cell(o, "n"), cell(o, "pik_probe_r"), "NA", "NA"});
  for (const auto& row : o["lr_with_pik"]) {
    const auto t = cell(row, "target");
    const std::string paper = t == "answer_changed" ? "chi2=101.7 p<1e-23" : t == "a2_correct" ? "chi2=99.0 p<1e-23" : "NA";
    csv.add({"lr_chi2_beyond_behav_and_pik", t, cell(row, "subset"), cell(row, "n"), cell(row, "lr_chi2"),
             cell(row, "lr_p"), paper});
  }
  save(csv, "orthogonality.csv");
}

void Emitter::correlation_table(const ordered_json& a) {
  static const std::map<std::string, std::string> refs{
      {"all/verification_logprob_diff", ".91"}, {"all/verbal_confidence", ".60"}, {"all/a1_correct", ".46"},
      {"all/mean_answer_logprob", ".21"},       {"incorrect/verification_logprob_diff", ".83"},
      {"incorrect/verbal_confidence", ".60"},   {"incorrect/mean_answer_logprob", ".02"}};
  Csv csv({"subset", "signal", "n", "r", "paper"});
  for (const auto& row : a["signal_correlations"]) {
    csv.add({cell(row, "subset"), cell(row, "signal"), cell(row, "n"), cell(row, "r"),
             ref(refs, cell(row, "subset") + "/" + cell(row, "signal"))});
  }
  save(csv, "signal_correlations.csv");
}

void Emitter::surface_table(const ordered_json& a) {
  static const std::map<std::string, std::string> refs{
      {"verification", ".564"}, {"answer_changed", ".564"}, {"a2_correct", ".585"}};
  Csv csv({"target", "subset", "n", "columns", "auroc", "error", "paper"});
  for (const auto& row : a["surface"]) {
    csv.add({cell(row, "target"), cell(row, "subset"), cell(row, "n"), cell(row, "columns"), cell(row, "auroc"),
             row.contains("error") ? cell(row, "error") : "", ref(refs, cell(row, "target"))});
  }
  save(csv, "surface_control.csv");
}

void Emitter::sdt_table() {
  const auto own_path = dir_ / "trials" / "own.jsonl";
  if (!fs::exists(own_path)) {
    gap("sdt_summary.csv", "trials/own.jsonl", "phases");
    return;
  }
  Csv csv({"condition", "cell", "n", "hit_rate", "fa_rate", "d_prime", "criterion", "mean_confidence", "change_rate",
           "a2_correct_given_changed", "paper"});
  static const std::map<std::string, std::string> cond_refs{{"own", "d'=1.67 c=-1.34"},
                                                            {"hard_foil", "d'=2.57"},
                                                            {"easy_foil", "d'=3.07"},
                                                            {"unrelated_foil", "d'=5.08 c=-0.14"}};
  static const std::map<std::string, std::string> cell_refs{
      {"own/hit", "98% of correct answers confirmed"},
      {"own/fa", "68% of incorrect answers endorsed; change rate .27"},
      {"own/cr", "change rate .97"}};

  std::vector<std::string> conds{"own"};
  for (const auto& c : {"hard_foil", "easy_foil", "unrelated_foil"})
    if (fs::exists(dir_ / "trials" / (std::string(c) + ".jsonl"))) conds.push_back(c);

  stats::SdtCounts own_counts;
  for (const auto& cond : conds) {
    std::map<paradigm::SdtCell, std::vector<const paradigm::TrialRecord*>> cells;
    const auto trials = store::read_trials(dir_ / "trials" / (cond + ".jsonl"));
    for (const auto& t : trials)
      if (t.complete()) cells[t.sdt_cell].push_back(&t);
    stats::SdtCounts counts;
    counts.hits = static_cast<std::int64_t>(cells[paradigm::SdtCell::kHit].size());
    counts.misses = static_cast<std::int64_t>(cells[paradigm::SdtCell::kMiss].size());
    counts.false_alarms = static_cast<std::int64_t>(cells[paradigm::SdtCell::kFa].size());
    counts.correct_rejections = static_cast<std::int64_t>(cells[paradigm::SdtCell::kCr].size());
    if (cond == "own") own_counts = counts;
    // Foil answers are all incorrect, so their hit rate comes from the
    // own-answer trials.
    if (cond != "own") {
      counts.hits = own_counts.hits;
      counts.misses = own_counts.misses;
    }
    std::string hr = "NA", fr = "NA", d = "NA", c = "NA";
    if (counts.n_signal() > 0 && counts.n_noise() > 0) {
      const auto m = stats::compute_sdt(counts);
      hr = fmt(m.hit_rate);
      fr = fmt(m.fa_rate);
      d = fmt(m.d_prime);
      c = fmt(m.criterion);
    }
    std::size_t total = 0;
    for (const auto& [k, v] : cells) total += v.size();
    csv.add({cond, "all", std::to_string(total), hr, fr, d, c, "NA", "NA", "NA", ref(cond_refs, cond)});
    for (const auto sc : {paradigm::SdtCell::kHit, paradigm::SdtCell::kMiss, paradigm::SdtCell::kFa,
                          paradigm::SdtCell::kCr}) {
      const auto& v = cells[sc];
      if (v.empty()) continue;
      double conf = 0, changed = 0, fixed = 0;
      for (const auto* t : v) {
        conf += t->verbal_confidence;
        if (t->answer_changed) {
          ++changed;
          if (t->a2_correct) ++fixed;
        }
      }
      const auto name = paradigm::to_string(sc);
      std::string paper = ref(cell_refs, cond + "/" + name);
      if (cond == "own" && (sc == paradigm::SdtCell::kFa || sc == paradigm::SdtCell::kCr) && paper == "NA") {
        paper = "a2 | changed ~.29-.34";
      }
      csv.add({cond, name, std::to_string(v.size()), "NA", "NA", "NA", "NA", fmt(conf / static_cast<double>(v.size())),
               fmt(changed / static_cast<double>(v.size())), changed > 0 ? fmt(fixed / changed) : "NA", paper});
    }
  }
  save(csv, "sdt_summary.csv");
}

void Emitter::probe_curves() {
  const auto path = dir_ / "probes" / "sweep.csv";
  if (!fs::exists(path)) {
    gap("probe_curves.csv", "probes/sweep.csv", "sweep");
    return;
  }
  std::ifstream in(path);
  std::ofstream out(out_ / "probe_curves.csv", std::ios::binary);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    out << line << (header ? ",paper" : ",NA") << '\n';
    header = false;
  }
  result_.files.push_back(out_ / "probe_curves.csv");
}

void Emitter::causal_tables() {
  const auto path = dir_ / "causal" / "summary.json";
  if (!fs::exists(path)) {
    if (disabled("causal")) {
      omitted_.push_back("causal_curves.csv, causal_summary.csv: causal stage disabled in config");
    } else {
      gap("causal_curves.csv, causal_summary.csv", "causal/summary.json", "causal");
    }
    return;
  }
  const auto s = read_json_file(path);
  Csv curves({"mode", "positions", "layer", "n", "d_prime", "mean_logprob_diff", "recovery_pct", "paper"});
  for (const auto* mode : {"patch", "ablate"}) {
    for (const auto& c : s[mode]["cells"]) {
      std::string pos;
      for (const auto& p : c["positions"]) pos += (pos.empty() ? "" : "+") + p.get<std::string>();
      curves.add({mode, pos, cell(c, "layer"), cell(c, "n"), cell(c, "d_prime"), cell(c, "mean_logprob_diff"),
                  cell(c, "recovery_pct"), "NA"});
    }
  }
  save(curves, "causal_curves.csv");

  Csv summary({"measure", "positions", "layer", "value", "paper"});
  const auto& patch = s["patch"];
  const auto& ablate = s["ablate"];
  summary.add({"patch_clean_d_prime", "", "", cell(patch["clean"], "d_prime"), "1.17"});
  summary.add({"patch_corrupt_d_prime", "", "", cell(patch["corrupt"], "d_prime"), "0.09"});
  summary.add({"excluded_over_length", "", "", cell(patch, "excluded_over_length"), "NA"});
  static const std::map<std::string, std::string> peak_refs{{"lat", "d'=1.23 (~100%) at L15 of 46"},
                                                            {"panl", "d'=0.89 (~74%) at L30 of 46"},
                                                            {"prompt_last_token", "d'=1.25 (~107%) at L35 of 46"}};
  std::map<std::string, std::pair<int, double>> peaks;
  for (const auto& c : patch["cells"]) {
    if (!c.contains("recovery_pct") || c["recovery_pct"].is_null()) continue;
    const auto pos = c["positions"][0].get<std::string>();
    const double rec = c["recovery_pct"].get<double>();
    auto it = peaks.find(pos);
    if (it == peaks.end() || rec > it->second.second) peaks[pos] = {c["layer"].get<int>(), rec};
  }
  for (const auto& [pos, pk] : peaks) {
    summary.add({"patch_peak_recovery_pct", pos, std::to_string(pk.first), fmt(pk.second), ref(peak_refs, pos)});
  }

  const double clean = ablate["clean"].value("d_prime", std::nan(""));
  summary.add({"ablate_clean_d_prime", "", "", cell(ablate["clean"], "d_prime"), "1.20"});
  std::map<std::string, std::map<int, double>> by_set;
  for (const auto& c : ablate["cells"]) {
    if (!c.contains("d_prime") || c["d_prime"].is_null()) continue;
    std::string pos;
    for (const auto& p : c["positions"]) pos += (pos.empty() ? "" : "+") + p.get<std::string>();
    by_set[pos][c["layer"].get<int>()] = c["d_prime"].get<double>();
  }
  for (const auto& [pos, layers] : by_set) {
    int worst_layer = -1;
    double worst = 0;
    for (const auto& [l, d] : layers) {
      if (worst_layer < 0 || std::abs(d - clean) > worst) {
        worst = std::abs(d - clean);
        worst_layer = l;
      }
    }
    std::string paper = "NA";
    if (pos == "panl") paper = "0.062";
    summary.add({"ablate_max_abs_delta_d_prime", pos, std::to_string(worst_layer), fmt(worst), paper});
    int low_layer = -1;
    double low = 0;
    for (const auto& [l, d] : layers) {
      if (low_layer < 0 || d < low) {
        low = d;
        low_layer = l;
      }
    }
    paper = pos == "lat" ? "-0.21 at L22 of 46" : pos == "lat+panl" ? "0.31" : "NA";
    summary.add({"ablate_min_d_prime", pos, std::to_string(low_layer), fmt(low), paper});
  }
  if (by_set.count("lat") && by_set.count("lat+panl")) {
    int best_layer = -1;
    double best = 0;
    for (const auto& [l, d] : by_set["lat"]) {
      const auto it = by_set["lat+panl"].find(l);
      if (it == by_set["lat+panl"].end()) continue;
      if (best_layer < 0 || d - it->second > best) {
        best = d - it->second;
        best_layer = l;
      }
    }
    summary.add({"ablate_joint_extra_drop_vs_lat", "lat+panl", std::to_string(best_layer), fmt(best), "NA"});
  }
  save(summary, "causal_summary.csv");
}

ReportResult Emitter::emit() {
  fs::remove_all(out_);
  fs::create_directories(out_);

  sdt_table();

  const auto analysis = dir_ / "analysis" / "analysis.json";
  if (fs::exists(analysis)) {
    const auto a = read_json_file(analysis);
    summary_tables(a);
    foil_table(a);
    transfer_table(a);
    orthogonality_table(a);
    correlation_table(a);
    surface_table(a);
  } else {
    gap("summary_auroc.csv, predictors_*.csv, foil_auroc.csv, transfer.csv, orthogonality.csv, "
        "signal_correlations.csv, surface_control.csv",
        "analysis/analysis.json", "probe");
  }
  probe_curves();
  causal_tables();

  std::ofstream g(out_ / "gaps.txt", std::ios::binary);
  for (const auto& line : result_.gaps) g << "gap: " << line << '\n';
  for (const auto& line : omitted_) g << "omitted: " << line << '\n';
  g.close();
  result_.files.push_back(out_ / "gaps.txt");
  std::sort(result_.files.begin(), result_.files.end());
  return std::move(result_);
}

}  // namespace

ReportResult emit_report(const fs::path& run_dir) {
  Emitter e(run_dir);
  return e.emit();
}

}  // namespace metaprobe::pipeline
