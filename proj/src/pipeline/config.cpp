#include <fstream>
#include <set>

#include "metaprobe/error.hpp"
#include "metaprobe/hash.hpp"
#include "metaprobe/pipeline.hpp"

namespace metaprobe::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void allow_keys(const json& j, const std::string& where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, "expected an object", where);
  const std::set<std::string_view> ok(keys);
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw Error(ErrorCode::kConfig, "unknown config key", where.empty() ? k : where + "." + k);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kConfig, "wrong type", where + "." + key);
  }
}

std::optional<fs::path> read_path(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  fs::path p = j.at(key).get<std::string>();
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::array<int, 2> read_band(const json& j, const char* key, std::array<int, 2> def) {
  if (!j.contains(key)) return def;
  const auto v = j.at(key).get<std::vector<int>>();
  if (v.size() != 2) throw Error(ErrorCode::kConfig, "band needs two layers", std::string("backend.route_bands.") + key);
  return {v[0], v[1]};
}

template <typename F>
auto parse_or_config(F&& f, const std::string& where) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    throw Error(ErrorCode::kConfig, e.what(), where);
  }
}

ordered_json path_json(const std::optional<fs::path>& p) { return p ? ordered_json(p->string()) : ordered_json(); }

}  // namespace

ProbeTarget parse_probe_target(std::string_view key) {
  const auto slash = key.find('/');
  ProbeTarget t;
  t.target = probing::parse_target(key.substr(0, slash));
  t.subset = slash == std::string_view::npos ? probing::Subset::kAll : probing::parse_subset(key.substr(slash + 1));
  return t;
}

std::vector<ProbeTarget> default_probe_targets() {
  using probing::Subset;
  using probing::Target;
  return {{Target::kVerification, Subset::kAll},
          {Target::kVerification, Subset::kIncorrect},
          {Target::kAnswerChanged, Subset::kIncorrect},
          {Target::kA2Correct, Subset::kIncorrect},
          {Target::kA2Correct, Subset::kIncorrectChanged}};
}

RunConfig parse_config(const json& j, const fs::path& base) {
  RunConfig c;
  allow_keys(j, "", {"task", "backend", "dataset", "judge", "conditions", "transfer", "capture", "probes", "pik",
                     "causal", "seeds", "output_dir"});
  if (j.contains("task")) c.task = parse_or_config([&] { return paradigm::parse_task(j.at("task").get<std::string>()); }, "task");

  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    allow_keys(b, "backend", {"kind", "depth", "width", "positions", "route_bands", "redundancy", "signal_gain",
                              "noise_sd", "behavior", "seed", "layout_seed"});
    auto& s = c.synthetic;
    read(b, "kind", c.backend_kind, "backend");
    read(b, "depth", s.depth, "backend");
    read(b, "width", s.width, "backend");
    read(b, "positions", s.positions, "backend");
    read(b, "redundancy", s.redundancy, "backend");
    read(b, "signal_gain", s.signal_gain, "backend");
    read(b, "noise_sd", s.noise_sd, "backend");
    read(b, "seed", s.seed, "backend");
    read(b, "layout_seed", s.layout_seed, "backend");
    if (b.contains("route_bands")) {
      const auto& r = b.at("route_bands");
      allow_keys(r, "backend.route_bands", {"lat", "panl", "last"});
      s.route_bands.lat = read_band(r, "lat", s.route_bands.lat);
      s.route_bands.panl = read_band(r, "panl", s.route_bands.panl);
      s.route_bands.last = read_band(r, "last", s.route_bands.last);
    }
    if (b.contains("behavior")) {
      const auto& h = b.at("behavior");
      allow_keys(h, "backend.behavior", {"p_correct", "detect_auroc", "y_bias", "change_gate", "correctability_auroc",
                                         "p_fix", "evidence_dprime", "evidence_sd"});
      auto& bh = s.behavior;
      read(h, "p_correct", bh.p_correct, "backend.behavior");
      read(h, "detect_auroc", bh.detect_auroc, "backend.behavior");
      read(h, "y_bias", bh.y_bias, "backend.behavior");
      read(h, "change_gate", bh.change_gate, "backend.behavior");
      read(h, "correctability_auroc", bh.correctability_auroc, "backend.behavior");
      read(h, "p_fix", bh.p_fix, "backend.behavior");
      read(h, "evidence_dprime", bh.evidence_dprime, "backend.behavior");
      read(h, "evidence_sd", bh.evidence_sd, "backend.behavior");
    }
  }

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    allow_keys(d, "dataset", {"questions", "foils", "cohort_size"});
    c.questions = read_path(d, "questions", base);
    c.foils = read_path(d, "foils", base);
    read(d, "cohort_size", c.cohort_size, "dataset");
  }
  read(j, "judge", c.judge, "");
  if (j.contains("conditions")) {
    c.conditions.clear();
    for (const auto& v : j.at("conditions")) {
      c.conditions.push_back(
          parse_or_config([&] { return paradigm::parse_condition(v.get<std::string>()); }, "conditions"));
    }
  }
  if (j.contains("transfer")) {
    const auto& t = j.at("transfer");
    allow_keys(t, "transfer", {"task", "questions", "cohort_size"});
    if (t.contains("task") && !t.at("task").is_null()) {
      c.transfer_task =
          parse_or_config([&] { return paradigm::parse_task(t.at("task").get<std::string>()); }, "transfer.task");
    }
    c.transfer_questions = read_path(t, "questions", base);
    read(t, "cohort_size", c.transfer_cohort_size, "transfer");
  }
  if (j.contains("capture")) {
    const auto& g = j.at("capture");
    allow_keys(g, "capture", {"positions", "layers"});
    read(g, "positions", c.capture_positions, "capture");
    read(g, "layers", c.capture_layers, "capture");
  }
  if (j.contains("probes")) {
    const auto& p = j.at("probes");
    allow_keys(p, "probes",
               {"positions", "layers", "headline_layer", "l2_strength", "folds", "behavioural_l2", "targets"});
    read(p, "positions", c.probe_positions, "probes");
    read(p, "layers", c.probe_layers, "probes");
    read(p, "headline_layer", c.headline_layer, "probes");
    read(p, "l2_strength", c.l2_strength, "probes");
    read(p, "folds", c.folds, "probes");
    read(p, "behavioural_l2", c.behavioural_l2, "probes");
    if (p.contains("targets")) {
      c.probe_targets.clear();
      for (const auto& v : p.at("targets")) {
        c.probe_targets.push_back(
            parse_or_config([&] { return parse_probe_target(v.get<std::string>()); }, "probes.targets"));
      }
    }
  }
  if (j.contains("pik")) {
    const auto& p = j.at("pik");
    allow_keys(p, "pik", {"enabled", "n_samples", "temperature", "max_tokens"});
    read(p, "enabled", c.pik_enabled, "pik");
    read(p, "n_samples", c.pik.n_samples, "pik");
    read(p, "temperature", c.pik.temperature, "pik");
    read(p, "max_tokens", c.pik.max_tokens, "pik");
  }
  if (j.contains("causal")) {
    const auto& k = j.at("causal");
    allow_keys(k, "causal", {"enabled", "patch_positions", "ablation_sets", "layers", "length_policy",
                             "calibration_size", "per_cell", "max_trials"});
    read(k, "enabled", c.causal_enabled, "causal");
    read(k, "patch_positions", c.patch_positions, "causal");
    read(k, "ablation_sets", c.ablation_sets, "causal");
    read(k, "layers", c.causal_layers, "causal");
    if (k.contains("length_policy")) {
      const auto v = k.at("length_policy").get<std::string>();
      if (v == "exclude") c.length_policy = causal::LengthPolicy::kExclude;
      else if (v == "truncate") c.length_policy = causal::LengthPolicy::kTruncate;
      else throw Error(ErrorCode::kConfig, "length_policy must be exclude or truncate", v);
    }
    read(k, "calibration_size", c.calibration_size, "causal");
    read(k, "per_cell", c.per_cell, "causal");
    read(k, "max_trials", c.causal_max_trials, "causal");
  }
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    allow_keys(s, "seeds", {"cohort", "folds", "pik", "calibration", "transfer"});
    read(s, "cohort", c.seeds.cohort, "seeds");
    read(s, "folds", c.seeds.folds, "seeds");
    read(s, "pik", c.seeds.pik, "seeds");
    read(s, "calibration", c.seeds.calibration, "seeds");
    read(s, "transfer", c.seeds.transfer, "seeds");
  }
  if (j.contains("output_dir")) c.output_dir = *read_path(j, "output_dir", base);
  c.pik.seed = c.seeds.pik;
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read config", path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, "config is not valid JSON", path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

ordered_json to_json(const RunConfig& c) {
  const auto& s = c.synthetic;
  const auto& h = s.behavior;
  ordered_json j;
  j["task"] = paradigm::to_string(c.task);
  j["backend"] = {{"kind", c.backend_kind},
                  {"depth", s.depth},
                  {"width", s.width},
                  {"positions", s.positions},
                  {"route_bands",
                   {{"lat", s.route_bands.lat}, {"panl", s.route_bands.panl}, {"last", s.route_bands.last}}},
                  {"redundancy", s.redundancy},
                  {"signal_gain", s.signal_gain},
                  {"noise_sd", s.noise_sd},
                  {"behavior",
                   {{"p_correct", h.p_correct},
                    {"detect_auroc", h.detect_auroc},
                    {"y_bias", h.y_bias},
                    {"change_gate", h.change_gate},
                    {"correctability_auroc", h.correctability_auroc},
                    {"p_fix", h.p_fix},
                    {"evidence_dprime", h.evidence_dprime},
                    {"evidence_sd", h.evidence_sd}}},
                  {"seed", s.seed},
                  {"layout_seed", s.layout_seed}};
  j["dataset"] = {{"questions", path_json(c.questions)}, {"foils", path_json(c.foils)}, {"cohort_size", c.cohort_size}};
  j["judge"] = c.judge;
  ordered_json conds = ordered_json::array();
  for (auto x : c.conditions) conds.push_back(paradigm::to_string(x));
  j["conditions"] = conds;
  j["transfer"] = {{"task", c.transfer_task ? ordered_json(paradigm::to_string(*c.transfer_task)) : ordered_json()},
                   {"questions", path_json(c.transfer_questions)},
                   {"cohort_size", c.transfer_cohort_size}};
  j["capture"] = {{"positions", c.capture_positions}, {"layers", c.capture_layers}};
  ordered_json targets = ordered_json::array();
  for (const auto& t : c.probe_targets) targets.push_back(t.key());
  j["probes"] = {{"positions", c.probe_positions},     {"layers", c.probe_layers},
                 {"headline_layer", c.headline_layer}, {"l2_strength", c.l2_strength},
                 {"folds", c.folds},                   {"behavioural_l2", c.behavioural_l2},
                 {"targets", targets}};
  j["pik"] = {{"enabled", c.pik_enabled},
              {"n_samples", c.pik.n_samples},
              {"temperature", c.pik.temperature},
              {"max_tokens", c.pik.max_tokens}};
  j["causal"] = {{"enabled", c.causal_enabled},
                 {"patch_positions", c.patch_positions},
                 {"ablation_sets", c.ablation_sets},
                 {"layers", c.causal_layers},
                 {"length_policy", c.length_policy == causal::LengthPolicy::kExclude ? "exclude" : "truncate"},
                 {"calibration_size", c.calibration_size},
                 {"per_cell", c.per_cell},
                 {"max_trials", c.causal_max_trials}};
  j["seeds"] = {{"cohort", c.seeds.cohort},
                {"folds", c.seeds.folds},
                {"pik", c.seeds.pik},
                {"calibration", c.seeds.calibration},
                {"transfer", c.seeds.transfer}};
  j["output_dir"] = c.output_dir.string();
  return j;
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) { throw Error(ErrorCode::kConfig, why, field); };
  if (c.backend_kind != "synthetic") fail("backend.kind", "only the synthetic backend is built in");
  try {
    backend::validate(c.synthetic);
  } catch (const Error& e) {
    fail("backend", e.what());
  }
  for (const auto* p : {&c.questions, &c.foils, &c.transfer_questions}) {
    if (*p && !fs::exists(**p)) fail((*p)->string(), "referenced path does not exist");
  }
  if (c.foils && !c.questions) fail("dataset.foils", "foils need a questions file");
  if (!c.questions && c.cohort_size < 10) fail("dataset.cohort_size", "synthetic cohort needs at least 10 items");
  if (c.judge != "exact" && c.judge != "http") fail("judge", "judge must be exact or http");
  if (c.conditions.empty() || c.conditions.front() != paradigm::Condition::kOwn) {
    fail("conditions", "the own-answer condition must come first");
  }
  if (c.transfer_task && *c.transfer_task == c.task) fail("transfer.task", "transfer task must differ from task");
  const int depth = c.synthetic.depth;
  for (const auto* layers : {&c.capture_layers, &c.probe_layers, &c.causal_layers}) {
    for (int l : *layers)
      if (l < 0 || l >= depth) fail("layers", "layer " + std::to_string(l) + " outside [0, depth)");
  }
  const auto capture_layers = resolve_layers(c, c.capture_layers);
  const std::set<int> captured(capture_layers.begin(), capture_layers.end());
  const std::set<std::string> positions(c.capture_positions.begin(), c.capture_positions.end());
  for (const auto& p : c.probe_positions) {
    if (!positions.count(p)) fail("probes.positions", "position not captured: " + p);
  }
  for (int l : resolve_layers(c, c.probe_layers)) {
    if (!captured.count(l)) fail("probes.layers", "layer not captured: " + std::to_string(l));
  }
  const int head = resolve_headline_layer(c);
  if (head < 0 || head >= depth || !captured.count(head)) fail("probes.headline_layer", "layer not captured");
  if (!positions.count("panl")) fail("capture.positions", "panl must be captured");
  if (c.folds < 2) fail("probes.folds", "folds must be >= 2");
  if (c.l2_strength < 0 || c.behavioural_l2 < 0) fail("probes.l2_strength", "penalty must be non-negative");
  if (c.probe_targets.empty()) fail("probes.targets", "no probe targets");
  if (c.pik.n_samples < 1) fail("pik.n_samples", "must be positive");
  if (c.per_cell < 1) fail("causal.per_cell", "must be positive");
  for (const auto& set : c.ablation_sets)
    if (set.empty()) fail("causal.ablation_sets", "empty position set");
}

std::string config_hash(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("output_dir");
  // Plain json sorts object keys, which makes the dump canonical.
  const json canonical = json::parse(j.dump());
  return sha256_hex(canonical.dump());
}

std::vector<int> resolve_layers(const RunConfig& c, const std::vector<int>& layers) {
  if (!layers.empty()) return layers;
  std::vector<int> all(static_cast<std::size_t>(c.synthetic.depth));
  for (int l = 0; l < c.synthetic.depth; ++l) all[static_cast<std::size_t>(l)] = l;
  return all;
}

int resolve_headline_layer(const RunConfig& c) {
  return c.headline_layer >= 0 ? c.headline_layer : c.synthetic.route_bands.panl[1];
}

}  // namespace metaprobe::pipeline
