#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "doctest.h"
#include "metaprobe/error.hpp"
#include "metaprobe/hash.hpp"
#include "metaprobe/pipeline.hpp"

using namespace metaprobe;
using namespace metaprobe::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("metaprobe_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.cohort_size = 150;
  c.conditions = {paradigm::Condition::kOwn, paradigm::Condition::kHardFoil};
  c.capture_positions = {"question_third_token", "lat", "panl", "prompt_last_token"};
  c.capture_layers = {2, 8};
  c.probe_layers = {2, 8};
  c.folds = 3;
  c.pik.n_samples = 5;
  c.causal_layers = {4, 8};
  c.patch_positions = {"lat", "panl"};
  c.ablation_sets = {{"panl"}};
  c.calibration_size = 600;
  c.per_cell = 5;
  c.causal_max_trials = 60;
  c.output_dir = out;
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("config parsing, defaults and unknown keys") {
  const auto c = parse_config(nlohmann::json::parse(R"({"task":"mnli","probes":{"folds":4},"pik":{"enabled":false}})"));
  CHECK(c.task == paradigm::Task::kMnli);
  CHECK(c.folds == 4);
  CHECK_FALSE(c.pik_enabled);
  CHECK(c.probe_targets.size() == 5);
  CHECK(c.synthetic.depth == 12);

  try {
    parse_config(nlohmann::json::parse(R"({"probes":{"fold":4}})"));
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    CHECK(e.detail() == "probes.fold");
  }
  CHECK(code_of([] { parse_config(nlohmann::json::parse(R"({"task":"squad"})")); }) == ErrorCode::kConfig);
  CHECK(code_of([] { parse_config(nlohmann::json::parse(R"({"probes":{"folds":"five"}})")); }) == ErrorCode::kConfig);

  const auto r = parse_config(nlohmann::json::parse(R"({"dataset":{"questions":"q.jsonl"}})"), "/data/run");
  CHECK(*r.questions == fs::path("/data/run/q.jsonl"));

  const auto back = parse_config(nlohmann::json::parse(to_json(c).dump()));
  CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("config hash ignores formatting and output directory") {
  const auto a = parse_config(nlohmann::json::parse(R"({"task":"triviaqa","probes":{"folds":5,"l2_strength":1000}})"));
  const auto b = parse_config(nlohmann::json::parse("{\n  \"probes\": {\"l2_strength\": 1000.0, \"folds\": 5},\n"
                                                    "  \"output_dir\": \"elsewhere\"\n}"));
  CHECK(config_hash(a) == config_hash(b));
  auto c = a;
  c.seeds.folds = 9;
  CHECK(config_hash(c) != config_hash(a));
  c = a;
  c.synthetic.behavior.detect_auroc = 0.95;
  CHECK(config_hash(c) != config_hash(a));
}

TEST_CASE("validation names the offending field") {
  auto check_field = [](RunConfig c, const std::string& field) {
    try {
      validate(c);
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kConfig);
      CHECK(e.detail().find(field) != std::string::npos);
    }
  };
  RunConfig c;
  validate(c);
  auto bad = c;
  bad.folds = 1;
  check_field(bad, "probes.folds");
  bad = c;
  bad.questions = "/no/such/file.jsonl";
  check_field(bad, "/no/such/file.jsonl");
  bad = c;
  bad.capture_layers = {0, 40};
  check_field(bad, "layers");
  bad = c;
  bad.backend_kind = "hf";
  check_field(bad, "backend.kind");
  bad = c;
  bad.judge = "oracle";
  check_field(bad, "judge");
  bad = c;
  bad.probe_positions = {"panl+9"};
  check_field(bad, "probes.positions");
}

TEST_CASE("empty run directory gives a gap report") {
  const auto dir = scratch("empty");
  fs::create_directories(dir);
  const auto r = emit_report(dir);
  CHECK(r.gaps.size() >= 3);
  std::ifstream in(dir / "report" / "gaps.txt");
  std::string first;
  std::getline(in, first);
  CHECK(first.rfind("gap: ", 0) == 0);
}

TEST_CASE("staged run: manifest completeness, resume and locking") {
  const auto dir = scratch("run");
  const auto cfg = small_config(dir);
  const auto first = run_pipeline(cfg);
  CHECK(first.report_gaps.empty());
  for (const auto& s : first.stages) CHECK(s.executed);

  const auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  CHECK(manifest["config_hash"] == config_hash(cfg));
  std::set<std::string> listed;
  for (const auto& f : manifest["files"]) {
    listed.insert(f["path"].get<std::string>());
    CHECK(f["sha256"] == sha256_file(dir / f["path"].get<std::string>()));
  }
  const auto walked = walk_files(dir);
  CHECK(std::set<std::string>(walked.begin(), walked.end()) == listed);
  CHECK(listed.count("report/summary_auroc.csv"));
  CHECK(listed.count("causal/patch.csv"));

  const auto before = sha256_file(dir / "report" / "summary_auroc.csv");
  fs::remove_all(dir / "analysis");
  RunOptions opts;
  opts.resume = true;
  const auto second = run_pipeline(cfg, opts);
  std::vector<std::string> executed;
  for (const auto& s : second.stages)
    if (s.executed) executed.push_back(to_string(s.stage));
  CHECK(executed == std::vector<std::string>{"probe"});
  CHECK(sha256_file(dir / "report" / "summary_auroc.csv") == before);

  {
    RunLock lock(dir);
    CHECK(code_of([&] { run_pipeline(cfg, opts); }) == ErrorCode::kConfig);
  }
  auto other = cfg;
  other.folds = 4;
  CHECK(code_of([&] { run_pipeline(other); }) == ErrorCode::kConfig);
}

TEST_CASE("a failing stage leaves a manifest marking completed stages") {
  const auto dir = scratch("fail");
  auto cfg = small_config(dir);
  cfg.per_cell = 100000;
  RunOptions opts;
  opts.stages = {Stage::kCausal};
  try {
    run_pipeline(cfg, opts);
    FAIL("expected quota error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kQuotaUnmet);
  }
  const auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  std::map<std::string, std::string> status;
  for (const auto& s : manifest["stages"]) status[s["stage"]] = s["status"];
  CHECK(status["phases"] == "completed");
  CHECK(status["causal"] == "failed");
  CHECK_FALSE(status.count("probe"));
}
