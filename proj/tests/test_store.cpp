#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "metaprobe/error.hpp"
#include "metaprobe/store.hpp"

using namespace metaprobe;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("metaprobe_store_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

paradigm::TrialRecord sample_record() {
  paradigm::TrialRecord r;
  r.trial_id = "q7:hard_foil";
  r.question = "Who wrote \"Dubliners\"?";
  r.gold_answers = {"James Joyce", "Joyce"};
  r.a1 = "Joyce";
  r.a1_correct = true;
  r.verbal_confidence = 0.85;
  r.confidence_class = "Very likely";
  r.mean_answer_logprob = -0.125;
  r.verification = paradigm::Verification::kY;
  r.verification_logprob_diff = 3.5;
  r.a2 = "Joyce";
  r.a2_correct = true;
  r.answer_changed = false;
  r.sdt_cell = paradigm::SdtCell::kHit;
  r.condition = paradigm::Condition::kHardFoil;
  r.task = paradigm::Task::kTriviaQa;
  return r;
}

}  // namespace

TEST_CASE("trial records round-trip through JSONL with a fixed field order") {
  const auto dir = scratch("jsonl");
  auto a = sample_record();
  auto b = sample_record();
  b.trial_id = "q8";
  b.error_phase = 2;
  b.error = "generation failed";
  const std::vector<paradigm::TrialRecord> in{a, b};
  store::write_trials(dir / "trials.jsonl", in);

  const auto out = store::read_trials(dir / "trials.jsonl");
  REQUIRE(out.size() == 2);
  CHECK(out[0].trial_id == a.trial_id);
  CHECK(out[0].gold_answers == a.gold_answers);
  CHECK(out[0].verbal_confidence == a.verbal_confidence);
  CHECK(out[0].mean_answer_logprob == a.mean_answer_logprob);
  CHECK(out[0].verification == a.verification);
  CHECK(out[0].sdt_cell == a.sdt_cell);
  CHECK(out[0].condition == a.condition);
  CHECK(out[0].complete());
  CHECK_FALSE(out[1].complete());
  CHECK(*out[1].error_phase == 2);
  CHECK(out[1].error == "generation failed");

  std::ifstream f(dir / "trials.jsonl");
  std::string line;
  std::getline(f, line);
  const std::vector<std::string> keys{"trial_id", "question", "gold_answers", "a1", "a1_correct",
                                      "verbal_confidence", "confidence_class", "mean_answer_logprob",
                                      "verification", "verification_logprob_diff", "a2", "a2_correct",
                                      "answer_changed", "sdt_cell", "condition", "task"};
  std::size_t at = 0;
  for (const auto& k : keys) {
    const auto p = line.find("\"" + k + "\":", at);
    REQUIRE_MESSAGE(p != std::string::npos, k);
    at = p;
  }
  CHECK(line.find("error_phase") == std::string::npos);
}

TEST_CASE("malformed JSONL names the line") {
  const auto dir = scratch("bad");
  std::ofstream(dir / "t.jsonl") << "{\"id\": 1, \"question\": \"q\", \"answers\": [\"a\"]}\n{not json\n";
  try {
    store::read_questions(dir / "t.jsonl", paradigm::Task::kTriviaQa);
    FAIL("expected io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
    CHECK(e.detail().find(":2") != std::string::npos);
  }
}

TEST_CASE("question files in both formats, with foils") {
  const auto dir = scratch("questions");
  std::ofstream(dir / "tqa.jsonl") << R"({"id": "a", "question": "Capital of France?", "answers": ["Paris"], "hard_foil": "Lyon"})"
                                   << "\n"
                                   << R"({"id": 2, "question": "2+2?", "answers": ["4", "four"]})" << "\n";
  std::ofstream(dir / "mnli.jsonl") << R"({"id": "m1", "premise": "A dog runs.", "hypothesis": "An animal moves.", "label": "entailment"})"
                                    << "\n";
  std::ofstream(dir / "foils.jsonl") << R"({"id": "2", "easy_foil": "5", "unrelated_foil": "Paris"})" << "\n";

  auto tqa = store::read_questions(dir / "tqa.jsonl", paradigm::Task::kTriviaQa);
  REQUIRE(tqa.size() == 2);
  CHECK(tqa[0].foils.at(paradigm::Condition::kHardFoil) == "Lyon");
  CHECK(tqa[1].id == "2");
  CHECK(tqa[1].answers.size() == 2);
  store::attach_foils(dir / "foils.jsonl", tqa);
  CHECK(tqa[1].foils.at(paradigm::Condition::kEasyFoil) == "5");
  CHECK(tqa[1].foils.at(paradigm::Condition::kUnrelatedFoil) == "Paris");

  const auto mnli = store::read_questions(dir / "mnli.jsonl", paradigm::Task::kMnli);
  REQUIRE(mnli.size() == 1);
  CHECK(mnli[0].question == "Premise: A dog runs. Hypothesis: An animal moves.");
  CHECK(mnli[0].answers == std::vector<std::string>{"entailment"});

  store::write_questions(dir / "copy.jsonl", tqa);
  const auto again = store::read_questions(dir / "copy.jsonl", paradigm::Task::kTriviaQa);
  CHECK(again[1].foils.size() == 2);
  CHECK(again[0].question == tqa[0].question);

  std::ofstream(dir / "missing.jsonl") << R"({"id": "x", "question": "q"})" << "\n";
  CHECK_THROWS_AS(store::read_questions(dir / "missing.jsonl", paradigm::Task::kTriviaQa), Error);
}

TEST_CASE("activation set saves and loads bit-exactly") {
  const auto dir = scratch("acts");
  store::ActivationSet s(3, {"t0", "t1"});
  s.put(0, {"t0", "panl", 4, {1.0f, -2.5f, 0.125f}});
  s.put(1, {"t1", "panl", 4, {3.0f, 1e-7f, -0.0f}});
  s.put(1, {"t1", "lat", 2, {7.0f, 8.0f, 9.0f}});
  CHECK(s.has("panl", 4));
  CHECK_FALSE(s.has("panl", 5));
  s.save(dir, {{"backend", "synthetic"}});

  const auto t = store::ActivationSet::load(dir);
  CHECK(t.width() == 3);
  CHECK(t.trial_ids() == s.trial_ids());
  CHECK(t.cells() == s.cells());
  CHECK(t.raw("panl", 4) == s.raw("panl", 4));
  CHECK(t.raw("lat", 2) == s.raw("lat", 2));
  const auto m = t.matrix("panl", 4);
  CHECK(m(1, 0) == 3.0);
  CHECK(m(0, 1) == -2.5);
  CHECK(fs::file_size(dir / store::cell_filename("panl", 4)) == 2 * 3 * sizeof(float));

  std::ifstream mf(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(mf);
  CHECK(manifest.at("backend") == "synthetic");
  CHECK(manifest.at("dtype") == "float32-le");
  CHECK(manifest.at("cells").size() == 2);

  fs::resize_file(dir / store::cell_filename("lat", 2), 10);
  try {
    store::ActivationSet::load(dir);
    FAIL("expected truncation error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}

TEST_CASE("activation set rejects bad slices") {
  store::ActivationSet s(2, {"t0"});
  try {
    s.put(0, {"t0", "panl", 1, {1.0f, 2.0f, 3.0f}});
    FAIL("expected width error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kWidthMismatch);
  }
  try {
    s.put(0, {"t0", "panl", 1, {1.0f, std::numeric_limits<float>::quiet_NaN()}});
    FAIL("expected non-finite error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
    CHECK(e.detail() == "t0");
  }
  CHECK_THROWS_AS(s.put(1, {"t1", "panl", 1, {1.0f, 2.0f}}), Error);
  try {
    (void)s.matrix("lat", 0);
    FAIL("expected missing cell");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingCacheCell);
  }
  CHECK_THROWS_AS(store::ActivationSet::load(fs::temp_directory_path() / "metaprobe_store_absent"), Error);
}
