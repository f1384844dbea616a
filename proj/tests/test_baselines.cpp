#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "metaprobe/baselines.hpp"
#include "metaprobe/error.hpp"

using namespace metaprobe;
using namespace metaprobe::baselines;

namespace {

paradigm::TrialRecord record(int i, bool correct) {
  paradigm::TrialRecord r;
  r.trial_id = "t" + std::to_string(i);
  r.question = "question number w" + std::to_string(i) + " about w" + std::to_string(i + 1);
  r.a1 = "answer a" + std::to_string(i);
  r.a1_correct = correct;
  r.mean_answer_logprob = -0.1 * i;
  r.verbal_confidence = (i % 10) / 10.0;
  r.verification_logprob_diff = 0.5 * i - 3;
  return r;
}

}  // namespace

TEST_CASE("behavioural columns follow the target") {
  std::vector<paradigm::TrialRecord> t;
  for (int i = 0; i < 20; ++i) t.push_back(record(i, i % 3 == 0));
  const auto v = behavioural_features(t, probing::Target::kVerification);
  CHECK(v.design.columns == std::vector<std::string>{"mean_answer_logprob", "verbal_confidence", "a1_correct"});
  CHECK(v.design.values(3, 2) == 1.0);
  CHECK(v.design.values(4, 2) == 0.0);
  CHECK(v.dropped.empty());

  const auto c = behavioural_features(t, probing::Target::kAnswerChanged);
  CHECK(c.design.columns ==
        std::vector<std::string>{"mean_answer_logprob", "verbal_confidence", "verification_logprob_diff"});
  CHECK(c.design.values(4, 2) == -1.0);
  CHECK(c.trial_ids[7] == "t7");
}

TEST_CASE("constant columns are dropped with a warning") {
  std::vector<paradigm::TrialRecord> t;
  for (int i = 0; i < 20; ++i) t.push_back(record(i, false));
  const auto v = behavioural_features(t, probing::Target::kVerification);
  CHECK(v.design.columns == std::vector<std::string>{"mean_answer_logprob", "verbal_confidence"});
  CHECK(v.dropped == std::vector<std::string>{"a1_correct"});
  REQUIRE(v.warnings.size() == 1);

  for (auto& r : t) {
    r.mean_answer_logprob = -1;
    r.verbal_confidence = 0.5;
  }
  try {
    behavioural_features(t, probing::Target::kVerification);
    FAIL("expected constant-input error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConstantInput);
  }
  t[0].error_phase = 2;
  CHECK_THROWS_AS(behavioural_features(t, probing::Target::kVerification), Error);
}

TEST_CASE("tf-idf matches a hand computation") {
  const std::vector<std::string> docs{"a b a", "b c"};
  const auto b = tfidf(docs, 10);
  // df: a 1, b 2, c 1; highest df first, ties lexicographic.
  REQUIRE(b.vocabulary == std::vector<std::string>{"b", "a", "c"});
  const double idf1 = std::log(3.0 / 2.0) + 1.0;
  CHECK(b.idf[0] == doctest::Approx(1.0));
  CHECK(b.idf[1] == doctest::Approx(idf1));
  CHECK(b.idf[2] == doctest::Approx(idf1));

  const double a0 = 2 * idf1, b0 = 1.0, n0 = std::sqrt(a0 * a0 + b0 * b0);
  CHECK(b.values(0, 0) == doctest::Approx(b0 / n0));
  CHECK(b.values(0, 1) == doctest::Approx(a0 / n0));
  CHECK(b.values(0, 2) == 0.0);
  const double n1 = std::sqrt(1.0 + idf1 * idf1);
  CHECK(b.values(1, 0) == doctest::Approx(1.0 / n1));
  CHECK(b.values(1, 2) == doctest::Approx(idf1 / n1));

  const auto top = tfidf(docs, 1);
  CHECK(top.vocabulary == std::vector<std::string>{"b"});
  CHECK(top.values(0, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(tfidf(std::vector<std::string>{}, 5), Error);
}

TEST_CASE("surface features have 202 columns on a rich corpus") {
  std::vector<paradigm::TrialRecord> t;
  for (int i = 0; i < 150; ++i) t.push_back(record(i, i % 2 == 0));
  t.push_back(t[5]);
  t.back().trial_id = "dup";
  const auto s = surface_features(t);
  CHECK(s.design.cols() == 202);
  CHECK(s.design.columns[0].rfind("q_tfidf:", 0) == 0);
  CHECK(s.design.columns[100].rfind("a_tfidf:", 0) == 0);
  CHECK(s.design.columns[200] == "q_length");
  CHECK(s.design.columns[201] == "a_length");
  CHECK(s.warnings.empty());
  CHECK(s.design.values(5, 200) == 5.0);
  CHECK(s.design.values(5, 201) == 2.0);
  CHECK(s.design.values.row(5) == s.design.values.row(150));

  std::vector<paradigm::TrialRecord> few(t.begin(), t.begin() + 4);
  const auto small = surface_features(few);
  CHECK(small.design.cols() < 202);
  CHECK(small.warnings.size() == 2);
}

TEST_CASE("feature dumps quote awkward names") {
  FeatureBlock b;
  b.trial_ids = {"x,1"};
  b.design.columns = {"q_tfidf:\"hi\"", "plain"};
  b.design.values.resize(1, 2);
  b.design.values << 0.5, 2;
  const auto path = std::filesystem::temp_directory_path() / "metaprobe_features.csv";
  write_feature_csv(path, b);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "trial_id,\"q_tfidf:\"\"hi\"\"\",plain");
  CHECK(row == "\"x,1\",0.5,2");
}
