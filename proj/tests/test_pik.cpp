#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "metaprobe/error.hpp"
#include "metaprobe/pik.hpp"
#include "metaprobe/synthetic.hpp"

using namespace metaprobe;

namespace {

// Answers "gold" with probability p on each stream.
class ScriptedSampler final : public backend::Backend {
 public:
  explicit ScriptedSampler(double p, bool sampling = true) : p_(p), sampling_(sampling) {}

  backend::BackendDescriptor descriptor() const override { return {.name = "scripted"}; }
  std::vector<backend::Token> tokenize(std::string_view) const override { return {}; }
  backend::GenerationOutput generate_greedy(std::string_view, int, const backend::ActivationRequest*,
                                            std::span<const backend::InterventionSpec>) override {
    return {};
  }
  bool supports_sampling() const override { return sampling_; }
  backend::GenerationResult sample(std::string_view prompt, int, double, std::uint64_t stream) override {
    prompts.insert(std::string(prompt));
    streams.push_back(stream);
    std::mt19937_64 rng(stream);
    const bool hit = std::uniform_real_distribution<double>(0, 1)(rng) < p_;
    backend::GenerationResult r;
    r.tokens = {hit ? " gold" : " other", "\nConfidence: Likely"};
    return r;
  }

  std::set<std::string> prompts;
  std::vector<std::uint64_t> streams;

 private:
  double p_;
  bool sampling_;
};

const std::vector<std::string> kGold{"Gold"};

}  // namespace

TEST_CASE("always, never and Bernoulli samplers") {
  paradigm::ExactMatchJudge judge;
  ScriptedSampler always(1.0), never(0.0), often(0.7);
  const auto a = pik::estimate_pik(always, "q1", paradigm::Task::kTriviaQa, "Q?", kGold, judge);
  CHECK(a.n_samples == 20);
  CHECK(a.n_match == 20);
  CHECK(a.p_ik == 1.0);
  CHECK(pik::estimate_pik(never, "q1", paradigm::Task::kTriviaQa, "Q?", kGold, judge).p_ik == 0.0);

  pik::PikOptions opts;
  opts.n_samples = 4000;
  const auto b = pik::estimate_pik(often, "q1", paradigm::Task::kTriviaQa, "Q?", kGold, judge, opts);
  CHECK(std::abs(b.p_ik - 0.7) < 0.03);
  CHECK(std::set<std::uint64_t>(often.streams.begin(), often.streams.end()).size() == 4000);
  REQUIRE(often.prompts.size() == 1);
  CHECK(often.prompts.begin()->rfind(std::string(paradigm::templates::kPhase0Header), 0) == 0);
}

TEST_CASE("estimates live on the 1/n grid and are reproducible") {
  paradigm::ExactMatchJudge judge;
  ScriptedSampler s(0.5);
  pik::PikOptions opts;
  opts.n_samples = 7;
  opts.seed = 11;
  std::vector<pik::PikEstimate> rows;
  for (int i = 0; i < 30; ++i) {
    const auto e = pik::estimate_pik(s, "q" + std::to_string(i), paradigm::Task::kTriviaQa, "Q?", kGold, judge, opts);
    CHECK(e.p_ik * 7 == doctest::Approx(std::round(e.p_ik * 7)));
    rows.push_back(e);
  }
  const auto again = pik::estimate_pik(s, "q3", paradigm::Task::kTriviaQa, "Q?", kGold, judge, opts);
  CHECK(again.n_match == rows[3].n_match);
  CHECK(pik::sample_stream(11, "q3", 0) != pik::sample_stream(12, "q3", 0));
  CHECK(pik::sample_stream(11, "q3", 0) != pik::sample_stream(11, "q3", 1));

  const auto path = std::filesystem::temp_directory_path() / "metaprobe_pik.csv";
  pik::write_pik_csv(path, rows);
  const auto back = pik::read_pik_csv(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].trial_id == rows[i].trial_id);
    CHECK(back[i].p_ik == rows[i].p_ik);
  }
  const auto table = pik::to_table(back);
  CHECK(table.at("q3") == rows[3].p_ik);
}

TEST_CASE("capability and argument errors") {
  paradigm::ExactMatchJudge judge;
  ScriptedSampler greedy_only(1.0, false);
  try {
    pik::estimate_pik(greedy_only, "q1", paradigm::Task::kTriviaQa, "Q?", kGold, judge);
    FAIL("expected capability error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCapability);
  }
  ScriptedSampler s(1.0);
  pik::PikOptions opts;
  opts.n_samples = 0;
  CHECK_THROWS_AS(pik::estimate_pik(s, "q1", paradigm::Task::kTriviaQa, "Q?", kGold, judge, opts), Error);
  CHECK_THROWS_AS(pik::read_pik_csv(std::filesystem::temp_directory_path() / "metaprobe_no_pik.csv"), Error);
}

TEST_CASE("synthetic sampling tracks the planted knowledge parameter") {
  backend::SyntheticModel m({});
  paradigm::ExactMatchJudge judge;
  pik::PikOptions opts;
  opts.n_samples = 400;
  double worst = 0.0;
  for (const auto& item : m.make_cohort(10, paradigm::Task::kTriviaQa, 3)) {
    const auto e = pik::estimate_pik(m, item.id, item.task, item.question, item.answers, judge, opts);
    const double k = m.latents(item.question, item.answers[0], item.task).knowledge;
    worst = std::max(worst, std::abs(e.p_ik - k));
  }
  CHECK(worst < 0.1);
}
