#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "metaprobe/causal.hpp"
#include "metaprobe/error.hpp"
#include "metaprobe/stats.hpp"
#include "metaprobe/synthetic.hpp"
#include "metaprobe/trial.hpp"

using namespace metaprobe;
using namespace metaprobe::causal;

namespace {

backend::SyntheticModel& model() {
  static backend::SyntheticModel m([] {
    backend::SyntheticConfig c;
    c.behavior.detect_auroc = 0.95;
    return c;
  }());
  return m;
}

std::vector<paradigm::TrialRecord> cohort(std::size_t n, std::uint64_t seed) {
  paradigm::ExactMatchJudge judge;
  std::vector<paradigm::TrialRecord> out;
  for (const auto& item : model().make_cohort(n, paradigm::Task::kTriviaQa, seed)) {
    out.push_back(paradigm::run_trial(model(), item, paradigm::Condition::kOwn, {}, judge).record);
  }
  return out;
}

std::size_t answer_tokens(const paradigm::TrialRecord& r) {
  const auto t = prepare(model(), r);
  return t.positions.lat - t.positions.answer_first + 1;
}

std::vector<float> state(const PreparedTrial& t, std::size_t pos, int layer) {
  backend::ActivationRequest req;
  req.positions = {{"p", pos}};
  req.layers = {layer};
  return model().generate_greedy(t.prompt, 1, &req).slices.at(0).vector;
}

Outcome clean_outcome(const paradigm::TrialRecord& r) {
  const auto t = prepare(model(), r);
  const auto g = model().generate_greedy(t.prompt, 1);
  Outcome o;
  o.verification = g.result.tokens[0].back() == 'Y' ? paradigm::Verification::kY : paradigm::Verification::kN;
  o.logprob_diff = backend::verification_logprob_diff(g.result);
  return o;
}

}  // namespace

TEST_CASE("embedding means are per-offset averages of layer-0 states") {
  const auto trials = cohort(6, 1);
  const auto m = compute_embedding_means(model(), trials);
  CHECK(m.kind == MeansKind::kEmbedding);
  CHECK(m.source_n == 6);

  std::map<int, std::vector<double>> sum;
  std::map<int, int> count;
  std::size_t longest = 0;
  for (const auto& r : trials) {
    const auto t = prepare(model(), r);
    const auto len = answer_tokens(r);
    longest = std::max(longest, len);
    for (std::size_t k = 0; k < len; ++k) {
      const auto v = state(t, t.positions.answer_first + k, 0);
      auto& s = sum[static_cast<int>(k)];
      if (s.empty()) s.assign(v.size(), 0.0);
      for (std::size_t j = 0; j < v.size(); ++j) s[j] += v[j];
      ++count[static_cast<int>(k)];
    }
  }
  CHECK(m.max_offset() == static_cast<int>(longest) - 1);
  for (const auto& [k, s] : sum) {
    const auto& got = m.offset_means.at(k);
    for (std::size_t j = 0; j < s.size(); ++j) CHECK(got[j] == doctest::Approx(s[j] / count[k]).epsilon(1e-6));
  }
}

TEST_CASE("a trial used as its own calibration leaves the corrupted run clean") {
  const auto trials = cohort(5, 2);
  for (const auto& r : trials) {
    const std::vector<paradigm::TrialRecord> self{r, r, r};
    const auto m = compute_embedding_means(model(), self);
    const auto t = prepare(model(), r);
    CHECK(m.offset_means.at(0) == state(t, t.positions.answer_first, 0));
    const auto run = corrupt_run(model(), r, m);
    const auto clean = clean_outcome(r);
    CHECK(backend::verification_logprob_diff(run.result) == clean.logprob_diff);
  }
}

TEST_CASE("restoring the final readout state restores the clean outcome") {
  const auto trials = cohort(40, 3);
  const auto means = compute_embedding_means(model(), trials);
  const int last = model().config().depth - 1;
  const std::string pos = "prompt_last_token";
  const std::vector<std::string> positions{pos};
  const std::vector<int> layers{last};
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& r = trials[i];
    const auto t = prepare(model(), r);
    const auto cache = capture_clean(model(), t, positions, layers);
    const auto o = patch_run(model(), r, pos, last, cache, means, LengthPolicy::kTruncate);
    CHECK(o.logprob_diff == clean_outcome(r).logprob_diff);
    CHECK_THROWS_AS(patch_run(model(), r, pos, last - 1, cache, means, LengthPolicy::kTruncate), Error);
  }
}

TEST_CASE("over-length answers are excluded or truncated") {
  const auto trials = cohort(60, 4);
  std::vector<paradigm::TrialRecord> short_ones, long_ones;
  for (const auto& r : trials) (answer_tokens(r) == 1 ? short_ones : long_ones).push_back(r);
  REQUIRE(!short_ones.empty());
  REQUIRE(!long_ones.empty());
  const auto means = compute_embedding_means(model(), short_ones);
  CHECK(means.max_offset() == 0);

  const auto t = prepare(model(), long_ones[0]);
  CHECK_FALSE(corruption_spec(t, means, LengthPolicy::kExclude).has_value());
  const auto spec = corruption_spec(t, means, LengthPolicy::kTruncate);
  REQUIRE(spec.has_value());
  CHECK(spec->cells.size() == 1);
  try {
    corrupt_run(model(), long_ones[0], means);
    FAIL("expected coverage error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCoverage);
    CHECK(e.detail() == long_ones[0].trial_id);
  }

  SweepConfig cfg;
  cfg.position_sets = {{"lat"}};
  cfg.layers = {};
  const auto excl = sweep(model(), trials, cfg, &means, nullptr);
  CHECK(excl.excluded == long_ones.size());
  CHECK(excl.clean.n == short_ones.size());
  CHECK(excl.cells.empty());
  REQUIRE(excl.corrupt.has_value());
  cfg.length_policy = LengthPolicy::kTruncate;
  CHECK(sweep(model(), trials, cfg, &means, nullptr).excluded == 0);
}

TEST_CASE("recovery definition") {
  CHECK(*recovery(2.0, 3.0, 1.0) == doctest::Approx(50.0));
  CHECK(*recovery(3.0, 3.0, 1.0) == doctest::Approx(100.0));
  CHECK(*recovery(0.0, 3.0, 1.0) == doctest::Approx(-50.0));
  CHECK_FALSE(recovery(2.0, 1.0, 1.0).has_value());
  CHECK_FALSE(recovery(2.0, 1.0 + 1e-7, 1.0).has_value());
}

TEST_CASE("d-prime accumulation matches the SDT oracle") {
  DprimeAccumulator acc;
  const Outcome yes{paradigm::Verification::kY, 1.0}, no{paradigm::Verification::kN, -1.0};
  for (int i = 0; i < 30; ++i) acc.add(true, yes);
  for (int i = 0; i < 10; ++i) acc.add(true, no);
  for (int i = 0; i < 5; ++i) acc.add(false, yes);
  for (int i = 0; i < 15; ++i) acc.add(false, no);
  const auto b = acc.finish();
  CHECK(b.n == 60);
  CHECK(b.d_prime == doctest::Approx(stats::normal_quantile(0.75) - stats::normal_quantile(0.25)));
  CHECK(b.mean_logprob_diff == doctest::Approx(10.0 / 60.0));
}

TEST_CASE("residual means are balanced across SDT cells") {
  const auto trials = cohort(300, 5);
  const std::vector<std::string> positions{"panl", "lat"};
  const std::vector<int> layers{8};
  const auto m = compute_residual_means(model(), trials, positions, layers, 3);
  CHECK(m.source_n == 12);
  for (const auto& [cell, n] : m.balance) CHECK(n == 3);

  std::vector<double> sum(static_cast<std::size_t>(model().config().width), 0.0);
  std::map<paradigm::SdtCell, int> taken;
  for (const auto& r : trials) {
    if (taken[r.sdt_cell]++ >= 3) continue;
    const auto t = prepare(model(), r);
    const auto v = state(t, t.positions.panl, 8);
    for (std::size_t j = 0; j < v.size(); ++j) sum[j] += v[j];
  }
  const auto& got = m.residual_means.at({"panl", 8});
  for (std::size_t j = 0; j < sum.size(); ++j) CHECK(got[j] == doctest::Approx(sum[j] / 12).epsilon(1e-5));

  // The mean is not any trial's state.
  double nearest = 1e300;
  for (const auto& r : trials) {
    const auto t = prepare(model(), r);
    const auto v = state(t, t.positions.panl, 8);
    double d = 0;
    for (std::size_t j = 0; j < v.size(); ++j) d += (v[j] - got[j]) * (v[j] - got[j]);
    nearest = std::min(nearest, std::sqrt(d));
  }
  CHECK(nearest > 1e-3);

  try {
    compute_residual_means(model(), trials, positions, layers, 1000);
    FAIL("expected quota error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kQuotaUnmet);
    CHECK(e.detail().find("hit ") != std::string::npos);
    CHECK(e.detail().find("/1000") != std::string::npos);
  }
}

TEST_CASE("ablation sweep and csv output") {
  const auto trials = cohort(300, 6);
  const std::vector<std::string> positions{"panl"};
  const std::vector<int> layers{2, 8};
  const auto m = compute_residual_means(model(), trials, positions, layers, 3);
  SweepConfig cfg;
  cfg.mode = Mode::kAblate;
  cfg.position_sets = {{"panl"}, {"lat"}};
  cfg.layers = {2, 8};
  const auto r = sweep(model(), trials, cfg, nullptr, &m);
  CHECK_FALSE(r.corrupt.has_value());
  REQUIRE(r.cells.size() == 4);
  CHECK(r.cells[0].error.empty());
  CHECK(r.cells[0].d_prime == doctest::Approx(r.clean.d_prime));
  CHECK(r.cells[1].d_prime < r.clean.d_prime - 1.0);
  CHECK_FALSE(r.cells[2].error.empty());
  CHECK_FALSE(r.cells[0].recovery_pct.has_value());
  CHECK_THROWS_AS(sweep(model(), trials, cfg, &m, nullptr), Error);

  const auto path = std::filesystem::temp_directory_path() / "metaprobe_causal.csv";
  write_sweep_csv(path, r);
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 8);
  CHECK(lines[0] == "# mode=ablate");
  CHECK(lines[1].rfind("# baseline=clean,n=300,", 0) == 0);
  CHECK(lines[2] == "# excluded_over_length=0");
  CHECK(lines[3] == "mode,positions,layer,n,d_prime,mean_logprob_diff,recovery_pct");
  CHECK(lines[4].rfind("ablate,panl,2,300,", 0) == 0);
  CHECK(lines[4].substr(lines[4].size() - 3) == ",NA");
  CHECK(lines[7] == "ablate,lat,8,0,NA,NA,NA");
}
