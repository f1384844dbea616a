// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metaprobe/backend.hpp"
#include "metaprobe/baselines.hpp"
#include "metaprobe/causal.hpp"
#include "metaprobe/error.hpp"
#include "metaprobe/glm.hpp"
#include "metaprobe/hash.hpp"
#include "metaprobe/pik.hpp"
#include "metaprobe/pipeline.hpp"
#include "metaprobe/probing.hpp"
#include "metaprobe/stats.hpp"
#include "metaprobe/store.hpp"
#include "metaprobe/synthetic.hpp"
#include "metaprobe/trial.hpp"
#include "oracles.hpp"

using namespace metaprobe;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    detail += (detail.empty() ? "" : "; ") + what + (ok ? "" : " [fail]");
  }
};

// Own-condition cohort with captured activations on a grid.
struct Cohort {
  std::vector<paradigm::TrialRecord> trials;
  store::ActivationSet acts;
};

Cohort run_cohort(backend::SyntheticModel& m, std::size_t n, std::uint64_t seed, const paradigm::CaptureGrid& grid) {
  paradigm::ExactMatchJudge judge;
  Cohort c;
  std::vector<std::vector<backend::ActivationSlice>> slices;
  for (const auto& item : m.make_cohort(n, paradigm::Task::kTriviaQa, seed)) {
    auto out = paradigm::run_trial(m, item, paradigm::Condition::kOwn, grid, judge);
    if (!out.record.complete()) continue;
    c.trials.push_back(out.record);
    slices.push_back(std::move(out.slices));
  }
  std::vector<std::string> ids;
  for (const auto& t : c.trials) ids.push_back(t.trial_id);
  c.acts = store::ActivationSet(m.config().width, ids);
  for (std::size_t i = 0; i < c.trials.size(); ++i)
    for (const auto& s : slices[i]) c.acts.put(i, s);
  return c;
}

std::vector<int> all_layers(int depth) {
  std::vector<int> l(static_cast<std::size_t>(depth));
  for (int i = 0; i < depth; ++i) l[static_cast<std::size_t>(i)] = i;
  return l;
}

glm::LrTestResult nested_lr(const glm::DesignMatrix& restricted, const glm::DesignMatrix& extra,
                            std::span<const int> y) {
  const auto full = restricted.hstack(extra);
  const auto z = glm::Standardizer::fit(full.values);
  const auto zf = z.apply(full);
  glm::DesignMatrix zr;
  zr.columns = restricted.columns;
  zr.values = zf.values.leftCols(restricted.cols());
  return glm::lr_test(glm::fit_logistic(zr, y, 0.0), glm::fit_logistic(zf, y, 0.0));
}

glm::DesignMatrix probe_logit(const probing::ProbeResult& p, std::span<const std::string> ids) {
  auto d = probing::probe_score_feature(p, ids, "panl_probe");
  d.values = d.values.unaryExpr([](double v) {
    v = std::clamp(v, 1e-12, 1.0 - 1e-12);
    return std::log(v / (1.0 - v));
  });
  return d;
}

// 1. Statistical oracles.
Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> count(0, 400);
  double sdt_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    stats::SdtCounts c{count(rng), count(rng), count(rng), count(rng)};
    if (c.n_signal() == 0) c.hits = 1;
    if (c.n_noise() == 0) c.correct_rejections = 1;
    double h = static_cast<double>(c.hits) / static_cast<double>(c.n_signal());
    double f = static_cast<double>(c.false_alarms) / static_cast<double>(c.n_noise());
    if (h == 0 || h == 1 || f == 0 || f == 1) {
      h = (static_cast<double>(c.hits) + 0.5) / (static_cast<double>(c.n_signal()) + 1);
      f = (static_cast<double>(c.false_alarms) + 0.5) / (static_cast<double>(c.n_noise()) + 1);
    }
    const double zh = oracle::normal_quantile_bisect(h), zf = oracle::normal_quantile_bisect(f);
    const auto m = stats::compute_sdt(c);
    sdt_err = std::max({sdt_err, std::abs(m.d_prime - (zh - zf)), std::abs(m.criterion + 0.5 * (zh + zf))});
  }
  o.check(sdt_err <= 1e-9, "sdt max err " + fmt("%.2e", sdt_err));

  double auc_err = 0.0;
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> tie(0, 9);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> s(200);
    std::vector<int> y(200);
    for (int i = 0; i < 200; ++i) {
      y[static_cast<std::size_t>(i)] = (i % 3 == 0) ? 1 : 0;
      // Rounded scores create ties on some replicates.
      const double v = z(rng) + 0.7 * y[static_cast<std::size_t>(i)];
      s[static_cast<std::size_t>(i)] = rep % 2 ? std::round(v * 4) / 4 : v + 1e-3 * tie(rng);
    }
    auc_err = std::max(auc_err, std::abs(stats::auroc(s, y) - oracle::pairwise_auroc(s, y)));
  }
  o.check(auc_err <= 1e-12, "auroc max err " + fmt("%.2e", auc_err));

  const double mc = stats::mcnemar(43, 310).chi2;
  o.check(std::abs(mc - 201.95) < 0.005, "mcnemar(43,310) " + fmt("%.4f", mc) + " (paper 202.3)");
  const std::vector<double> conf{0.8, 0.8, 0.6, 0.6};
  const std::vector<int> corr{1, 0, 1, 1};
  const double e = stats::ece(conf, corr, 10);
  o.check(std::abs(e - 0.35) <= 1e-15, "ece hand case " + fmt("%.17g", e));
  const double t = seconds_since(t0);
  o.check(t < 30, "runtime " + fmt("%.2f", t) + "s");
  return o;
}

// 2. GLM correctness.
Outcome criterion2() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(22);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> n_dist(80, 400), p_dist(1, 6);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0.0;
  for (int prob = 0; prob < 50; ++prob) {
    const int n = n_dist(rng), p = p_dist(rng);
    glm::DesignMatrix x;
    x.values.resize(n, p);
    for (int j = 0; j < p; ++j) x.columns.push_back("x" + std::to_string(j));
    std::vector<double> beta(static_cast<std::size_t>(p) + 1);
    for (auto& b : beta) b = 0.6 * z(rng);
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(p)));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      double eta = beta[0];
      for (int j = 0; j < p; ++j) {
        const double v = z(rng) * (1 + j);
        x.values(i, j) = v;
        rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
        eta += beta[static_cast<std::size_t>(j) + 1] * v / (1 + j);
      }
      y[static_cast<std::size_t>(i)] = u(rng) < 1 / (1 + std::exp(-eta)) ? 1 : 0;
    }
    const auto fit = glm::fit_logistic(x, y, 0.0);
    const auto ref = oracle::irls_logistic(rows, y);
    worst = std::max(worst, std::abs(fit.intercept - ref[0]) / std::max(1.0, std::abs(ref[0])));
    for (int j = 0; j < p; ++j) {
      const double r = ref[static_cast<std::size_t>(j) + 1];
      worst = std::max(worst, std::abs(fit.weights(j) - r) / std::max(1.0, std::abs(r)));
    }
  }
  o.check(worst <= 1e-6, "irls max rel err " + fmt("%.2e", worst) + " over 50 problems");

  double sum = 0.0;
  const int reps = 500;
  for (int rep = 0; rep < reps; ++rep) {
    const int n = 300;
    glm::DesignMatrix r, extra;
    r.columns = {"a", "b"};
    r.values.resize(n, 2);
    extra.columns = {"null"};
    extra.values.resize(n, 1);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      r.values(i, 0) = z(rng);
      r.values(i, 1) = z(rng);
      extra.values(i, 0) = z(rng);
      const double eta = 0.3 + 0.8 * r.values(i, 0) - 0.5 * r.values(i, 1);
      y[static_cast<std::size_t>(i)] = u(rng) < 1 / (1 + std::exp(-eta)) ? 1 : 0;
    }
    const auto lr = glm::lr_test(glm::fit_logistic(r, y, 0.0), glm::fit_logistic(r.hstack(extra), y, 0.0));
    sum += lr.chi2;
  }
  const double mean = sum / reps;
  o.check(std::abs(mean - 1.0) <= 0.15, "null LR mean chi2 " + fmt("%.3f", mean) + " over 500");
  const double t = seconds_since(t0);
  o.check(t < 120, "runtime " + fmt("%.2f", t) + "s");
  return o;
}

// 3. Probe recovery of a planted detection AUROC.
Outcome criterion3() {
  Outcome o;
  std::string panl, control;
  std::vector<double> noise;
  bool ok_panl = true, ok_control = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    backend::SyntheticConfig cfg;
    cfg.behavior.detect_auroc = 0.95;
    cfg.seed = seed;
    backend::SyntheticModel m(cfg);
    const int head = cfg.route_bands.panl[1];
    const paradigm::CaptureGrid grid{{"panl", "question_third_token"}, all_layers(cfg.depth)};
    const auto c = run_cohort(m, 2000, 1000 + seed, grid);

    probing::ProbeSpec spec;
    spec.position = "panl";
    spec.layer = head;
    const auto r = probing::cv_probe(c.acts, c.trials, spec);
    ok_panl = ok_panl && std::abs(r.pooled_auroc - 0.95) <= 0.02;
    panl += (panl.empty() ? "" : ",") + fmt("%.3f", r.pooled_auroc);

    for (std::uint64_t k = 0; k < 2; ++k) {
      std::mt19937_64 rng(500 + 2 * seed + k);
      std::normal_distribution<double> z;
      Eigen::MatrixXd x(static_cast<Eigen::Index>(c.trials.size()), cfg.width);
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = z(rng);
      noise.push_back(probing::cv_probe(x, c.trials, spec).pooled_auroc);
    }

    double best = 0.0;
    spec.position = "question_third_token";
    for (int l = 0; l < cfg.depth; ++l) {
      spec.layer = l;
      best = std::max(best, probing::cv_probe(c.acts, c.trials, spec).pooled_auroc);
    }
    ok_control = ok_control && best <= 0.55;
    control += (control.empty() ? "" : ",") + fmt("%.3f", best);
  }
  o.check(ok_panl, "panl pooled auroc [" + panl + "] vs 0.95+-0.02");
  // Ten noise draws, two per cohort; the tolerance applies to their mean.
  double mean = 0.0;
  for (double v : noise) mean += v / static_cast<double>(noise.size());
  const auto [lo, hi] = std::minmax_element(noise.begin(), noise.end());
  o.check(std::abs(mean - 0.5) <= 0.03, "pure noise mean of 10 " + fmt("%.4f", mean) + " vs 0.50+-0.03 (range " +
                                            fmt("%.3f", *lo) + ".." + fmt("%.3f", *hi) + ")");
  o.check(ok_control, "control max over layers [" + control + "] <= 0.55");
  return o;
}

// 4. Correctability planted only at PANL, behaviour independent of it.
Outcome criterion4() {
  Outcome o;
  backend::SyntheticConfig cfg;
  cfg.behavior.correctability_auroc = 0.85;
  backend::SyntheticModel m(cfg);
  const int head = cfg.route_bands.panl[1];
  const auto c = run_cohort(m, 2000, 1, {{"panl"}, {head}});

  probing::ProbeSpec spec;
  spec.target = probing::Target::kA2Correct;
  spec.subset = probing::Subset::kIncorrectChanged;
  spec.position = "panl";
  spec.layer = head;
  const auto probe = probing::cv_probe(c.acts, c.trials, spec);

  std::vector<paradigm::TrialRecord> sub;
  for (auto i : probing::subset_rows(c.trials, spec.subset)) sub.push_back(c.trials[i]);
  const auto behav = baselines::behavioural_features(sub, spec.target);
  std::vector<double> yd;
  std::vector<int> y;
  for (const auto& t : sub) {
    yd.push_back(t.a2_correct ? 1.0 : 0.0);
    y.push_back(t.a2_correct ? 1 : 0);
  }
  const auto cv = probing::cross_validate(behav.design.values, yd, true, 1.0, 5, 0, behav.trial_ids);
  const auto lr = nested_lr(behav.design, probe_logit(probe, behav.trial_ids), y);
  o.check(probe.pooled_auroc >= 0.80, "n=" + std::to_string(sub.size()) + " panl " + fmt("%.3f", probe.pooled_auroc) + " >= 0.80");
  o.check(cv.pooled <= 0.55, "behavioural " + fmt("%.3f", cv.pooled) + " <= 0.55");
  o.check(lr.p < 0.001, "LR chi2 " + fmt("%.1f", lr.chi2) + " p " + fmt("%.2e", lr.p) + " < 0.001");
  return o;
}

// 5. Causal harness.
Outcome criterion5() {
  Outcome o;
  paradigm::ExactMatchJudge judge;
  backend::SyntheticConfig cfg;
  cfg.behavior.detect_auroc = 0.95;
  const auto& b = cfg.route_bands;
  backend::SyntheticModel m(cfg);
  std::vector<paradigm::TrialRecord> trials, calibration;
  for (const auto& item : m.make_cohort(2000, paradigm::Task::kTriviaQa, 1))
    trials.push_back(paradigm::run_trial(m, item, paradigm::Condition::kOwn, {}, judge).record);
  for (const auto& item : m.make_cohort(4000, paradigm::Task::kTriviaQa, 2))
    calibration.push_back(paradigm::run_trial(m, item, paradigm::Condition::kOwn, {}, judge).record);
  const auto emb = causal::compute_embedding_means(m, calibration);

  causal::SweepConfig sc;
  sc.position_sets = {{"lat"}, {"panl"}, {"prompt_last_token"}};
  sc.layers = all_layers(cfg.depth);
  const auto res = causal::sweep(m, trials, sc, &emb, nullptr);
  std::map<std::string, std::map<int, double>> rec;
  for (const auto& cell : res.cells) rec[cell.positions[0]][cell.layer] = cell.recovery_pct.value_or(std::nan(""));

  struct Band {
    std::string pos;
    int in_lo, in_hi;
    std::function<bool(int)> out;
  };
  const std::vector<Band> bands{
      {"lat", b.lat[1], b.panl[0] - 1, [&](int l) { return l >= b.panl[1]; }},
      {"panl", b.panl[1], b.last[0] - 1, [&](int l) { return l < b.panl[0] || l >= b.last[1]; }},
      {"prompt_last_token", b.last[1], cfg.depth - 1, [&](int l) { return l < b.last[0]; }}};
  std::vector<int> peaks;
  for (const auto& band : bands) {
    const auto& r = rec[band.pos];
    double in_min = 1e300, out_max = -1e300;
    int peak = 0;
    for (const auto& [l, v] : r) {
      if (v > r.at(peak) + 1e-9) peak = l;
      if (l >= band.in_lo && l <= band.in_hi) in_min = std::min(in_min, v);
      if (band.out(l)) out_max = std::max(out_max, std::abs(v));
    }
    peaks.push_back(peak);
    o.check(in_min >= 90.0 && out_max <= 10.0, band.pos + " in-band min " + fmt("%.1f", in_min) + "% out-band max |" +
                                                    fmt("%.1f", out_max) + "%| peak L" + std::to_string(peak));
  }
  o.check(peaks[0] < peaks[1] && peaks[1] < peaks[2], "peak order lat<panl<last");
  o.check(res.corrupt.has_value(), "clean d' " + fmt("%.3f", res.clean.d_prime) + " corrupt d' " +
                                       fmt("%.3f", res.corrupt ? res.corrupt->d_prime : std::nan("")));

  // Total restoration: every position restored at one layer of a corrupted run.
  const int layer = b.panl[0];
  std::size_t exact = 0, tested = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const auto t = causal::prepare(m, trials[i]);
    const auto corrupt = causal::corruption_spec(t, emb, causal::LengthPolicy::kExclude);
    if (!corrupt) continue;
    backend::ActivationRequest req;
    req.layers = {layer};
    for (std::size_t p = 0; p < t.length; ++p) req.positions.push_back({std::to_string(p), p});
    const auto clean = m.generate_greedy(t.prompt, 1, &req);
    backend::InterventionSpec patch;
    patch.kind = backend::InterventionKind::kPatch;
    patch.replacement = backend::Replacement::kCleanCache;
    for (const auto& s : clean.slices) patch.cells.push_back({std::stoul(s.position), layer, s.vector});
    const std::vector<backend::InterventionSpec> specs{*corrupt, patch};
    const auto restored = m.generate_greedy(t.prompt, 1, nullptr, specs);
    ++tested;
    if (restored.result.tokens == clean.result.tokens &&
        restored.result.first_token_logit_map == clean.result.first_token_logit_map &&
        backend::verification_logprob_diff(restored.result) == backend::verification_logprob_diff(clean.result)) {
      ++exact;
    }
  }
  o.check(tested > 0 && exact == tested, "total restoration bit-exact " + std::to_string(exact) + "/" + std::to_string(tested));

  // Redundant routing: ablation at the overlap layer.
  auto rcfg = cfg;
  rcfg.redundancy = true;
  backend::SyntheticModel mr(rcfg);
  std::vector<paradigm::TrialRecord> rt, rcal;
  for (const auto& item : mr.make_cohort(2000, paradigm::Task::kTriviaQa, 1))
    rt.push_back(paradigm::run_trial(mr, item, paradigm::Condition::kOwn, {}, judge).record);
  for (const auto& item : mr.make_cohort(4000, paradigm::Task::kTriviaQa, 2))
    rcal.push_back(paradigm::run_trial(mr, item, paradigm::Condition::kOwn, {}, judge).record);
  const int overlap = b.panl[1];
  const std::vector<std::string> ap{"lat", "panl"};
  const std::vector<int> al{overlap};
  const auto means = causal::compute_residual_means(mr, rcal, ap, al, 50);
  causal::SweepConfig ac;
  ac.mode = causal::Mode::kAblate;
  ac.position_sets = {{"lat"}, {"panl"}, {"lat", "panl"}};
  ac.layers = al;
  const auto ar = causal::sweep(mr, rt, ac, nullptr, &means);
  const double clean = ar.clean.d_prime, lat = ar.cells[0].d_prime, panl = ar.cells[1].d_prime,
               joint = ar.cells[2].d_prime;
  o.check(std::abs(panl - clean) <= 0.1, "redundant L" + std::to_string(overlap) + " panl-alone |dd'| " +
                                             fmt("%.3f", std::abs(panl - clean)) + " <= 0.1");
  o.check(lat - joint >= 0.3, "joint vs lat-alone drop " + fmt("%.3f", lat - joint) + " >= 0.3");
  return o;
}

// Answers "gold" with probability p on each stream.
class BernoulliSampler final : public backend::Backend {
 public:
  explicit BernoulliSampler(double p) : p_(p) {}
  backend::BackendDescriptor descriptor() const override { return {.name = "bernoulli"}; }
  std::vector<backend::Token> tokenize(std::string_view) const override { return {}; }
  backend::GenerationOutput generate_greedy(std::string_view, int, const backend::ActivationRequest*,
                                            std::span<const backend::InterventionSpec>) override {
    return {};
  }
  bool supports_sampling() const override { return true; }
  backend::GenerationResult sample(std::string_view, int, double, std::uint64_t stream) override {
    std::mt19937_64 rng(stream);
    backend::GenerationResult r;
    r.tokens = {std::uniform_real_distribution<double>(0, 1)(rng) < p_ ? " gold" : " other", "\nConfidence: Likely"};
    return r;
  }

 private:
  double p_;
};

// 6. P(IK) estimator.
Outcome criterion6() {
  Outcome o;
  BernoulliSampler s(0.7);
  paradigm::ExactMatchJudge judge;
  const std::vector<std::string> gold{"Gold"};
  pik::PikOptions opts;
  opts.n_samples = 20;
  double sum = 0.0;
  bool on_grid = true;
  std::set<int> levels;
  for (int rep = 0; rep < 500; ++rep) {
    const auto e = pik::estimate_pik(s, "rep" + std::to_string(rep), paradigm::Task::kTriviaQa, "Q?", gold, judge, opts);
    sum += e.p_ik;
    on_grid = on_grid && e.n_samples == 20 && e.p_ik == e.n_match / 20.0;
    levels.insert(e.n_match);
  }
  const double mean = sum / 500;
  o.check(std::abs(mean - 0.7) <= 0.02, "mean " + fmt("%.4f", mean) + " vs 0.70+-0.02");
  o.check(on_grid, "support on the 1/20 grid (" + std::to_string(levels.size()) + " levels seen)");
  return o;
}

// 7. Verification and P(IK) probe directions; LR beyond behaviour and P(IK).
Outcome criterion7() {
  Outcome o;
  paradigm::ExactMatchJudge judge;
  std::string cosines, ps;
  bool ok_cos = true, ok_lr = true;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    backend::SyntheticConfig cfg;
    cfg.seed = seed;
    backend::SyntheticModel m(cfg);
    const int head = cfg.route_bands.panl[1];
    const auto c = run_cohort(m, 2000, 100 + seed, {{"panl"}, {head}});
    probing::PikTable table;
    pik::PikOptions po;
    for (const auto& t : c.trials)
      table[t.trial_id] = pik::estimate_pik(m, t.trial_id, t.task, t.question, t.gold_answers, judge, po).p_ik;

    probing::ProbeSpec spec;
    spec.position = "panl";
    spec.layer = head;
    const auto verif = probing::cv_probe(c.acts, c.trials, spec);
    auto pspec = spec;
    pspec.target = probing::Target::kPik;
    const auto pk = probing::cv_probe(c.acts, c.trials, pspec, &table);
    const double cos = probing::weight_cosine(verif, pk);
    ok_cos = ok_cos && std::abs(cos) < 0.05;
    cosines += (cosines.empty() ? "" : ",") + fmt("%+.4f", cos);

    for (const auto& [target, subset] : {std::pair{probing::Target::kVerification, probing::Subset::kAll},
                                         std::pair{probing::Target::kA2Correct, probing::Subset::kIncorrectChanged}}) {
      auto s = spec;
      s.target = target;
      s.subset = subset;
      const auto probe = target == probing::Target::kVerification ? verif : probing::cv_probe(c.acts, c.trials, s);
      std::vector<paradigm::TrialRecord> sub;
      for (auto i : probing::subset_rows(c.trials, subset)) sub.push_back(c.trials[i]);
      auto behav = baselines::behavioural_features(sub, target);
      glm::DesignMatrix pcol;
      pcol.columns = {"p_ik"};
      pcol.values.resize(static_cast<Eigen::Index>(sub.size()), 1);
      std::vector<int> y;
      for (std::size_t i = 0; i < sub.size(); ++i) {
        pcol.values(static_cast<Eigen::Index>(i), 0) = table.at(sub[i].trial_id);
        y.push_back(probing::target_value(sub[i], target, nullptr) > 0.5 ? 1 : 0);
      }
      const auto lr = nested_lr(behav.design.hstack(pcol), probe_logit(probe, behav.trial_ids), y);
      ok_lr = ok_lr && lr.p < 0.001;
      ps += (ps.empty() ? "" : ",") + probing::to_string(target) + ":" + fmt("%.1e", lr.p);
    }
  }
  o.check(ok_cos, "verification vs P(IK) weight cosine [" + cosines + "] |cos| < 0.05");
  o.check(ok_lr, "LR beyond behaviour + p_ik p [" + ps + "] < 0.001");
  return o;
}

// Manifest with per-stage timestamps removed.
std::string manifest_without_times(const fs::path& p) {
  auto j = nlohmann::ordered_json::parse(std::ifstream(p));
  j.erase("written_at");
  for (auto& s : j["stages"]) {
    s.erase("started");
    s.erase("finished");
  }
  return j.dump();
}

// 8. Pipeline determinism and budget.
Outcome criterion8() {
  Outcome o;
  pipeline::RunConfig cfg;
  cfg.cohort_size = 2000;
  cfg.transfer_task = paradigm::Task::kMnli;
  const auto base = fs::temp_directory_path() / "metaprobe_acceptance";
  fs::remove_all(base);
  double slowest = 0.0;
  for (const auto* name : {"a", "b"}) {
    cfg.output_dir = base / name;
    const auto t0 = Clock::now();
    const auto s = pipeline::run_pipeline(cfg);
    slowest = std::max(slowest, seconds_since(t0));
    o.check(s.report_gaps.empty(), std::string("run ") + name + " gaps " + std::to_string(s.report_gaps.size()));
  }
  const auto a = pipeline::walk_files(base / "a"), b = pipeline::walk_files(base / "b");
  std::size_t differ = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (a[i] != b[i] || sha256_file(base / "a" / a[i]) != sha256_file(base / "b" / b[i])) ++differ;
  }
  o.check(a.size() == b.size() && differ == 0,
          std::to_string(a.size()) + " files byte-identical (" + std::to_string(differ) + " differ)");
  o.check(manifest_without_times(base / "a" / "manifest.json") == manifest_without_times(base / "b" / "manifest.json"),
          "manifests identical excluding timestamps");
  o.check(slowest < 600, "slowest run " + fmt("%.1f", slowest) + "s < 600s");
  fs::remove_all(base);
  return o;
}

// 9. Surface-control null.
Outcome criterion9() {
  Outcome o;
  backend::SyntheticModel m({});
  paradigm::ExactMatchJudge judge;
  std::vector<paradigm::TrialRecord> trials;
  for (const auto& item : m.make_cohort(2000, paradigm::Task::kTriviaQa, 9))
    trials.push_back(paradigm::run_trial(m, item, paradigm::Condition::kOwn, {}, judge).record);
  const auto sf = baselines::surface_features(trials);
  std::mt19937_64 rng(99);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> y;
  for (std::size_t i = 0; i < sf.trial_ids.size(); ++i) y.push_back(coin(rng) ? 1.0 : 0.0);
  const auto cv = probing::cross_validate(sf.design.values, y, true, 1.0, 5, 0, sf.trial_ids);
  o.check(sf.design.cols() == 202, std::to_string(sf.design.cols()) + " columns");
  o.check(std::abs(cv.pooled - 0.5) <= 0.05, "surface auroc on random labels " + fmt("%.3f", cv.pooled) + " vs 0.50+-0.05");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"statistical oracles", criterion1},  {"glm correctness", criterion2},      {"probe recovery", criterion3},
      {"headline pattern", criterion4},     {"causal harness", criterion5},       {"p(ik) estimator", criterion6},
      {"orthogonality", criterion7},        {"pipeline determinism", criterion8}, {"surface-control null", criterion9}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const Error& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what() + " [" + e.detail() + "]";
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::printf("%s [%zu] %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, seconds_since(t0),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
