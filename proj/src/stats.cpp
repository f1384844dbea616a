#include "metaprobe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "metaprobe/error.hpp"

namespace metaprobe::stats {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::kLengthMismatch,
                std::string(what) + ": lengths " + std::to_string(a) + " and " +
                    std::to_string(b) + " differ");
  }
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "normal_quantile requires p in (0,1), got " + std::to_string(p));
  }
  return -kSqrt2 * boost::math::erfc_inv(2.0 * p);
}

double chi2_sf(double x, double df) {
  if (!(df > 0.0)) throw Error(ErrorCode::kInvalidArgument, "chi2_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

SdtMetrics sdt_from_rates(double hit_rate, double fa_rate) {
  SdtMetrics m;
  m.hit_rate = hit_rate;
  m.fa_rate = fa_rate;
  const double zh = normal_quantile(hit_rate);
  const double zf = normal_quantile(fa_rate);
  m.d_prime = zh - zf;
  m.criterion = -(zh + zf) / 2.0;
  return m;
}

SdtMetrics compute_sdt(const SdtCounts& counts, RateCorrection policy) {
  if (counts.hits < 0 || counts.misses < 0 || counts.false_alarms < 0 ||
      counts.correct_rejections < 0) {
    throw Error(ErrorCode::kInvalidArgument, "SDT counts must be non-negative");
  }
  const auto n_signal = counts.n_signal();
  const auto n_noise = counts.n_noise();
  if (n_signal == 0) throw Error(ErrorCode::kEmptyClass, "no signal (A1-correct) trials");
  if (n_noise == 0) throw Error(ErrorCode::kEmptyClass, "no noise (A1-incorrect) trials");

  double h = static_cast<double>(counts.hits) / static_cast<double>(n_signal);
  double f = static_cast<double>(counts.false_alarms) / static_cast<double>(n_noise);
  const bool extreme = h == 0.0 || h == 1.0 || f == 0.0 || f == 1.0;

  bool corrected = false;
  if (policy == RateCorrection::kLogLinearAlways ||
      (policy == RateCorrection::kLogLinearWhenExtreme && extreme)) {
    h = (static_cast<double>(counts.hits) + 0.5) / (static_cast<double>(n_signal) + 1.0);
    f = (static_cast<double>(counts.false_alarms) + 0.5) / (static_cast<double>(n_noise) + 1.0);
    corrected = true;
  } else if (extreme) {
    throw Error(ErrorCode::kInvalidArgument, "extreme rate with correction disabled");
  }
  SdtMetrics m = sdt_from_rates(h, f);
  m.correction_applied = corrected;
  return m;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores.size(), labels.size(), "auroc");
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error(ErrorCode::kNonFinite, "auroc: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) {
      throw Error(ErrorCode::kInvalidArgument, "auroc: labels must be 0/1");
    }
    n_pos += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw Error(ErrorCode::kSingleClass, "auroc requires both classes");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positive class.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double ece(std::span<const double> confidences, std::span<const int> correct, int n_bins) {
  require_same_length(confidences.size(), correct.size(), "ece");
  if (n_bins < 1) throw Error(ErrorCode::kInvalidArgument, "ece: n_bins must be >= 1");
  if (confidences.empty()) throw Error(ErrorCode::kInvalidArgument, "ece: empty input");

  std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> acc_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(n_bins), 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "ece: confidence outside [0,1]");
    }
    auto b = static_cast<int>(std::floor(c * n_bins));
    b = std::clamp(b, 0, n_bins - 1);
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += (nb / n) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
  }
  return total;
}

McNemarResult mcnemar(std::int64_t b, std::int64_t c, bool continuity_correction) {
  if (b < 0 || c < 0) throw Error(ErrorCode::kInvalidArgument, "mcnemar: negative count");
  if (b + c == 0) throw Error(ErrorCode::kEmptyClass, "mcnemar: no discordant pairs");
  const double diff = static_cast<double>(b - c);
  double num = continuity_correction ? std::max(std::abs(diff) - 1.0, 0.0) : std::abs(diff);
  num *= num;
  McNemarResult r;
  r.chi2 = num / static_cast<double>(b + c);
  r.p = chi2_sf(r.chi2, 1.0);
  return r;
}

double mean(std::span<const double> x) {
  if (x.empty()) throw Error(ErrorCode::kInvalidArgument, "mean of empty vector");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "pearson_r");
  if (x.size() < 2) throw Error(ErrorCode::kInvalidArgument, "pearson_r needs >= 2 points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error(ErrorCode::kConstantInput, "pearson_r: constant vector");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  require_same_length(u.size(), v.size(), "cosine_similarity");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw Error(ErrorCode::kZeroVector, "cosine of zero vector");
  return std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
}

}  // namespace metaprobe::stats
