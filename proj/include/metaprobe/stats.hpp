#pragma once

#include <cstdint>
#include <span>
#include <vector>

// Statistical primitives shared by every analysis stage: signal-detection
// metrics, rank AUROC, calibration error, McNemar, correlation.
//
// All functions are pure and reentrant. Invalid inputs raise metaprobe::Error.

namespace metaprobe::stats {

/// Standard normal CDF.
double normal_cdf(double x);

/// Inverse standard normal CDF, accurate to better than 1e-10 on (0,1).
/// Rational approximation followed by one Halley refinement step.
double normal_quantile(double p);

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
double chi2_sf(double x, double df);

struct SdtCounts {
  std::int64_t hits = 0;
  std::int64_t misses = 0;
  std::int64_t false_alarms = 0;
  std::int64_t correct_rejections = 0;

  std::int64_t n_signal() const { return hits + misses; }
  std::int64_t n_noise() const { return false_alarms + correct_rejections; }
};

enum class RateCorrection {
  kLogLinearWhenExtreme,  // default: only when a raw rate is 0 or 1
  kLogLinearAlways,
  kNone,  // extreme rates raise an error
};

struct SdtMetrics {
  double hit_rate = 0.0;
  double fa_rate = 0.0;
  double d_prime = 0.0;
  double criterion = 0.0;
  bool correction_applied = false;
};

SdtMetrics compute_sdt(const SdtCounts& counts,
                       RateCorrection policy = RateCorrection::kLogLinearWhenExtreme);

/// d' and c straight from rates in (0,1); no correction.
SdtMetrics sdt_from_rates(double hit_rate, double fa_rate);

/// Mann-Whitney AUROC; ties count one half. Labels are 0/1.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Expected calibration error over `n_bins` equal-width bins on [0,1].
double ece(std::span<const double> confidences, std::span<const int> correct,
           int n_bins = 10);

struct McNemarResult {
  double chi2 = 0.0;
  double p = 1.0;
};

/// b = A1-correct & A2-incorrect, c = A1-incorrect & A2-correct.
McNemarResult mcnemar(std::int64_t b, std::int64_t c, bool continuity_correction = false);

double pearson_r(std::span<const double> x, std::span<const double> y);

double cosine_similarity(std::span<const double> u, std::span<const double> v);

double mean(std::span<const double> x);

}  // namespace metaprobe::stats
