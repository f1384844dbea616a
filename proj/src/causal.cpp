#include "metaprobe/causal.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "metaprobe/error.hpp"
#include "metaprobe/stats.hpp"
#include "metaprobe/trial.hpp"

namespace metaprobe::causal {

using backend::InterventionKind;
using backend::InterventionSpec;
using backend::Replacement;
using paradigm::TrialRecord;

namespace {

std::size_t resolve(const PreparedTrial& t, const std::string& key) {
  const auto idx = t.positions.resolve(key);
  if (!idx) throw Error(ErrorCode::kInvalidArgument, "unknown position key", key);
  return *idx;
}

Outcome read_outcome(const backend::Backend& model, const backend::GenerationResult& r) {
  if (r.tokens.empty()) throw Error(ErrorCode::kGeneration, "empty verification output");
  const auto d = model.descriptor();
  Outcome o;
  const char c = r.tokens[0].empty() ? 'N' : r.tokens[0].back();
  o.verification = (c == 'Y' || c == 'y') ? paradigm::Verification::kY : paradigm::Verification::kN;
  o.logprob_diff = backend::verification_logprob_diff(r, d.y_forms, d.n_forms);
  return o;
}

Outcome run(backend::Backend& model, const PreparedTrial& t, std::span<const InterventionSpec> specs) {
  return read_outcome(model, model.generate_greedy(t.prompt, 1, nullptr, specs).result);
}

InterventionSpec patch_spec(const PreparedTrial& t, std::span<const std::string> positions, int layer,
                            const CleanCache& clean) {
  InterventionSpec s{InterventionKind::kPatch, Replacement::kCleanCache, {}};
  for (const auto& p : positions) {
    const auto it = clean.find({p, layer});
    if (it == clean.end()) {
      throw Error(ErrorCode::kMissingCacheCell, "clean cache lacks cell", p + " L" + std::to_string(layer));
    }
    s.cells.push_back({resolve(t, p), layer, it->second});
  }
  return s;
}

InterventionSpec ablate_spec(const PreparedTrial& t, std::span<const std::string> positions, int layer,
                             const CalibrationMeans& means) {
  if (means.kind != MeansKind::kResidual) throw Error(ErrorCode::kInvalidArgument, "ablation needs residual means");
  InterventionSpec s{InterventionKind::kAblate, Replacement::kCalibrationMean, {}};
  for (const auto& p : positions) {
    const auto it = means.residual_means.find({p, layer});
    if (it == means.residual_means.end()) {
      throw Error(ErrorCode::kMissingCacheCell, "no residual mean for cell", p + " L" + std::to_string(layer));
    }
    s.cells.push_back({resolve(t, p), layer, it->second});
  }
  return s;
}

std::string join(std::span<const std::string> v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : "+") + x;
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

std::string to_string(Mode m) { return m == Mode::kPatch ? "patch" : "ablate"; }

PreparedTrial prepare(const backend::Backend& model, const TrialRecord& record) {
  if (!record.complete()) throw Error(ErrorCode::kMissingSlot, "trial is incomplete", record.trial_id);
  const auto p = paradigm::phase1_prompt(model, record);
  return {&record, p.render.text, p.positions, p.length};
}

CalibrationMeans compute_embedding_means(backend::Backend& model, std::span<const TrialRecord> calibration) {
  CalibrationMeans m;
  m.kind = MeansKind::kEmbedding;
  std::map<int, std::vector<double>> sums;
  std::map<int, std::size_t> counts;
  for (const auto& rec : calibration) {
    if (!rec.complete()) continue;
    const auto t = prepare(model, rec);
    backend::ActivationRequest req;
    req.layers = {0};
    for (std::size_t p = t.positions.answer_first; p <= t.positions.lat; ++p) {
      req.positions.push_back({std::to_string(p - t.positions.answer_first), p});
    }
    const auto out = model.generate_greedy(t.prompt, 1, &req);
    for (const auto& s : out.slices) {
      const int k = std::stoi(s.position);
      auto& sum = sums[k];
      if (sum.empty()) sum.assign(s.vector.size(), 0.0);
      for (std::size_t j = 0; j < s.vector.size(); ++j) sum[j] += s.vector[j];
      ++counts[k];
    }
    ++m.source_n;
    ++m.balance[rec.sdt_cell];
  }
  if (m.source_n == 0) throw Error(ErrorCode::kQuotaUnmet, "no complete calibration trials");
  for (const auto& [k, sum] : sums) {
    std::vector<float> v(sum.size());
    for (std::size_t j = 0; j < sum.size(); ++j) v[j] = static_cast<float>(sum[j] / static_cast<double>(counts[k]));
    m.offset_means[k] = std::move(v);
  }
  return m;
}

CalibrationMeans compute_residual_means(backend::Backend& model, std::span<const TrialRecord> calibration,
                                        std::span<const std::string> positions, std::span<const int> layers,
                                        std::size_t per_cell) {
  CalibrationMeans m;
  m.kind = MeansKind::kResidual;
  std::map<paradigm::SdtCell, std::vector<const TrialRecord*>> chosen;
  for (const auto& rec : calibration) {
    if (!rec.complete()) continue;
    auto& v = chosen[rec.sdt_cell];
    if (v.size() < per_cell) v.push_back(&rec);
  }
  std::string deficient;
  for (auto c : {paradigm::SdtCell::kHit, paradigm::SdtCell::kMiss, paradigm::SdtCell::kFa, paradigm::SdtCell::kCr}) {
    const auto have = chosen[c].size();
    if (have < per_cell) {
      deficient += (deficient.empty() ? "" : ", ") + paradigm::to_string(c) + " " + std::to_string(have) + "/" +
                   std::to_string(per_cell);
    }
  }
  if (!deficient.empty()) throw Error(ErrorCode::kQuotaUnmet, "calibration quota unmet", deficient);

  std::map<std::pair<std::string, int>, std::vector<double>> sums;
  for (const auto& [cell, recs] : chosen) {
    for (const auto* rec : recs) {
      const auto t = prepare(model, *rec);
      backend::ActivationRequest req;
      req.layers.assign(layers.begin(), layers.end());
      for (const auto& p : positions) req.positions.push_back({p, resolve(t, p)});
      const auto out = model.generate_greedy(t.prompt, 1, &req);
      for (const auto& s : out.slices) {
        auto& sum = sums[{s.position, s.layer}];
        if (sum.empty()) sum.assign(s.vector.size(), 0.0);
        for (std::size_t j = 0; j < s.vector.size(); ++j) sum[j] += s.vector[j];
      }
      ++m.source_n;
    }
    m.balance[cell] = recs.size();
  }
  for (const auto& [key, sum] : sums) {
    std::vector<float> v(sum.size());
    for (std::size_t j = 0; j < sum.size(); ++j) v[j] = static_cast<float>(sum[j] / static_cast<double>(m.source_n));
    m.residual_means[key] = std::move(v);
  }
  return m;
}

std::optional<InterventionSpec> corruption_spec(const PreparedTrial& t, const CalibrationMeans& means,
                                                LengthPolicy policy) {
  if (means.kind != MeansKind::kEmbedding) throw Error(ErrorCode::kInvalidArgument, "corruption needs embedding means");
  const int len = static_cast<int>(t.positions.lat - t.positions.answer_first) + 1;
  if (len - 1 > means.max_offset() && policy == LengthPolicy::kExclude) return std::nullopt;
  InterventionSpec s{InterventionKind::kCorruptEmbeddings, Replacement::kCalibrationMean, {}};
  for (int k = 0; k < len && k <= means.max_offset(); ++k) {
    s.cells.push_back({t.positions.answer_first + static_cast<std::size_t>(k), 0, means.offset_means.at(k)});
  }
  return s;
}

CorruptRun corrupt_run(backend::Backend& model, const TrialRecord& trial, const CalibrationMeans& means,
                       LengthPolicy policy, const backend::ActivationRequest* capture) {
  const auto t = prepare(model, trial);
  const auto spec = corruption_spec(t, means, policy);
  if (!spec) {
    throw Error(ErrorCode::kCoverage, "answer is longer than the calibrated offsets", trial.trial_id);
  }
  const std::vector<InterventionSpec> specs{*spec};
  auto out = model.generate_greedy(t.prompt, 1, capture, specs);
  for (auto& s : out.slices) s.trial_id = trial.trial_id;
  return {std::move(out.result), std::move(out.slices)};
}

CleanCache capture_clean(backend::Backend& model, const PreparedTrial& t, std::span<const std::string> positions,
                         std::span<const int> layers) {
  backend::ActivationRequest req;
  req.layers.assign(layers.begin(), layers.end());
  for (const auto& p : positions) req.positions.push_back({p, resolve(t, p)});
  CleanCache cache;
  for (auto& s : model.generate_greedy(t.prompt, 1, &req).slices) cache[{s.position, s.layer}] = std::move(s.vector);
  return cache;
}

Outcome patch_run(backend::Backend& model, const TrialRecord& trial, const std::string& position, int layer,
                  const CleanCache& clean, const CalibrationMeans& means, LengthPolicy policy) {
  const auto t = prepare(model, trial);
  const auto corrupt = corruption_spec(t, means, policy);
  if (!corrupt) throw Error(ErrorCode::kCoverage, "answer is longer than the calibrated offsets", trial.trial_id);
  const std::string pos[] = {position};
  const std::vector<InterventionSpec> specs{*corrupt, patch_spec(t, pos, layer, clean)};
  return run(model, t, specs);
}

Outcome ablate_run(backend::Backend& model, const TrialRecord& trial, std::span<const std::string> positions,
                   int layer, const CalibrationMeans& means) {
  const auto t = prepare(model, trial);
  const std::vector<InterventionSpec> specs{ablate_spec(t, positions, layer, means)};
  return run(model, t, specs);
}

void DprimeAccumulator::add(bool correct, const Outcome& o) {
  const bool y = o.verification == paradigm::Verification::kY;
  if (correct) (y ? hits : misses)++;
  else (y ? fas : crs)++;
  lpd_sum += o.logprob_diff;
  ++n;
}

Baseline DprimeAccumulator::finish() const {
  Baseline b;
  b.n = n;
  if (n == 0) return b;
  b.d_prime = stats::compute_sdt({hits, misses, fas, crs}).d_prime;
  b.mean_logprob_diff = lpd_sum / static_cast<double>(n);
  return b;
}

std::optional<double> recovery(double d_cell, double d_clean, double d_corrupt) {
  const double denom = d_clean - d_corrupt;
  if (std::abs(denom) <= 1e-6) return std::nullopt;
  return 100.0 * (d_cell - d_corrupt) / denom;
}

SweepResult sweep(backend::Backend& model, std::span<const TrialRecord> trials, const SweepConfig& config,
                  const CalibrationMeans* embedding_means, const CalibrationMeans* residual_means) {
  const bool patch = config.mode == Mode::kPatch;
  if (patch && !embedding_means) throw Error(ErrorCode::kInvalidArgument, "patch sweep needs embedding means");
  if (!patch && !residual_means) throw Error(ErrorCode::kInvalidArgument, "ablation sweep needs residual means");

  std::vector<std::string> all_positions;
  {
    std::set<std::string> seen;
    for (const auto& set : config.position_sets)
      for (const auto& p : set)
        if (seen.insert(p).second) all_positions.push_back(p);
  }
  const std::size_t n_cells = config.position_sets.size() * config.layers.size();
  std::vector<DprimeAccumulator> acc(n_cells);
  std::vector<std::string> errors(n_cells);
  DprimeAccumulator clean_acc, corrupt_acc;
  SweepResult result;
  result.mode = config.mode;

  for (const auto& rec : trials) {
    if (!rec.complete()) continue;
    const auto t = prepare(model, rec);
    std::optional<InterventionSpec> corrupt;
    if (patch) {
      corrupt = corruption_spec(t, *embedding_means, config.length_policy);
      if (!corrupt) {
        ++result.excluded;
        continue;
      }
    }
    CleanCache clean;
    if (patch && n_cells > 0) clean = capture_clean(model, t, all_positions, config.layers);
    clean_acc.add(rec.a1_correct, run(model, t, {}));
    if (patch) {
      const std::vector<InterventionSpec> only{*corrupt};
      corrupt_acc.add(rec.a1_correct, run(model, t, only));
    }
    std::size_t cell = 0;
    for (const auto& set : config.position_sets) {
      for (int layer : config.layers) {
        if (errors[cell].empty()) {
          try {
            std::vector<InterventionSpec> specs;
            if (patch) {
              specs = {*corrupt, patch_spec(t, set, layer, clean)};
            } else {
              specs = {ablate_spec(t, set, layer, *residual_means)};
            }
            acc[cell].add(rec.a1_correct, run(model, t, specs));
          } catch (const Error& e) {
            errors[cell] = e.what();
          }
        }
        ++cell;
      }
    }
  }

  result.clean = clean_acc.finish();
  if (patch) result.corrupt = corrupt_acc.finish();
  std::size_t cell = 0;
  for (const auto& set : config.position_sets) {
    for (int layer : config.layers) {
      CellResult c;
      c.positions = set;
      c.layer = layer;
      c.error = errors[cell];
      if (c.error.empty()) {
        const auto b = acc[cell].finish();
        c.n = b.n;
        c.d_prime = b.d_prime;
        c.mean_logprob_diff = b.mean_logprob_diff;
        if (patch && b.n > 0) c.recovery_pct = recovery(b.d_prime, result.clean.d_prime, result.corrupt->d_prime);
      }
      result.cells.push_back(std::move(c));
      ++cell;
    }
  }
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write", path.string());
  out << "# mode=" << to_string(r.mode) << "\n";
  out << "# baseline=clean,n=" << r.clean.n << ",d_prime=" << fmt(r.clean.d_prime)
      << ",mean_logprob_diff=" << fmt(r.clean.mean_logprob_diff) << "\n";
  if (r.corrupt) {
    out << "# baseline=corrupt,n=" << r.corrupt->n << ",d_prime=" << fmt(r.corrupt->d_prime)
        << ",mean_logprob_diff=" << fmt(r.corrupt->mean_logprob_diff) << "\n";
  }
  out << "# excluded_over_length=" << r.excluded << "\n";
  out << "mode,positions,layer,n,d_prime,mean_logprob_diff,recovery_pct\n";
  for (const auto& c : r.cells) {
    out << to_string(r.mode) << ',' << join(c.positions) << ',' << c.layer << ',';
    if (!c.error.empty()) {
      out << "0,NA,NA,NA\n";
      continue;
    }
    out << c.n << ',' << fmt(c.d_prime) << ',' << fmt(c.mean_logprob_diff) << ','
        << (c.recovery_pct ? fmt(*c.recovery_pct) : std::string("NA")) << '\n';
  }
}

}  // namespace metaprobe::causal
