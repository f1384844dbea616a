#include "metaprobe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metaprobe/error.hpp"
#include "metaprobe/stats.hpp"
#include "metaprobe/tokenizer.hpp"

namespace metaprobe::backend {

using paradigm::Condition;
using paradigm::Task;
using paradigm::Verification;
namespace tpl = paradigm::templates;

namespace {

constexpr double kKappa = 25.0;
constexpr double kContentMix = 0.05;
constexpr double kLatWeight = 4.0;
constexpr std::size_t kCalibrationSample = 20000;

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t absorb(std::uint64_t h, std::string_view s) {
  h ^= 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h ^ s.size());
}

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() { return mix64(state_ += 0x9e3779b97f4a7c15ULL); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double normal() {
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }

 private:
  std::uint64_t state_;
};

Stream stream(std::uint64_t seed, std::initializer_list<std::string_view> parts) {
  std::uint64_t h = mix64(seed);
  for (auto p : parts) h = absorb(h, p);
  return Stream(h);
}

const char* const kSyllables[] = {"ba", "ko", "ri", "tel", "mon", "sa", "vu", "der",
                                  "lin", "qua", "zo", "pe", "mar", "ith", "gor", "nu"};

std::string make_word(Stream& s) {
  std::string w;
  const std::size_t k = 2 + s.below(2);
  for (std::size_t i = 0; i < k; ++i) w += kSyllables[s.below(16)];
  return w;
}

std::string capitalized(std::string w) {
  if (!w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::string make_phrase(Stream& s) {
  std::string w = capitalized(make_word(s));
  if (s.uniform() < 0.25) w = capitalized(make_word(s)) + " " + w;
  return w;
}

const std::array<std::string, 3> kLabels{"entailment", "neutral", "contradiction"};

double prefix_ratio(const std::string& a, const std::string& b) {
  const std::size_t n = std::min(a.size(), b.size());
  std::size_t k = 0;
  while (k < n && a[k] == b[k]) ++k;
  const std::size_t m = std::max(a.size(), b.size());
  return m == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(m);
}

std::string_view line_at(std::string_view text, std::size_t pos, std::size_t* next) {
  std::size_t end = text.find('\n', pos);
  if (end == std::string_view::npos) {
    *next = std::string_view::npos;
    return text.substr(pos);
  }
  *next = end + 1;
  return text.substr(pos, end - pos);
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

// What the model recognises in a prompt. The verification prefix
// "Question: ...\n<answer label>...\n" is detected from the text before PANL
// only, so later tokens never influence earlier positions.
struct Parsed {
  int phase = -1;
  Task task = Task::kTriviaQa;
  std::string question;
  std::string answer;
  paradigm::PromptRender render;
  bool has_answer_prefix = false;
  Verification verification = Verification::kN;
};

Task task_of(std::string_view question) {
  return starts_with(question, "Premise:") ? Task::kMnli : Task::kTriviaQa;
}

Parsed parse_prompt(std::string_view prompt) {
  Parsed p;
  if (starts_with(prompt, tpl::kPhase0Header)) {
    p.phase = 0;
    p.task = prompt.find("The answer must be one of") != std::string_view::npos ? Task::kMnli
                                                                               : Task::kTriviaQa;
    const auto at = prompt.rfind(std::string("\n") + std::string(tpl::kQuestion));
    if (at != std::string_view::npos) {
      std::size_t next = 0;
      p.question = std::string(line_at(prompt, at + 1 + tpl::kQuestion.size(), &next));
    }
    return p;
  }
  if (!starts_with(prompt, tpl::kQuestion)) return p;
  std::size_t next = 0;
  const auto qline = line_at(prompt, tpl::kQuestion.size(), &next);
  if (next == std::string_view::npos) return p;
  p.question = std::string(qline);
  p.task = task_of(p.question);
  const std::size_t aline_start = next;
  const auto aline = line_at(prompt, aline_start, &next);
  std::string_view label;
  if (starts_with(aline, tpl::kOwnAnswer)) label = tpl::kOwnAnswer;
  else if (starts_with(aline, tpl::kCandidateAnswer)) label = tpl::kCandidateAnswer;
  else return p;
  if (next == std::string_view::npos || aline.size() == label.size()) return p;
  p.answer = std::string(aline.substr(label.size()));
  p.has_answer_prefix = true;
  p.render.text = std::string(prompt);
  p.render.question_char_span = {tpl::kQuestion.size(), tpl::kQuestion.size() + qline.size()};
  p.render.answer_char_span = {aline_start + label.size(), aline_start + aline.size()};
  p.render.phase = 1;
  const auto rest = prompt.substr(next);
  if (rest == tpl::kVerify) {
    p.phase = 1;
  } else if (starts_with(rest, tpl::kYouSaid) || starts_with(rest, tpl::kMnliVerified)) {
    const auto lab = starts_with(rest, tpl::kYouSaid) ? tpl::kYouSaid : tpl::kMnliVerified;
    const auto v = rest.substr(lab.size(), 1);
    p.verification = v == "Y" ? Verification::kY : Verification::kN;
    p.phase = 2;
    p.render.phase = 2;
  }
  return p;
}

double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

GenerationResult text_result(const std::string& completion, double default_logprob) {
  GenerationResult r;
  for (const auto& t : tokenize_text(completion)) {
    r.tokens.push_back(t.text);
    r.token_chars.push_back(t.chars);
    r.token_logprobs.push_back(default_logprob);
  }
  return r;
}

}  // namespace

struct SyntheticModel::Plan {
  bool planted = false;
  std::size_t answer_first = 0;
  std::size_t lat = 0;
  std::size_t panl = 0;
  std::size_t last = 0;
  std::vector<double> shares;  // evaluative share per answer token
  Latents latents;
};

void validate(const SyntheticConfig& c) {
  if (c.depth < 2) throw Error(ErrorCode::kConfig, "depth must be at least 2");
  if (c.width < 8) throw Error(ErrorCode::kConfig, "width must be at least 8");
  if (c.positions < 8) throw Error(ErrorCode::kConfig, "positions must be at least 8");
  const auto& b = c.route_bands;
  for (const auto* band : {&b.lat, &b.panl, &b.last}) {
    if ((*band)[0] < 1 || (*band)[1] >= c.depth || (*band)[0] > (*band)[1]) {
      throw Error(ErrorCode::kBandOrder, "route band must satisfy 1 <= lo <= hi < depth",
                  std::to_string((*band)[0]) + "," + std::to_string((*band)[1]));
    }
  }
  if (!(b.lat[1] < b.panl[0] && b.panl[1] < b.last[0])) {
    throw Error(ErrorCode::kBandOrder, "route bands must be ordered lat < panl < last");
  }
  const auto& h = c.behavior;
  for (double p : {h.p_correct, h.change_gate, h.p_fix}) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::kConfig, "behaviour probability outside [0,1]");
  }
  for (double a : {h.detect_auroc, h.correctability_auroc}) {
    if (!(a >= 0.5 && a <= 1.0)) throw Error(ErrorCode::kConfig, "behaviour AUROC outside [0.5,1]");
  }
  if (!(h.evidence_sd >= 0.0) || !(h.evidence_dprime >= 0.0) || !(c.noise_sd >= 0.0)) {
    throw Error(ErrorCode::kConfig, "spreads must be non-negative");
  }
  if (!std::isfinite(c.signal_gain) || c.signal_gain < 0.0 || !std::isfinite(h.y_bias)) {
    throw Error(ErrorCode::kConfig, "signal_gain must be finite and >= 0");
  }
}

SyntheticModel::SyntheticModel(SyntheticConfig config) : config_(std::move(config)) {
  validate(config_);
  std::vector<int> order(static_cast<std::size_t>(config_.width));
  std::iota(order.begin(), order.end(), 0);
  if (config_.layout_seed != 0) {
    Stream s(mix64(config_.layout_seed));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[s.below(i + 1)]);
  }
  for (int i = 0; i < 4; ++i) channels_[i] = order[static_cast<std::size_t>(i)];
  content_dims_.assign(order.begin() + 4, order.end());
  std::sort(content_dims_.begin(), content_dims_.end());
  calibrate();
}

std::unique_ptr<SyntheticModel> build_synthetic(const SyntheticConfig& config) {
  return std::make_unique<SyntheticModel>(config);
}

BackendDescriptor SyntheticModel::descriptor() const {
  BackendDescriptor d;
  d.name = "synthetic-layered-residual";
  d.depth = config_.depth;
  d.width = config_.width;
  d.layer_convention =
      "layer 0 = embedding output (first block inert); layer l = residual stream after block l's MLP";
  d.chat_format = "raw";
  d.y_forms = default_y_forms();
  d.n_forms = default_n_forms();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", sigma_n_);
  d.parameters["decision_noise_sd"] = buf;
  std::snprintf(buf, sizeof buf, "%.17g", center_);
  d.parameters["evaluative_center"] = buf;
  d.parameters["channels"] = std::to_string(channels_[0]) + "," + std::to_string(channels_[1]) + "," +
                             std::to_string(channels_[2]) + "," + std::to_string(channels_[3]);
  return d;
}

std::vector<Token> SyntheticModel::tokenize(std::string_view text) const { return tokenize_text(text); }

std::string SyntheticModel::gold(std::string_view question, Task task) const {
  Stream s = stream(config_.seed, {"gold", question});
  if (task == Task::kMnli) return kLabels[s.below(3)];
  return make_phrase(s);
}

Latents SyntheticModel::latents(std::string_view question, std::string_view answer, Task task) const {
  const auto& h = config_.behavior;
  const std::string g = paradigm::normalize_answer(gold(question, task));
  const std::string a = paradigm::normalize_answer(answer);
  Latents l;
  l.correct = !a.empty() && a == g;
  Stream s = stream(config_.seed, {"latent", question, a});
  const double m = h.evidence_dprime;
  double e = l.correct ? m / 2.0 : -m / 2.0 + 0.5 * m * prefix_ratio(a, g);
  e += h.evidence_sd * s.normal();
  l.evaluative = e - center_;
  l.a2_ok = s.uniform() < h.p_fix;
  const double auc = std::min(h.correctability_auroc, 0.9999);
  const double m_r = std::sqrt(2.0) * stats::normal_quantile(auc);
  l.correctability = (l.a2_ok ? m_r / 2.0 : -m_r / 2.0) + s.normal();
  l.noise = sigma_n_ * s.normal();
  l.change_u = s.uniform();
  l.knowledge = stream(config_.seed, {"knowledge", question}).uniform();
  return l;
}

void SyntheticModel::calibrate() {
  // Empirical distribution of the evaluative signal on this model's own
  // answers, used to centre it and to set the decision noise.
  const auto& h = config_.behavior;
  center_ = 0.0;
  const auto cohort = make_cohort(kCalibrationSample, Task::kTriviaQa, 0x5eedULL);
  std::vector<double> raw;
  std::vector<char> cls;
  raw.reserve(cohort.size());
  double sum_c = 0.0, sum_i = 0.0;
  std::size_t n_c = 0, n_i = 0;
  for (const auto& item : cohort) {
    Stream s = stream(config_.seed, {"phase0", item.question});
    const bool correct = s.uniform() < h.p_correct;
    const std::string a1 =
        correct ? item.answers[0] : [&] { Stream d = stream(config_.seed, {"distractor", item.question}); return make_phrase(d); }();
    const Latents l = latents(item.question, a1, Task::kTriviaQa);
    raw.push_back(l.evaluative);
    cls.push_back(l.correct ? 1 : 0);
    (l.correct ? sum_c : sum_i) += l.evaluative;
    ++(l.correct ? n_c : n_i);
  }
  sigma_n_ = 0.0;
  if (n_c > 0 && n_i > 0) center_ = 0.5 * (sum_c / static_cast<double>(n_c) + sum_i / static_cast<double>(n_i));
  if (config_.signal_gain == 0.0 || h.detect_auroc >= 1.0) return;
  const double tau = -h.y_bias / config_.signal_gain;
  const double mult = config_.redundancy ? 1.0 + kLatWeight : 1.0;
  auto p_yes = [&](double v, double sigma) { return stats::normal_cdf((std::tanh(kKappa * mult * v) - tau) / sigma); };

  // Alternate between fitting the noise to the target AUROC and moving the
  // centre so the mean over the four SDT cells is zero.
  for (int round = 0; round < 6; ++round) {
    std::vector<std::pair<double, char>> e;
    e.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) e.emplace_back(raw[i] - center_, cls[i]);
    std::sort(e.begin(), e.end());
    auto auroc_at = [&](double sigma) {
      double p1 = 0.0, p0 = 0.0, below0 = 0.0, num = 0.0;
      for (const auto& [v, c] : e) {
        const double pi = p_yes(v, sigma);
        num += pi * below0;
        below0 += 1.0 - pi;
        p1 += pi;
        p0 += 1.0 - pi;
      }
      return (p1 > 0 && p0 > 0) ? num / (p1 * p0) : 0.5;
    };
    double lo = std::log(1e-6), hi = std::log(1e3);
    if (auroc_at(std::exp(hi)) > h.detect_auroc) {
      sigma_n_ = std::exp(hi);
    } else {
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (auroc_at(std::exp(mid)) > h.detect_auroc) lo = mid;
        else hi = mid;
      }
      sigma_n_ = std::exp(0.5 * (lo + hi));
    }
    // cell index: 2 * correct + yes
    double sum[4] = {0, 0, 0, 0}, w[4] = {0, 0, 0, 0};
    for (const auto& [v, c] : e) {
      const double pi = p_yes(v, sigma_n_);
      sum[2 * c + 1] += pi * v;
      w[2 * c + 1] += pi;
      sum[2 * c] += (1.0 - pi) * v;
      w[2 * c] += 1.0 - pi;
    }
    double shift = 0.0;
    int cells = 0;
    for (int k = 0; k < 4; ++k) {
      if (w[k] > 0) {
        shift += sum[k] / w[k];
        ++cells;
      }
    }
    if (cells == 0) break;
    center_ += shift / cells;
  }
}

const std::vector<float>& SyntheticModel::token_embedding(const std::string& text) const {
  auto it = embed_cache_.find(text);
  if (it != embed_cache_.end()) return it->second;
  Stream s = stream(config_.seed, {"embed", text});
  std::vector<float> v(static_cast<std::size_t>(config_.width), 0.0f);
  for (int j : content_dims_) v[static_cast<std::size_t>(j)] = static_cast<float>(s.normal());
  return embed_cache_.emplace(text, std::move(v)).first->second;
}

std::vector<float> SyntheticModel::forward(const std::vector<Token>& tokens, const Plan& plan,
                                           std::span<const InterventionSpec> interventions,
                                           std::vector<std::vector<float>>* trace) const {
  const std::size_t T = tokens.size();
  const std::size_t D = static_cast<std::size_t>(config_.width);
  const int L = config_.depth;
  const auto E = static_cast<std::size_t>(channels_[0]);

  std::vector<float> cur(T * D, 0.0f);
  std::uint64_t prefix = mix64(config_.seed ^ 0xabcdefULL);
  for (std::size_t p = 0; p < T; ++p) {
    prefix = absorb(prefix, tokens[p].text);
    const auto& emb = token_embedding(tokens[p].text);
    std::copy(emb.begin(), emb.end(), cur.begin() + static_cast<std::ptrdiff_t>(p * D));
    if (config_.noise_sd > 0.0) {
      Stream jitter(prefix);
      for (int j : content_dims_) {
        cur[p * D + static_cast<std::size_t>(j)] += static_cast<float>(config_.noise_sd * jitter.normal());
      }
    }
  }
  if (plan.planted) {
    for (std::size_t q = plan.answer_first; q <= plan.lat; ++q) {
      cur[q * D + E] = static_cast<float>(plan.shares[q - plan.answer_first]);
    }
    cur[plan.panl * D + static_cast<std::size_t>(channels_[1])] = static_cast<float>(plan.latents.correctability);
    cur[plan.panl * D + static_cast<std::size_t>(channels_[2])] = static_cast<float>(plan.latents.knowledge);
    cur[plan.last * D + static_cast<std::size_t>(channels_[3])] = static_cast<float>(plan.latents.noise);
  }

  auto apply_overrides = [&](int layer, std::vector<float>& state) {
    for (const auto& spec : interventions) {
      for (const auto& c : spec.cells) {
        if (c.layer != layer) continue;
        std::copy(c.vector.begin(), c.vector.end(),
                  state.begin() + static_cast<std::ptrdiff_t>(c.position * D));
      }
    }
  };
  apply_overrides(0, cur);
  if (trace) trace->push_back(cur);

  const auto& bands = config_.route_bands;
  auto in_band = [](int b, const std::array<int, 2>& band) { return b >= band[0] && b <= band[1]; };
  std::vector<float> next;
  std::vector<double> running(D);
  for (int b = 1; b < L; ++b) {
    next = cur;
    std::fill(running.begin(), running.end(), 0.0);
    for (std::size_t p = 0; p < T; ++p) {
      for (int j : content_dims_) {
        const auto jj = static_cast<std::size_t>(j);
        if (p > 0) {
          next[p * D + jj] = static_cast<float>(cur[p * D + jj] + kContentMix * running[jj] / static_cast<double>(p));
        }
        running[jj] += cur[p * D + jj];
      }
    }
    if (plan.planted) {
      if (in_band(b, bands.lat)) {
        const double left = bands.lat[1] - b + 1;
        double moved = 0.0;
        for (std::size_t q = plan.answer_first; q < plan.lat; ++q) {
          const double amt = cur[q * D + E] / left;
          next[q * D + E] = static_cast<float>(cur[q * D + E] - amt);
          moved += amt;
        }
        next[plan.lat * D + E] = static_cast<float>(cur[plan.lat * D + E] + moved);
      }
      if (in_band(b, bands.panl)) {
        const double width = bands.panl[1] - bands.panl[0] + 1;
        const double left = bands.panl[1] - b + 1;
        const double src = cur[plan.lat * D + E];
        const double amt = config_.redundancy ? src / width : src / left;
        if (!config_.redundancy) next[plan.lat * D + E] = static_cast<float>(src - amt);
        next[plan.panl * D + E] = static_cast<float>(cur[plan.panl * D + E] + amt);
      }
      if (in_band(b, bands.last)) {
        const double width = bands.last[1] - bands.last[0] + 1;
        double src = cur[plan.panl * D + E];
        if (config_.redundancy) src += kLatWeight * cur[plan.lat * D + E];
        next[plan.last * D + E] = static_cast<float>(cur[plan.last * D + E] + std::tanh(kKappa * src) / width);
      }
    }
    apply_overrides(b, next);
    std::swap(cur, next);
    if (trace) trace->push_back(cur);
  }
  return cur;
}

GenerationResult SyntheticModel::phase0(std::string_view question, Task task) const {
  const auto& h = config_.behavior;
  Stream s = stream(config_.seed, {"phase0", question});
  const bool correct = s.uniform() < h.p_correct;
  std::string a1;
  if (correct) {
    a1 = gold(question, task);
  } else if (task == Task::kMnli) {
    const std::string g = gold(question, task);
    std::vector<std::string> wrong;
    for (const auto& l : kLabels)
      if (l != g) wrong.push_back(l);
    a1 = wrong[s.below(2)];
  } else {
    Stream d = stream(config_.seed, {"distractor", question});
    a1 = make_phrase(d);
  }
  const Latents lat = latents(question, a1, task);
  const double conf = stats::normal_cdf(0.8 * lat.evaluative + 0.6 * s.normal());
  const auto& classes = paradigm::default_confidence_classes();
  const std::size_t idx = std::min<std::size_t>(classes.size() - 1, static_cast<std::size_t>(conf * 10.0));
  const std::string completion = std::string(tpl::kAnswerField) + a1 + "\n" +
                                 std::string(tpl::kConfidenceField) + classes[idx].label;
  GenerationResult r = text_result(completion, std::log(0.99));
  const std::size_t as = tpl::kAnswerField.size(), ae = as + a1.size();
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    if (r.token_chars[i].first < ae && r.token_chars[i].second > as) {
      r.token_logprobs[i] = log_sigmoid(1.5 + 0.8 * lat.evaluative + 0.8 * s.normal());
    }
  }
  return r;
}

GenerationResult SyntheticModel::phase2(std::string_view question, std::string_view answer,
                                        Verification v, Task task) const {
  const auto& h = config_.behavior;
  const Latents lat = latents(question, answer, task);
  const double p_change = v == Verification::kN ? h.change_gate : 1.0 - h.change_gate;
  std::string a2(answer);
  if (lat.change_u < p_change) {
    const std::string g = gold(question, task);
    const std::string na = paradigm::normalize_answer(answer);
    if (!lat.correct && lat.a2_ok) {
      a2 = g;
    } else if (task == Task::kMnli) {
      for (const auto& l : kLabels)
        if (l != g && l != na) a2 = l;
      if (a2 == answer) a2 = (kLabels[0] != na) ? kLabels[0] : kLabels[1];
    } else {
      Stream d = stream(config_.seed, {"revision", question, na});
      do {
        a2 = make_phrase(d);
      } while (paradigm::normalize_answer(a2) == na ||
               paradigm::normalize_answer(a2) == paradigm::normalize_answer(g));
    }
  }
  return text_result(a2, std::log(0.9));
}

GenerationOutput SyntheticModel::generate_greedy(std::string_view prompt, int max_tokens,
                                                 const ActivationRequest* capture,
                                                 std::span<const InterventionSpec> interventions) {
  if (prompt.empty()) throw Error(ErrorCode::kInvalidArgument, "prompt is empty");
  if (max_tokens < 1) throw Error(ErrorCode::kInvalidArgument, "max_tokens must be positive");
  const auto tokens = tokenize_text(prompt);
  if (tokens.size() > static_cast<std::size_t>(config_.positions)) {
    throw Error(ErrorCode::kGeneration, "prompt exceeds the model's position count",
                std::to_string(tokens.size()));
  }
  check_interventions(interventions, config_.depth, config_.width, tokens.size());
  if (capture) {
    for (int l : capture->layers) {
      if (l < 0 || l >= config_.depth) {
        throw Error(ErrorCode::kLayerOutOfRange, "capture layer out of range", std::to_string(l));
      }
    }
    for (const auto& site : capture->positions) {
      if (site.position >= tokens.size()) {
        throw Error(ErrorCode::kInvalidArgument, "capture position beyond sequence", site.key);
      }
    }
  }

  const Parsed parsed = parse_prompt(prompt);
  Plan plan;
  if (parsed.has_answer_prefix) {
    const auto pos = paradigm::locate_positions(token_spans(tokens), parsed.render);
    plan.planted = true;
    plan.answer_first = pos.answer_first;
    plan.lat = pos.lat;
    plan.panl = pos.panl;
    plan.last = pos.prompt_last_token;
    plan.latents = latents(parsed.question, parsed.answer, parsed.task);
    // Telescoping shares: token q carries e(prefix through q) - e(prefix before q),
    // so each share depends on earlier text only and the shares sum to e(answer).
    const std::size_t as = parsed.render.answer_char_span.first;
    double prev = 0.0;
    for (std::size_t q = pos.answer_first; q <= pos.lat; ++q) {
      const std::size_t end = std::min(tokens[q].chars.second, parsed.render.answer_char_span.second);
      const std::string prefix_text = parsed.render.text.substr(as, end - as);
      const double cur = q == pos.lat ? plan.latents.evaluative
                                      : latents(parsed.question, prefix_text, parsed.task).evaluative;
      plan.shares.push_back(cur - prev);
      prev = cur;
    }
  }

  GenerationOutput out;
  const bool need_forward = parsed.phase == 1 || capture || !interventions.empty();
  std::vector<std::vector<float>> trace;
  std::vector<float> final_state;
  if (need_forward) {
    final_state = forward(tokens, plan, interventions, capture ? &trace : nullptr);
  }
  if (capture) {
    const std::size_t D = static_cast<std::size_t>(config_.width);
    for (const auto& site : capture->positions) {
      for (int l : capture->layers) {
        ActivationSlice s;
        s.position = site.key;
        s.layer = l;
        const auto& st = trace[static_cast<std::size_t>(l)];
        s.vector.assign(st.begin() + static_cast<std::ptrdiff_t>(site.position * D),
                        st.begin() + static_cast<std::ptrdiff_t>((site.position + 1) * D));
        out.slices.push_back(std::move(s));
      }
    }
  }

  switch (parsed.phase) {
    case 0:
      out.result = phase0(parsed.question, parsed.task);
      break;
    case 1: {
      const std::size_t D = static_cast<std::size_t>(config_.width);
      const std::size_t last = tokens.size() - 1;
      const double d = config_.signal_gain * (static_cast<double>(final_state[last * D + static_cast<std::size_t>(channels_[0])]) +
                                              static_cast<double>(final_state[last * D + static_cast<std::size_t>(channels_[3])])) +
                       config_.behavior.y_bias;
      const double ly = log_sigmoid(d), ln = log_sigmoid(-d);
      auto& r = out.result;
      r.first_token_logit_map = {{"Y", ly + std::log(0.9)}, {" Y", ly + std::log(0.05)},
                                 {"y", ly + std::log(0.03)}, {" y", ly + std::log(0.02)},
                                 {"N", ln + std::log(0.9)}, {" N", ln + std::log(0.05)},
                                 {"n", ln + std::log(0.03)}, {" n", ln + std::log(0.02)}};
      const bool yes = d > 0.0;
      r.tokens = {yes ? "Y" : "N"};
      r.token_chars = {{0, 1}};
      r.token_logprobs = {r.first_token_logit_map.at(r.tokens[0])};
      break;
    }
    case 2:
      out.result = phase2(parsed.question, parsed.answer, parsed.verification, parsed.task);
      break;
    default:
      out.result = text_result("N/A", std::log(0.5));
      break;
  }
  // Respect the token budget.
  if (out.result.tokens.size() > static_cast<std::size_t>(max_tokens)) {
    out.result.tokens.resize(static_cast<std::size_t>(max_tokens));
    out.result.token_chars.resize(static_cast<std::size_t>(max_tokens));
    out.result.token_logprobs.resize(static_cast<std::size_t>(max_tokens));
  }
  return out;
}

GenerationResult SyntheticModel::sample(std::string_view prompt, int max_tokens, double temperature,
                                        std::uint64_t stream_id) {
  const Parsed parsed = parse_prompt(prompt);
  if (parsed.phase != 0 || parsed.question.empty()) {
    throw Error(ErrorCode::kCapability, "synthetic sampling is defined for answer-generation prompts");
  }
  if (temperature <= 0.0) return generate_greedy(prompt, max_tokens).result;
  const Latents lat = latents(parsed.question, "", parsed.task);
  Stream s = stream(config_.seed, {"sample", parsed.question, std::to_string(stream_id)});
  std::string answer;
  if (s.uniform() < lat.knowledge) {
    answer = gold(parsed.question, parsed.task);
  } else if (parsed.task == Task::kMnli) {
    const std::string g = gold(parsed.question, parsed.task);
    do {
      answer = kLabels[s.below(3)];
    } while (answer == g);
  } else {
    answer = make_phrase(s);
  }
  const auto& classes = paradigm::default_confidence_classes();
  return text_result(std::string(tpl::kAnswerField) + answer + "\n" + std::string(tpl::kConfidenceField) +
                         classes[s.below(classes.size())].label,
                     std::log(0.5));
}

std::vector<paradigm::QuestionItem> SyntheticModel::make_cohort(std::size_t n, Task task,
                                                                std::uint64_t cohort_seed) const {
  std::vector<paradigm::QuestionItem> out;
  out.reserve(n);
  char id[64];
  for (std::size_t i = 0; i < n; ++i) {
    Stream s = stream(cohort_seed, {"cohort", paradigm::to_string(task), std::to_string(i)});
    paradigm::QuestionItem item;
    std::snprintf(id, sizeof id, "syn-%s-%06zu", paradigm::to_string(task).c_str(), i);
    item.id = id;
    item.task = task;
    if (task == Task::kMnli) {
      item.question = "Premise: The " + make_word(s) + " " + make_word(s) + " near the " + make_word(s) +
                      ". Hypothesis: A " + make_word(s) + " " + make_word(s) + ".";
    } else {
      item.question = "Which " + make_word(s) + " of " + capitalized(make_word(s)) + " " +
                      make_word(s) + " is " + make_word(s) + "?";
    }
    const std::string g = gold(item.question, task);
    item.answers = {g};
    if (task == Task::kTriviaQa) {
      // Hard foils share a prefix with the gold answer, easy foils are
      // unrelated words, unrelated foils are numbers.
      const std::string base = paradigm::normalize_answer(g);
      std::string hard;
      do {
        hard = capitalized(g.substr(0, std::max<std::size_t>(2, g.size() / 2)) + kSyllables[s.below(16)]);
      } while (paradigm::normalize_answer(hard) == base);
      std::string easy;
      do {
        easy = make_phrase(s);
      } while (paradigm::normalize_answer(easy) == base);
      item.foils[Condition::kHardFoil] = hard;
      item.foils[Condition::kEasyFoil] = easy;
      item.foils[Condition::kUnrelatedFoil] = std::to_string(1000 + s.below(9000));
    }
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace metaprobe::backend
