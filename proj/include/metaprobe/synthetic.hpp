#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metaprobe/backend.hpp"
#include "metaprobe/paradigm.hpp"

// Deterministic layered-residual toy model with planted, routed signals.
//
// State h_p^(l) for l = 0..depth-1; l = 0 is the embedding (the first block is
// inert), block l maps h^(l-1) to h^(l). Four coordinates are reserved
// channels; the rest carry hashed token content mixed causally each block.
//
//   evaluative   planted on answer tokens, moved to LAT in the lat band, moved
//                (or copied, with redundancy) to PANL in the panl band, read by
//                the last position through tanh in the last band (with
//                redundancy, LAT + PANL with LAT weighted four to one)
//   correct-     planted at PANL, separates fixable from unfixable errors
//   ability
//   knowledge    planted at PANL, the per-question P(IK) parameter
//   noise        planted at the last position, decision noise
//
// Readout: d = signal_gain * (h_last[eval] + h_last[noise]) + y_bias at the
// final layer; verification is Y iff d > 0.

namespace metaprobe::backend {

struct RouteBands {
  std::array<int, 2> lat{2, 4};
  std::array<int, 2> panl{6, 8};
  std::array<int, 2> last{10, 11};
};

struct BehaviorConfig {
  double p_correct = 0.6;
  /// AUROC of the evaluative signal for predicting the verification response.
  double detect_auroc = 0.9;
  double y_bias = 1.0;
  /// P(change | N); P(change | Y) is 1 - change_gate.
  double change_gate = 0.9;
  /// AUROC of the correctability channel for A2 correctness.
  double correctability_auroc = 0.85;
  /// Fraction of incorrect answers the model can fix when it changes.
  double p_fix = 0.35;
  /// Separation of the evaluative signal between correct and incorrect answers.
  double evidence_dprime = 2.0;
  double evidence_sd = 0.5;
};

struct SyntheticConfig {
  int depth = 12;
  int width = 24;
  int positions = 512;
  RouteBands route_bands;
  bool redundancy = false;
  double signal_gain = 4.0;
  double noise_sd = 0.1;
  BehaviorConfig behavior;
  std::uint64_t seed = 0;
  /// Non-zero permutes which coordinates hold the channels.
  std::uint64_t layout_seed = 0;
};

void validate(const SyntheticConfig& config);

enum class Channel { kEvaluative = 0, kCorrectability = 1, kKnowledge = 2, kNoise = 3 };

struct Latents {
  bool correct = false;
  double evaluative = 0.0;
  double correctability = 0.0;
  bool a2_ok = false;
  double knowledge = 0.0;
  double noise = 0.0;
  double change_u = 0.0;
};

class SyntheticModel final : public Backend {
 public:
  explicit SyntheticModel(SyntheticConfig config);

  BackendDescriptor descriptor() const override;
  std::vector<Token> tokenize(std::string_view text) const override;
  GenerationOutput generate_greedy(std::string_view prompt, int max_tokens,
                                   const ActivationRequest* capture = nullptr,
                                   std::span<const InterventionSpec> interventions = {}) override;
  bool supports_sampling() const override { return true; }
  GenerationResult sample(std::string_view prompt, int max_tokens, double temperature,
                          std::uint64_t stream) override;

  const SyntheticConfig& config() const { return config_; }
  double decision_noise_sd() const { return sigma_n_; }
  int channel(Channel c) const { return channels_[static_cast<int>(c)]; }

  std::string gold(std::string_view question, paradigm::Task task) const;
  Latents latents(std::string_view question, std::string_view answer, paradigm::Task task) const;

  /// Synthetic question set whose gold answers agree with this model's world.
  std::vector<paradigm::QuestionItem> make_cohort(std::size_t n, paradigm::Task task,
                                                  std::uint64_t cohort_seed) const;

 private:
  struct Plan;
  GenerationResult phase0(std::string_view question, paradigm::Task task) const;
  GenerationResult phase2(std::string_view question, std::string_view answer,
                          paradigm::Verification v, paradigm::Task task) const;
  std::vector<float> forward(const std::vector<Token>& tokens, const Plan& plan,
                             std::span<const InterventionSpec> interventions,
                             std::vector<std::vector<float>>* trace) const;
  const std::vector<float>& token_embedding(const std::string& text) const;
  void calibrate();

  SyntheticConfig config_;
  std::array<int, 4> channels_{};
  std::vector<int> content_dims_;
  double center_ = 0.0;
  double sigma_n_ = 0.0;
  mutable std::unordered_map<std::string, std::vector<float>> embed_cache_;
};

std::unique_ptr<SyntheticModel> build_synthetic(const SyntheticConfig& config);

}  // namespace metaprobe::backend
