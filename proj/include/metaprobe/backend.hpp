#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metaprobe/paradigm.hpp"

namespace metaprobe::backend {

struct Token {
  std::string text;
  paradigm::CharSpan chars{0, 0};
};

struct GenerationResult {
  std::vector<std::string> tokens;
  /// Character spans of each generated token inside text().
  std::vector<paradigm::CharSpan> token_chars;
  std::vector<double> token_logprobs;
  /// Surface form -> log-probability at the first generated position.
  std::map<std::string, double> first_token_logit_map;

  std::string text() const;
};

/// A named capture site already resolved to a token index.
struct CaptureSite {
  std::string key;
  std::size_t position = 0;
};

struct ActivationRequest {
  std::vector<CaptureSite> positions;
  std::vector<int> layers;
  std::string hook_point = "post-mlp-residual";
};

struct ActivationSlice {
  std::string trial_id;
  std::string position;
  int layer = 0;
  std::vector<float> vector;
};

enum class InterventionKind { kCorruptEmbeddings, kPatch, kAblate };
enum class Replacement { kSuppliedVector, kCleanCache, kCalibrationMean };

/// Replaces the residual state at (position, layer) after that layer's block.
/// Layer 0 is the embedding state.
struct StateOverride {
  std::size_t position = 0;
  int layer = 0;
  std::vector<float> vector;
};

struct InterventionSpec {
  InterventionKind kind = InterventionKind::kPatch;
  Replacement replacement = Replacement::kSuppliedVector;
  std::vector<StateOverride> cells;
};

struct BackendDescriptor {
  std::string name;
  int depth = 0;
  int width = 0;
  std::string layer_convention;
  std::string chat_format;
  std::vector<std::string> y_forms;
  std::vector<std::string> n_forms;
  std::map<std::string, std::string> parameters;
};

struct GenerationOutput {
  GenerationResult result;
  std::vector<ActivationSlice> slices;
};

/// The model abstraction. Real instrumented models implement this interface
/// out of tree; the library ships the synthetic implementation only.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendDescriptor descriptor() const = 0;
  virtual std::vector<Token> tokenize(std::string_view text) const = 0;

  virtual GenerationOutput generate_greedy(std::string_view prompt, int max_tokens,
                                           const ActivationRequest* capture = nullptr,
                                           std::span<const InterventionSpec> interventions = {}) = 0;

  virtual bool supports_sampling() const { return false; }
  /// Temperature sampling; `stream` selects an independent random stream.
  virtual GenerationResult sample(std::string_view prompt, int max_tokens, double temperature,
                                  std::uint64_t stream);
};

/// Tokens of `text` as index/char-span pairs for position lookup.
std::vector<paradigm::TokenSpan> token_spans(const std::vector<Token>& tokens);

inline const std::vector<std::string>& default_y_forms() {
  static const std::vector<std::string> f{"Y", " Y", "y", " y"};
  return f;
}
inline const std::vector<std::string>& default_n_forms() {
  static const std::vector<std::string> f{"N", " N", "n", " n"};
  return f;
}

/// log P(Y) - log P(N), each side the maximum over its registered forms.
double verification_logprob_diff(const GenerationResult& result,
                                 const std::vector<std::string>& y_forms = default_y_forms(),
                                 const std::vector<std::string>& n_forms = default_n_forms());

/// Validates intervention layers/positions against model shape before compute.
void check_interventions(std::span<const InterventionSpec> interventions, int depth, int width,
                         std::size_t sequence_length);

}  // namespace metaprobe::backend
