#include "metaprobe/backend.hpp"

#include <algorithm>
#include <limits>

#include "metaprobe/error.hpp"

namespace metaprobe::backend {

std::string GenerationResult::text() const {
  std::string out;
  for (const auto& t : tokens) out += t;
  return out;
}

GenerationResult Backend::sample(std::string_view, int, double, std::uint64_t) {
  throw Error(ErrorCode::kCapability, "backend does not support temperature sampling",
              descriptor().name);
}

std::vector<paradigm::TokenSpan> token_spans(const std::vector<Token>& tokens) {
  std::vector<paradigm::TokenSpan> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) out.push_back({i, tokens[i].chars});
  return out;
}

double verification_logprob_diff(const GenerationResult& result,
                                 const std::vector<std::string>& y_forms,
                                 const std::vector<std::string>& n_forms) {
  auto best = [&](const std::vector<std::string>& forms, const char* letter) {
    double m = -std::numeric_limits<double>::infinity();
    bool found = false;
    for (const auto& f : forms) {
      const auto it = result.first_token_logit_map.find(f);
      if (it == result.first_token_logit_map.end()) continue;
      m = std::max(m, it->second);
      found = true;
    }
    if (!found) {
      throw Error(ErrorCode::kInvalidArgument, "first-token map lacks every form of a letter", letter);
    }
    return m;
  };
  return best(y_forms, "Y") - best(n_forms, "N");
}

void check_interventions(std::span<const InterventionSpec> interventions, int depth, int width,
                         std::size_t sequence_length) {
  bool corrupt = false;
  for (const auto& spec : interventions) {
    if (spec.kind == InterventionKind::kCorruptEmbeddings) corrupt = true;
    for (const auto& c : spec.cells) {
      if (c.layer < 0 || c.layer >= depth) {
        throw Error(ErrorCode::kLayerOutOfRange, "intervention layer out of range",
                    std::to_string(c.layer));
      }
      if (spec.kind == InterventionKind::kCorruptEmbeddings && c.layer != 0) {
        throw Error(ErrorCode::kInvalidArgument, "embedding corruption applies at layer 0");
      }
      if (c.position >= sequence_length) {
        throw Error(ErrorCode::kInvalidArgument, "intervention position beyond sequence",
                    std::to_string(c.position));
      }
      if (c.vector.size() != static_cast<std::size_t>(width)) {
        throw Error(ErrorCode::kWidthMismatch, "replacement vector width differs from model");
      }
    }
  }
  for (const auto& spec : interventions) {
    if (spec.kind == InterventionKind::kPatch && !corrupt) {
      throw Error(ErrorCode::kInvalidArgument, "patch requires a corrupted source run");
    }
  }
}

}  // namespace metaprobe::backend
