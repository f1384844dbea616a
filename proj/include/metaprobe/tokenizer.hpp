#pragma once

#include <string_view>
#include <vector>

#include "metaprobe/backend.hpp"

namespace metaprobe::backend {

/// Deterministic toy tokenizer. Leading spaces attach to the following token,
/// newlines and punctuation stand alone, and word runs split into pieces of at
/// most kMaxPiece bytes.
inline constexpr std::size_t kMaxPiece = 5;

std::vector<Token> tokenize_text(std::string_view text);

}  // namespace metaprobe::backend
