#include "metaprobe/tokenizer.hpp"

#include <algorithm>
#include <cctype>

namespace metaprobe::backend {

namespace {

bool word_byte(unsigned char c) { return c >= 128 || std::isalnum(c); }

}  // namespace

std::vector<Token> tokenize_text(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto emit = [&](std::size_t from, std::size_t to) {
    out.push_back({std::string(text.substr(from, to - from)), {from, to}});
  };
  while (i < n) {
    const std::size_t start = i;
    while (i < n && text[i] != '\n' && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i == n) {
      emit(start, n);
      break;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '\n' || !word_byte(c)) {
      emit(start, i + 1);
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < n && word_byte(static_cast<unsigned char>(text[end]))) ++end;
    std::size_t piece = start;
    std::size_t cut = i;
    while (cut < end) {
      const std::size_t next = std::min(cut + kMaxPiece, end);
      emit(piece, next);
      piece = cut = next;
    }
    i = end;
  }
  return out;
}

}  // namespace metaprobe::backend
