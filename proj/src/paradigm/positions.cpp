#include <algorithm>
#include <cctype>
#include <string>

#include "metaprobe/error.hpp"
#include "metaprobe/paradigm.hpp"

namespace metaprobe::paradigm {

namespace {

bool blank(std::string_view text, std::size_t from, std::size_t to) {
  for (std::size_t i = from; i < to; ++i)
    if (!std::isspace(static_cast<unsigned char>(text[i]))) return false;
  return true;
}

std::string describe(const TokenSpan& t) {
  return "token " + std::to_string(t.index) + " chars [" + std::to_string(t.chars.first) + "," +
         std::to_string(t.chars.second) + ")";
}

}  // namespace

std::optional<std::size_t> PositionMap::resolve(std::string_view key) const {
  if (key == "panl") return panl;
  if (key == "lat") return lat;
  if (key == "first_answer_token") return first_answer_token;
  if (key == "question_third_token") return question_third_token;
  if (key == "prompt_last_token") return prompt_last_token;
  if (key.rfind("panl+", 0) == 0) {
    const int off = std::stoi(std::string(key.substr(5)));
    const auto it = panl_offsets.find(off);
    if (it != panl_offsets.end()) return it->second;
  }
  return std::nullopt;
}

PositionMap locate_positions(std::span<const TokenSpan> tokens, const PromptRender& render) {
  if (tokens.empty()) throw Error(ErrorCode::kInvalidArgument, "no tokens");
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].index != i || tokens[i].chars.first != cursor ||
        tokens[i].chars.second < tokens[i].chars.first) {
      throw Error(ErrorCode::kInvalidArgument, "token spans must tile the prompt", describe(tokens[i]));
    }
    cursor = tokens[i].chars.second;
  }
  if (cursor != render.text.size()) {
    throw Error(ErrorCode::kInvalidArgument, "token spans do not cover the prompt");
  }

  const auto [as, ae] = render.answer_char_span;
  if (ae <= as) throw Error(ErrorCode::kMissingSlot, "render has no answer span");
  std::optional<std::size_t> first, last;
  for (const auto& t : tokens) {
    if (t.chars.first < ae && t.chars.second > as) {
      if (!first) first = t.index;
      last = t.index;
    }
  }
  if (!first) throw Error(ErrorCode::kSpanStraddle, "answer span covers no token");
  const auto& ft = tokens[*first];
  if (ft.chars.first < as && !blank(render.text, ft.chars.first, as)) {
    throw Error(ErrorCode::kSpanStraddle, "answer start falls inside a token", describe(ft));
  }
  const auto& lt = tokens[*last];
  if (lt.chars.second > ae && !blank(render.text, ae, lt.chars.second)) {
    throw Error(ErrorCode::kSpanStraddle, "answer end falls inside a token", describe(lt));
  }

  PositionMap m;
  m.answer_first = *first;
  m.answer_last = *last;
  m.first_answer_token = *first;
  m.lat = *last;
  m.panl = m.lat + 1;
  m.prompt_last_token = tokens.size() - 1;
  if (m.panl >= tokens.size()) {
    throw Error(ErrorCode::kInvalidArgument, "prompt ends at the answer; no post-answer token");
  }

  std::vector<std::size_t> question;
  const auto [qs, qe] = render.question_char_span;
  for (const auto& t : tokens) {
    if (t.chars.first < qe && t.chars.second > qs && !blank(render.text, t.chars.first, t.chars.second)) {
      question.push_back(t.index);
    }
  }
  if (question.empty()) throw Error(ErrorCode::kInvalidArgument, "question span covers no token");
  m.question_third_token = question[std::min<std::size_t>(2, question.size() - 1)];
  if (m.question_third_token >= m.answer_first) {
    throw Error(ErrorCode::kInvalidArgument, "question token does not precede the answer");
  }

  for (int off : kPanlOffsets) {
    std::size_t idx = m.panl + static_cast<std::size_t>(off);
    if (idx > m.prompt_last_token) {
      idx = m.prompt_last_token;
      m.offsets_clipped = true;
    }
    m.panl_offsets[off] = idx;
  }
  return m;
}

}  // namespace metaprobe::paradigm
