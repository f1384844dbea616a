#include "metaprobe/scoring.hpp"

#include <cctype>
#include <sstream>
#include <vector>

#include "metaprobe/error.hpp"
#include "metaprobe/paradigm.hpp"

namespace metaprobe::paradigm {

std::string normalize_answer(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 128 && std::ispunct(u)) continue;
    cleaned.push_back(u < 128 ? static_cast<char>(std::tolower(u)) : ch);
  }
  std::istringstream words(cleaned);
  std::string w, out;
  while (words >> w) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

double mean_answer_logprob(std::span<const double> token_logprobs, std::size_t first,
                           std::size_t last) {
  if (first > last) throw Error(ErrorCode::kInvalidArgument, "empty answer token range");
  if (last >= token_logprobs.size()) {
    throw Error(ErrorCode::kInvalidArgument, "answer token range exceeds log-prob vector");
  }
  double sum = 0.0;
  for (std::size_t i = first; i <= last; ++i) sum += token_logprobs[i];
  return sum / static_cast<double>(last - first + 1);
}

bool ExactMatchJudge::judge(std::string_view prediction, std::span<const std::string> gold) {
  const std::string p = normalize_answer(prediction);
  if (p.empty()) return false;
  for (const auto& g : gold)
    if (normalize_answer(g) == p) return true;
  return false;
}

bool score_answer(std::string_view prediction, std::span<const std::string> gold, Judge& judge) {
  if (prediction.empty()) throw Error(ErrorCode::kInvalidArgument, "prediction is empty");
  if (gold.empty()) throw Error(ErrorCode::kInvalidArgument, "no gold answers");
  return judge.judge(prediction, gold);
}

}  // namespace metaprobe::paradigm
