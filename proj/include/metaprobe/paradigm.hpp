#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace metaprobe::paradigm {

enum class Task { kTriviaQa, kMnli };
enum class Condition { kOwn, kHardFoil, kEasyFoil, kUnrelatedFoil };
enum class Verification { kY, kN };
enum class SdtCell { kHit, kMiss, kFa, kCr };

std::string to_string(Task t);
std::string to_string(Condition c);
std::string to_string(Verification v);
std::string to_string(SdtCell c);
Task parse_task(std::string_view s);
Condition parse_condition(std::string_view s);
Verification parse_verification(std::string_view s);
SdtCell parse_sdt_cell(std::string_view s);

inline constexpr std::array<Condition, 4> kAllConditions{
    Condition::kOwn, Condition::kHardFoil, Condition::kEasyFoil, Condition::kUnrelatedFoil};

struct TrialRecord {
  std::string trial_id;
  std::string question;
  std::vector<std::string> gold_answers;
  std::string a1;
  bool a1_correct = false;
  double verbal_confidence = 0.0;
  std::string confidence_class;
  double mean_answer_logprob = 0.0;
  Verification verification = Verification::kN;
  double verification_logprob_diff = 0.0;
  std::string a2;
  bool a2_correct = false;
  bool answer_changed = false;
  SdtCell sdt_cell = SdtCell::kCr;
  Condition condition = Condition::kOwn;
  Task task = Task::kTriviaQa;
  // Set only on partial records: the phase that failed and why.
  std::optional<int> error_phase;
  std::string error;

  bool complete() const { return !error_phase.has_value(); }
};

/// One input question. MNLI items carry the rendered premise/hypothesis text
/// as `question` and the label as the single answer.
struct QuestionItem {
  std::string id;
  Task task = Task::kTriviaQa;
  std::string question;
  std::vector<std::string> answers;
  std::map<Condition, std::string> foils;
};

/// Half-open character range [first, second).
using CharSpan = std::pair<std::size_t, std::size_t>;

struct PromptRender {
  std::string text;
  CharSpan answer_char_span{0, 0};
  CharSpan question_char_span{0, 0};
  int phase = 0;
};

// Template fragments shared with backends that parse rendered prompts.
namespace templates {
inline constexpr std::string_view kQuestion = "Question: ";
inline constexpr std::string_view kOwnAnswer = "Your answer: ";
inline constexpr std::string_view kCandidateAnswer = "The candidate's answer: ";
inline constexpr std::string_view kVerify = "Verify your answer. Correct? (Output ONLY a single letter, Y/N):";
inline constexpr std::string_view kYouSaid = "You said: ";
inline constexpr std::string_view kCorrectTrivia = "What do you believe is the correct answer to this question?";
inline constexpr std::string_view kMnliVerified = "Verify your answer. Correct?: ";
inline constexpr std::string_view kMnliCorrect =
    "What is the correct relationship - entailment, neutral, or contradiction?\n"
    "(Output ONLY one of: entailment, neutral, contradiction):";
inline constexpr std::string_view kPhase0Header =
    "Answer the following question with a short answer and no reasoning or explanation, "
    "then rate your confidence that your answer is correct.";
inline constexpr std::string_view kAnswerField = "Answer: ";
inline constexpr std::string_view kConfidenceField = "Confidence: ";
}  // namespace templates

struct ConfidenceClass {
  std::string label;
  double lo = 0.0;
  double hi = 0.0;
  double numeric_value = 0.0;
};

/// The ten classes offered in the Phase-0 prompt, ordered by interval.
const std::vector<ConfidenceClass>& default_confidence_classes();

/// Checks tiling of [0,1], unique first words and value-in-interval.
void validate_classes(std::span<const ConfidenceClass> classes);

PromptRender render_prompt(int phase, Task task, std::string_view question,
                           const std::optional<std::string>& a1,
                           const std::optional<Verification>& verification,
                           Condition condition);

struct TokenSpan {
  std::size_t index = 0;
  CharSpan chars{0, 0};
};

struct PositionMap {
  std::size_t answer_first = 0;
  std::size_t answer_last = 0;
  std::size_t panl = 0;
  std::size_t lat = 0;
  std::size_t first_answer_token = 0;
  std::size_t question_third_token = 0;
  std::size_t prompt_last_token = 0;
  std::map<int, std::size_t> panl_offsets;
  bool offsets_clipped = false;

  /// Resolves a named key ("panl", "lat", "panl+6", ...).
  std::optional<std::size_t> resolve(std::string_view key) const;
};

inline constexpr std::array<int, 5> kPanlOffsets{1, 6, 9, 12, 18};

PositionMap locate_positions(std::span<const TokenSpan> tokens, const PromptRender& render);

/// Casefold, drop punctuation and the articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

struct ParsedConfidence {
  std::string label;
  double numeric_value = 0.0;
};

ParsedConfidence parse_confidence(std::string_view completion,
                                  std::span<const ConfidenceClass> classes);

double mean_answer_logprob(std::span<const double> token_logprobs, std::size_t first,
                           std::size_t last);

SdtCell classify_sdt_cell(bool a1_correct, Verification v);

struct Phase0Parse {
  std::string answer;
  CharSpan answer_chars{0, 0};
  std::string confidence_text;
};

/// Splits a Phase-0 completion into its answer and confidence fields.
Phase0Parse parse_phase0(std::string_view completion);

/// First non-empty line of a Phase-2 completion, trimmed.
std::string extract_answer(std::string_view completion);

}  // namespace metaprobe::paradigm
