#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "metaprobe/error.hpp"
#include "metaprobe/paradigm.hpp"

namespace metaprobe::paradigm {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string first_word(std::string_view s) {
  s = trim(s);
  const auto end = s.find_first_of(" \t\n");
  return lower(s.substr(0, end));
}

std::string confidence_menu() {
  std::string out;
  char buf[64];
  for (const auto& c : default_confidence_classes()) {
    std::snprintf(buf, sizeof buf, " (%.1f-%.1f)\n", c.lo, c.hi);
    out += c.label + buf;
  }
  return out;
}

}  // namespace

std::string to_string(Task t) { return t == Task::kTriviaQa ? "triviaqa" : "mnli"; }

std::string to_string(Condition c) {
  switch (c) {
    case Condition::kOwn: return "own";
    case Condition::kHardFoil: return "hard_foil";
    case Condition::kEasyFoil: return "easy_foil";
    case Condition::kUnrelatedFoil: return "unrelated_foil";
  }
  return "own";
}

std::string to_string(Verification v) { return v == Verification::kY ? "Y" : "N"; }

std::string to_string(SdtCell c) {
  switch (c) {
    case SdtCell::kHit: return "hit";
    case SdtCell::kMiss: return "miss";
    case SdtCell::kFa: return "fa";
    case SdtCell::kCr: return "cr";
  }
  return "cr";
}

Task parse_task(std::string_view s) {
  if (s == "triviaqa") return Task::kTriviaQa;
  if (s == "mnli") return Task::kMnli;
  throw Error(ErrorCode::kInvalidArgument, "unknown task", std::string(s));
}

Condition parse_condition(std::string_view s) {
  for (Condition c : kAllConditions)
    if (to_string(c) == s) return c;
  throw Error(ErrorCode::kInvalidArgument, "unknown condition", std::string(s));
}

Verification parse_verification(std::string_view s) {
  if (s == "Y") return Verification::kY;
  if (s == "N") return Verification::kN;
  throw Error(ErrorCode::kInvalidArgument, "verification must be Y or N", std::string(s));
}

SdtCell parse_sdt_cell(std::string_view s) {
  for (SdtCell c : {SdtCell::kHit, SdtCell::kMiss, SdtCell::kFa, SdtCell::kCr})
    if (to_string(c) == s) return c;
  throw Error(ErrorCode::kInvalidArgument, "unknown sdt cell", std::string(s));
}

const std::vector<ConfidenceClass>& default_confidence_classes() {
  static const std::vector<ConfidenceClass> classes = [] {
    const char* labels[] = {"No chance",        "Really unlikely",   "Chances are slight",
                            "Unlikely",         "Less than even",    "Better than even",
                            "Likely",           "Very good chance",  "Highly likely",
                            "Almost certain"};
    std::vector<ConfidenceClass> out;
    for (int i = 0; i < 10; ++i) {
      ConfidenceClass c;
      c.label = labels[i];
      c.lo = i / 10.0;
      c.hi = (i + 1) / 10.0;
      c.numeric_value = (c.lo + c.hi) / 2.0;
      out.push_back(c);
    }
    return out;
  }();
  return classes;
}

void validate_classes(std::span<const ConfidenceClass> classes) {
  if (classes.empty()) throw Error(ErrorCode::kInvalidArgument, "no confidence classes");
  std::set<std::string> firsts;
  double edge = 0.0;
  for (const auto& c : classes) {
    if (std::abs(c.lo - edge) > 1e-12 || !(c.hi > c.lo)) {
      throw Error(ErrorCode::kInvalidArgument, "confidence classes must tile [0,1] in order",
                  c.label);
    }
    if (c.numeric_value < c.lo || c.numeric_value > c.hi) {
      throw Error(ErrorCode::kInvalidArgument, "class value outside its interval", c.label);
    }
    if (!firsts.insert(first_word(c.label)).second) {
      throw Error(ErrorCode::kInvalidArgument, "class first words must be unique", c.label);
    }
    edge = c.hi;
  }
  if (std::abs(edge - 1.0) > 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "confidence classes must end at 1");
  }
}

PromptRender render_prompt(int phase, Task task, std::string_view question,
                           const std::optional<std::string>& a1,
                           const std::optional<Verification>& verification,
                           Condition condition) {
  using namespace templates;
  if (phase < 0 || phase > 2) throw Error(ErrorCode::kInvalidArgument, "phase must be 0, 1 or 2");
  if (question.empty()) throw Error(ErrorCode::kMissingSlot, "question slot is empty");
  PromptRender r;
  r.phase = phase;
  if (phase == 0) {
    r.text = std::string(kPhase0Header) + "\n";
    if (task == Task::kMnli) {
      r.text += "The answer must be one of: entailment, neutral, contradiction.\n";
    }
    r.text += "Choose exactly one confidence class:\n" + confidence_menu();
    r.text += "Respond in exactly this format:\nAnswer: <answer>\nConfidence: <class>\n";
    r.text += kQuestion;
    r.question_char_span = {r.text.size(), r.text.size() + question.size()};
    r.text += question;
    r.text += "\n";
    return r;
  }
  if (!a1 || a1->empty()) throw Error(ErrorCode::kMissingSlot, "answer slot is required for phase 1/2");
  if (phase == 2 && !verification) {
    throw Error(ErrorCode::kMissingSlot, "verification slot is required for phase 2");
  }
  r.text = std::string(kQuestion);
  r.question_char_span = {r.text.size(), r.text.size() + question.size()};
  r.text += question;
  r.text += "\n";
  r.text += condition == Condition::kOwn ? kOwnAnswer : kCandidateAnswer;
  r.answer_char_span = {r.text.size(), r.text.size() + a1->size()};
  r.text += *a1;
  r.text += "\n";
  if (phase == 1) {
    r.text += kVerify;
    return r;
  }
  const std::string v = to_string(*verification);
  if (task == Task::kTriviaQa) {
    r.text += std::string(kYouSaid) + v + "\n";
    r.text += kCorrectTrivia;
  } else {
    r.text += std::string(kMnliVerified) + v + "\n";
    r.text += kMnliCorrect;
  }
  return r;
}

ParsedConfidence parse_confidence(std::string_view completion,
                                  std::span<const ConfidenceClass> classes) {
  std::string_view field = completion;
  const auto tag = lower(completion).find(lower(templates::kConfidenceField));
  if (tag != std::string::npos) field = completion.substr(tag + templates::kConfidenceField.size());
  const std::string hay = lower(trim(field));
  const ConfidenceClass* best = nullptr;
  for (const auto& c : classes) {
    const std::string l = lower(c.label);
    if (hay.compare(0, l.size(), l) != 0) continue;
    if (!best || l.size() > best->label.size()) best = &c;
  }
  if (!best) {
    throw Error(ErrorCode::kNoClassMatch, "no confidence class matches", std::string(completion));
  }
  return {best->label, best->numeric_value};
}

Phase0Parse parse_phase0(std::string_view completion) {
  Phase0Parse out;
  const std::string low = lower(completion);
  std::size_t start = 0;
  const auto tag = low.find(lower(templates::kAnswerField));
  if (tag != std::string::npos) start = tag + templates::kAnswerField.size();
  std::size_t end = completion.find('\n', start);
  if (end == std::string_view::npos) end = completion.size();
  while (start < end && std::isspace(static_cast<unsigned char>(completion[start]))) ++start;
  while (end > start && std::isspace(static_cast<unsigned char>(completion[end - 1]))) --end;
  out.answer = std::string(completion.substr(start, end - start));
  out.answer_chars = {start, end};
  const auto ctag = low.find(lower(templates::kConfidenceField));
  if (ctag != std::string::npos) {
    out.confidence_text = std::string(completion.substr(ctag));
  }
  return out;
}

std::string extract_answer(std::string_view completion) {
  std::size_t pos = 0;
  while (pos < completion.size()) {
    std::size_t end = completion.find('\n', pos);
    if (end == std::string_view::npos) end = completion.size();
    const auto line = trim(completion.substr(pos, end - pos));
    if (!line.empty()) return std::string(line);
    pos = end + 1;
  }
  return {};
}

SdtCell classify_sdt_cell(bool a1_correct, Verification v) {
  if (a1_correct) return v == Verification::kY ? SdtCell::kHit : SdtCell::kMiss;
  return v == Verification::kY ? SdtCell::kFa : SdtCell::kCr;
}

}  // namespace metaprobe::paradigm
