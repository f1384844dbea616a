#include "metaprobe/trial.hpp"

#include <cctype>

#include "metaprobe/error.hpp"

namespace metaprobe::paradigm {

namespace {

Verification read_verification(const backend::GenerationResult& r) {
  for (const auto& tok : r.tokens) {
    for (char c : tok) {
      if (std::isspace(static_cast<unsigned char>(c))) continue;
      const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (u == 'Y') return Verification::kY;
      if (u == 'N') return Verification::kN;
      throw Error(ErrorCode::kGeneration, "verification response is not Y/N", r.text());
    }
  }
  throw Error(ErrorCode::kGeneration, "empty verification response");
}

}  // namespace

std::string trial_id_for(const QuestionItem& item, Condition condition) {
  return condition == Condition::kOwn ? item.id : item.id + ":" + to_string(condition);
}

Phase1Prompt phase1_prompt(const backend::Backend& model, const TrialRecord& record) {
  Phase1Prompt p;
  p.render = render_prompt(1, record.task, record.question, record.a1, std::nullopt, record.condition);
  const auto tokens = model.tokenize(p.render.text);
  p.positions = locate_positions(backend::token_spans(tokens), p.render);
  p.length = tokens.size();
  return p;
}

TrialOutput run_trial(backend::Backend& model, const QuestionItem& item, Condition condition,
                      const CaptureGrid& capture, Judge& judge, const TrialLimits& limits) {
  TrialOutput out;
  TrialRecord& rec = out.record;
  rec.trial_id = trial_id_for(item, condition);
  rec.question = item.question;
  rec.gold_answers = item.answers;
  rec.condition = condition;
  rec.task = item.task;

  int phase = 0;
  try {
    const auto p0 = render_prompt(0, item.task, item.question, std::nullopt, std::nullopt, Condition::kOwn);
    const auto gen0 = model.generate_greedy(p0.text, limits.phase0_tokens).result;
    const auto parsed = parse_phase0(gen0.text());
    if (parsed.answer.empty()) throw Error(ErrorCode::kGeneration, "empty Phase-0 answer", gen0.text());
    const auto conf = parse_confidence(parsed.confidence_text.empty() ? gen0.text() : parsed.confidence_text,
                                       default_confidence_classes());
    rec.verbal_confidence = conf.numeric_value;
    rec.confidence_class = conf.label;
    std::size_t first = gen0.tokens.size(), last = 0;
    for (std::size_t i = 0; i < gen0.tokens.size(); ++i) {
      const auto& c = gen0.token_chars[i];
      if (c.first < parsed.answer_chars.second && c.second > parsed.answer_chars.first) {
        first = std::min(first, i);
        last = i;
      }
    }
    rec.mean_answer_logprob = mean_answer_logprob(gen0.token_logprobs, first, last);

    if (condition == Condition::kOwn) {
      rec.a1 = parsed.answer;
    } else {
      const auto it = item.foils.find(condition);
      if (it == item.foils.end() || it->second.empty()) {
        throw Error(ErrorCode::kMissingSlot, "foil condition without a candidate answer", rec.trial_id);
      }
      rec.a1 = it->second;
    }
    rec.a1_correct = score_answer(rec.a1, rec.gold_answers, judge);

    phase = 1;
    const auto p1 = render_prompt(1, item.task, item.question, rec.a1, std::nullopt, condition);
    const auto tokens = model.tokenize(p1.text);
    out.positions = locate_positions(backend::token_spans(tokens), p1);
    backend::ActivationRequest request;
    if (!capture.empty()) {
      for (const auto& key : capture.positions) {
        const auto idx = out.positions.resolve(key);
        if (!idx) throw Error(ErrorCode::kInvalidArgument, "unknown capture position", key);
        request.positions.push_back({key, *idx});
      }
      request.layers = capture.layers;
    }
    auto gen1 = model.generate_greedy(p1.text, limits.phase1_tokens, capture.empty() ? nullptr : &request);
    rec.verification = read_verification(gen1.result);
    const auto desc = model.descriptor();
    rec.verification_logprob_diff = backend::verification_logprob_diff(gen1.result, desc.y_forms, desc.n_forms);
    out.slices = std::move(gen1.slices);
    for (auto& s : out.slices) s.trial_id = rec.trial_id;
    rec.sdt_cell = classify_sdt_cell(rec.a1_correct, rec.verification);

    phase = 2;
    const auto p2 = render_prompt(2, item.task, item.question, rec.a1, rec.verification, condition);
    const auto gen2 = model.generate_greedy(p2.text, limits.phase2_tokens).result;
    rec.a2 = extract_answer(gen2.text());
    if (rec.a2.empty()) throw Error(ErrorCode::kGeneration, "empty Phase-2 answer", gen2.text());
    rec.a2_correct = score_answer(rec.a2, rec.gold_answers, judge);
    rec.answer_changed = normalize_answer(rec.a1) != normalize_answer(rec.a2);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kTransport || e.code() == ErrorCode::kMalformedVerdict) throw;
    rec.error_phase = phase;
    rec.error = e.what();
  }
  return out;
}

}  // namespace metaprobe::paradigm
