#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metaprobe/backend.hpp"
#include "metaprobe/paradigm.hpp"
#include "metaprobe/scoring.hpp"

namespace metaprobe::paradigm {

struct CaptureGrid {
  std::vector<std::string> positions;  // PositionMap keys
  std::vector<int> layers;
  bool empty() const { return positions.empty() || layers.empty(); }
};

struct TrialLimits {
  int phase0_tokens = 48;
  int phase1_tokens = 1;
  int phase2_tokens = 64;
};

struct TrialOutput {
  TrialRecord record;
  std::vector<backend::ActivationSlice> slices;
  PositionMap positions;
};

/// Trial id for a question under a condition ("q17" or "q17:hard_foil").
std::string trial_id_for(const QuestionItem& item, Condition condition);

/// Runs Phase 0, 1 and 2 with greedy decoding. Foil conditions present the
/// item's foil in Phases 1 and 2 and keep the model's own Phase-0 confidence
/// and log-probability. A generation failure yields a partial record tagged
/// with the failing phase.
TrialOutput run_trial(backend::Backend& model, const QuestionItem& item, Condition condition,
                      const CaptureGrid& capture, Judge& judge, const TrialLimits& limits = {});

/// Renders and locates the Phase-1 prompt of an existing record.
struct Phase1Prompt {
  PromptRender render;
  PositionMap positions;
  std::size_t length = 0;
};
Phase1Prompt phase1_prompt(const backend::Backend& model, const TrialRecord& record);

}  // namespace metaprobe::paradigm
