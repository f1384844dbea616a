#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "metaprobe/backend.hpp"
#include "metaprobe/paradigm.hpp"
#include "metaprobe/probing.hpp"
#include "metaprobe/scoring.hpp"

namespace metaprobe::pik {

struct PikEstimate {
  std::string trial_id;
  int n_samples = 0;
  int n_match = 0;
  double p_ik = 0.0;
};

struct PikOptions {
  int n_samples = 20;
  double temperature = 1.0;
  int max_tokens = 48;
  std::uint64_t seed = 0;
};

/// Fraction of temperature samples of the Phase-0 prompt whose answer field
/// the judge scores as correct. Sample i uses stream hash(seed, trial_id, i).
PikEstimate estimate_pik(backend::Backend& model, const std::string& trial_id, paradigm::Task task,
                         std::string_view question, std::span<const std::string> gold, paradigm::Judge& judge,
                         const PikOptions& options = {});

std::uint64_t sample_stream(std::uint64_t seed, std::string_view trial_id, int index);

void write_pik_csv(const std::filesystem::path& path, std::span<const PikEstimate> rows);
std::vector<PikEstimate> read_pik_csv(const std::filesystem::path& path);
probing::PikTable to_table(std::span<const PikEstimate> rows);

}  // namespace metaprobe::pik
