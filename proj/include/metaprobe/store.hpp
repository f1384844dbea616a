#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "metaprobe/backend.hpp"
#include "metaprobe/paradigm.hpp"

namespace metaprobe::store {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

ordered_json to_json(const paradigm::TrialRecord& r);
paradigm::TrialRecord trial_from_json(const nlohmann::json& j);

void write_trials(const fs::path& path, std::span<const paradigm::TrialRecord> trials);
std::vector<paradigm::TrialRecord> read_trials(const fs::path& path);

/// TriviaQA-style {id, question, answers} or MNLI-style {id, premise,
/// hypothesis, label} lines.
std::vector<paradigm::QuestionItem> read_questions(const fs::path& path, paradigm::Task task);
/// Adds {id, hard_foil, easy_foil, unrelated_foil} lines to matching items.
void attach_foils(const fs::path& path, std::vector<paradigm::QuestionItem>& items);
void write_questions(const fs::path& path, std::span<const paradigm::QuestionItem> items);

ordered_json to_json(const backend::BackendDescriptor& d);

/// Per-(position, layer) activation matrices aligned to an ordered trial list.
class ActivationSet {
 public:
  ActivationSet() = default;
  ActivationSet(int width, std::vector<std::string> trial_ids);

  int width() const { return width_; }
  std::size_t rows() const { return trial_ids_.size(); }
  const std::vector<std::string>& trial_ids() const { return trial_ids_; }

  void put(std::size_t row, const backend::ActivationSlice& slice);
  bool has(const std::string& position, int layer) const;
  /// Rows x width matrix in double precision.
  Eigen::MatrixXd matrix(const std::string& position, int layer) const;
  const std::vector<float>& raw(const std::string& position, int layer) const;
  std::vector<std::pair<std::string, int>> cells() const;

  /// Writes manifest.json plus one little-endian float32 file per cell.
  void save(const fs::path& dir, const ordered_json& manifest_extra) const;
  static ActivationSet load(const fs::path& dir);

 private:
  int width_ = 0;
  std::vector<std::string> trial_ids_;
  std::map<std::pair<std::string, int>, std::vector<float>> cells_;
};

std::string cell_filename(const std::string& position, int layer);

}  // namespace metaprobe::store
