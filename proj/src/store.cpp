#include "metaprobe/store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "metaprobe/error.hpp"

namespace metaprobe::store {

using paradigm::TrialRecord;

namespace {

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open", path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kIo, "malformed JSON line", path.string() + ":" + std::to_string(lineno));
    }
  }
  return rows;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) throw Error(ErrorCode::kIo, std::string("missing field ") + key, where.string());
  return j.at(key).get<T>();
}

}  // namespace

ordered_json to_json(const TrialRecord& r) {
  ordered_json j;
  j["trial_id"] = r.trial_id;
  j["question"] = r.question;
  j["gold_answers"] = r.gold_answers;
  j["a1"] = r.a1;
  j["a1_correct"] = r.a1_correct;
  j["verbal_confidence"] = r.verbal_confidence;
  j["confidence_class"] = r.confidence_class;
  j["mean_answer_logprob"] = r.mean_answer_logprob;
  j["verification"] = paradigm::to_string(r.verification);
  j["verification_logprob_diff"] = r.verification_logprob_diff;
  j["a2"] = r.a2;
  j["a2_correct"] = r.a2_correct;
  j["answer_changed"] = r.answer_changed;
  j["sdt_cell"] = paradigm::to_string(r.sdt_cell);
  j["condition"] = paradigm::to_string(r.condition);
  j["task"] = paradigm::to_string(r.task);
  if (r.error_phase) {
    j["error_phase"] = *r.error_phase;
    j["error"] = r.error;
  }
  return j;
}

TrialRecord trial_from_json(const nlohmann::json& j) {
  TrialRecord r;
  r.trial_id = j.at("trial_id").get<std::string>();
  r.question = j.at("question").get<std::string>();
  r.gold_answers = j.at("gold_answers").get<std::vector<std::string>>();
  r.a1 = j.at("a1").get<std::string>();
  r.a1_correct = j.at("a1_correct").get<bool>();
  r.verbal_confidence = j.at("verbal_confidence").get<double>();
  r.confidence_class = j.at("confidence_class").get<std::string>();
  r.mean_answer_logprob = j.at("mean_answer_logprob").get<double>();
  r.verification = paradigm::parse_verification(j.at("verification").get<std::string>());
  r.verification_logprob_diff = j.at("verification_logprob_diff").get<double>();
  r.a2 = j.at("a2").get<std::string>();
  r.a2_correct = j.at("a2_correct").get<bool>();
  r.answer_changed = j.at("answer_changed").get<bool>();
  r.sdt_cell = paradigm::parse_sdt_cell(j.at("sdt_cell").get<std::string>());
  r.condition = paradigm::parse_condition(j.at("condition").get<std::string>());
  r.task = paradigm::parse_task(j.at("task").get<std::string>());
  if (j.contains("error_phase")) {
    r.error_phase = j.at("error_phase").get<int>();
    r.error = j.value("error", "");
  }
  return r;
}

void write_trials(const fs::path& path, std::span<const TrialRecord> trials) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write", path.string());
  for (const auto& t : trials) out << to_json(t).dump() << '\n';
}

std::vector<TrialRecord> read_trials(const fs::path& path) {
  std::vector<TrialRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(trial_from_json(j));
  return out;
}

std::vector<paradigm::QuestionItem> read_questions(const fs::path& path, paradigm::Task task) {
  std::vector<paradigm::QuestionItem> items;
  for (const auto& j : read_jsonl(path)) {
    paradigm::QuestionItem it;
    it.task = task;
    it.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    if (task == paradigm::Task::kMnli) {
      it.question = "Premise: " + field<std::string>(j, "premise", path) +
                    " Hypothesis: " + field<std::string>(j, "hypothesis", path);
      it.answers = {field<std::string>(j, "label", path)};
    } else {
      it.question = field<std::string>(j, "question", path);
      it.answers = field<std::vector<std::string>>(j, "answers", path);
    }
    if (it.answers.empty()) throw Error(ErrorCode::kIo, "item has no gold answers", it.id);
    for (auto c : {paradigm::Condition::kHardFoil, paradigm::Condition::kEasyFoil,
                   paradigm::Condition::kUnrelatedFoil}) {
      const auto key = paradigm::to_string(c);
      if (j.contains(key)) it.foils[c] = j.at(key).get<std::string>();
    }
    items.push_back(std::move(it));
  }
  return items;
}

void attach_foils(const fs::path& path, std::vector<paradigm::QuestionItem>& items) {
  std::map<std::string, paradigm::QuestionItem*> by_id;
  for (auto& it : items) by_id[it.id] = &it;
  for (const auto& j : read_jsonl(path)) {
    const std::string id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    const auto found = by_id.find(id);
    if (found == by_id.end()) continue;
    for (auto c : {paradigm::Condition::kHardFoil, paradigm::Condition::kEasyFoil,
                   paradigm::Condition::kUnrelatedFoil}) {
      const auto key = paradigm::to_string(c);
      if (j.contains(key)) found->second->foils[c] = j.at(key).get<std::string>();
    }
  }
}

void write_questions(const fs::path& path, std::span<const paradigm::QuestionItem> items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write", path.string());
  for (const auto& it : items) {
    ordered_json j;
    j["id"] = it.id;
    j["question"] = it.question;
    j["answers"] = it.answers;
    for (const auto& [c, foil] : it.foils) j[paradigm::to_string(c)] = foil;
    out << j.dump() << '\n';
  }
}

ordered_json to_json(const backend::BackendDescriptor& d) {
  ordered_json j;
  j["name"] = d.name;
  j["depth"] = d.depth;
  j["width"] = d.width;
  j["layer_convention"] = d.layer_convention;
  j["chat_format"] = d.chat_format;
  j["y_forms"] = d.y_forms;
  j["n_forms"] = d.n_forms;
  ordered_json p = ordered_json::object();
  for (const auto& [k, v] : d.parameters) p[k] = v;
  j["parameters"] = p;
  return j;
}

ActivationSet::ActivationSet(int width, std::vector<std::string> trial_ids)
    : width_(width), trial_ids_(std::move(trial_ids)) {
  if (width_ <= 0) throw Error(ErrorCode::kInvalidArgument, "activation width must be positive");
}

void ActivationSet::put(std::size_t row, const backend::ActivationSlice& slice) {
  if (row >= trial_ids_.size()) throw Error(ErrorCode::kInvalidArgument, "activation row out of range");
  if (slice.vector.size() != static_cast<std::size_t>(width_)) {
    throw Error(ErrorCode::kWidthMismatch, "slice width differs from store width", slice.trial_id);
  }
  for (float v : slice.vector) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "non-finite activation", slice.trial_id);
  }
  auto& cell = cells_[{slice.position, slice.layer}];
  if (cell.empty()) cell.assign(trial_ids_.size() * static_cast<std::size_t>(width_), 0.0f);
  std::copy(slice.vector.begin(), slice.vector.end(),
            cell.begin() + static_cast<std::ptrdiff_t>(row * static_cast<std::size_t>(width_)));
}

bool ActivationSet::has(const std::string& position, int layer) const {
  return cells_.count({position, layer}) > 0;
}

const std::vector<float>& ActivationSet::raw(const std::string& position, int layer) const {
  const auto it = cells_.find({position, layer});
  if (it == cells_.end()) {
    throw Error(ErrorCode::kMissingCacheCell, "activation cell not stored",
                position + " L" + std::to_string(layer));
  }
  return it->second;
}

Eigen::MatrixXd ActivationSet::matrix(const std::string& position, int layer) const {
  const auto& v = raw(position, layer);
  const auto n = static_cast<Eigen::Index>(trial_ids_.size());
  Eigen::MatrixXd m(n, width_);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < width_; ++j) m(i, j) = v[static_cast<std::size_t>(i * width_ + j)];
  return m;
}

std::vector<std::pair<std::string, int>> ActivationSet::cells() const {
  std::vector<std::pair<std::string, int>> out;
  for (const auto& [k, v] : cells_) out.push_back(k);
  return out;
}

std::string cell_filename(const std::string& position, int layer) {
  return position + "_L" + std::to_string(layer) + ".f32";
}

void ActivationSet::save(const fs::path& dir, const ordered_json& manifest_extra) const {
  static_assert(std::endian::native == std::endian::little, "activation files are little-endian");
  fs::create_directories(dir);
  ordered_json m = manifest_extra;
  m["width"] = width_;
  m["n_trials"] = trial_ids_.size();
  m["dtype"] = "float32-le";
  m["layout"] = "row-major [n_trials x width]";
  m["trial_ids"] = trial_ids_;
  ordered_json cells = ordered_json::array();
  for (const auto& [key, data] : cells_) {
    const auto name = cell_filename(key.first, key.second);
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write", (dir / name).string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    cells.push_back({{"position", key.first}, {"layer", key.second}, {"file", name}});
  }
  m["cells"] = cells;
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

ActivationSet ActivationSet::load(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorCode::kMissingStage, "activation store has no manifest", dir.string());
  const auto m = nlohmann::json::parse(in);
  ActivationSet s(m.at("width").get<int>(), m.at("trial_ids").get<std::vector<std::string>>());
  const std::size_t expect = s.rows() * static_cast<std::size_t>(s.width_);
  for (const auto& c : m.at("cells")) {
    const auto path = dir / c.at("file").get<std::string>();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::kMissingCacheCell, "activation file missing", path.string());
    std::vector<float> data(expect);
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expect * sizeof(float)));
    if (static_cast<std::size_t>(f.gcount()) != expect * sizeof(float)) {
      throw Error(ErrorCode::kIo, "activation file truncated", path.string());
    }
    s.cells_[{c.at("position").get<std::string>(), c.at("layer").get<int>()}] = std::move(data);
  }
  return s;
}

}  // namespace metaprobe::store
