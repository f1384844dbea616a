#include "metaprobe/pik.hpp"

#include <fstream>
#include <sstream>

#include "metaprobe/error.hpp"

namespace metaprobe::pik {

std::uint64_t sample_stream(std::uint64_t seed, std::string_view trial_id, int index) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char c : trial_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  h ^= static_cast<std::uint64_t>(index) + 0x9e3779b97f4a7c15ULL;
  h *= 1099511628211ULL;
  return h;
}

PikEstimate estimate_pik(backend::Backend& model, const std::string& trial_id, paradigm::Task task,
                         std::string_view question, std::span<const std::string> gold, paradigm::Judge& judge,
                         const PikOptions& options) {
  if (!model.supports_sampling()) {
    throw Error(ErrorCode::kCapability, "P(IK) needs temperature sampling", model.descriptor().name);
  }
  if (options.n_samples < 1) throw Error(ErrorCode::kInvalidArgument, "n_samples must be positive");
  const auto prompt = paradigm::render_prompt(0, task, question, std::nullopt, std::nullopt, paradigm::Condition::kOwn);
  PikEstimate e;
  e.trial_id = trial_id;
  e.n_samples = options.n_samples;
  for (int i = 0; i < options.n_samples; ++i) {
    const auto r = model.sample(prompt.text, options.max_tokens, options.temperature,
                                sample_stream(options.seed, trial_id, i));
    const auto answer = paradigm::parse_phase0(r.text()).answer;
    if (!answer.empty() && paradigm::score_answer(answer, gold, judge)) ++e.n_match;
  }
  e.p_ik = static_cast<double>(e.n_match) / e.n_samples;
  return e;
}

void write_pik_csv(const std::filesystem::path& path, std::span<const PikEstimate> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write", path.string());
  out << "trial_id,n_samples,n_match,p_ik\n";
  out.precision(17);
  for (const auto& r : rows) out << r.trial_id << ',' << r.n_samples << ',' << r.n_match << ',' << r.p_ik << '\n';
}

std::vector<PikEstimate> read_pik_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingStage, "P(IK) table missing", path.string());
  std::string line;
  std::getline(in, line);
  std::vector<PikEstimate> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    PikEstimate e;
    std::string n, m;
    std::getline(ss, e.trial_id, ',');
    std::getline(ss, n, ',');
    std::getline(ss, m, ',');
    e.n_samples = std::stoi(n);
    e.n_match = std::stoi(m);
    e.p_ik = static_cast<double>(e.n_match) / e.n_samples;
    rows.push_back(e);
  }
  return rows;
}

probing::PikTable to_table(std::span<const PikEstimate> rows) {
  probing::PikTable t;
  for (const auto& r : rows) t[r.trial_id] = r.p_ik;
  return t;
}

}  // namespace metaprobe::pik
