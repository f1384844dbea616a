#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>

#include "metaprobe/scoring.hpp"

namespace metaprobe::backend {

struct JudgeClientOptions {
  int attempts = 3;
  std::chrono::milliseconds base_delay{250};
  std::chrono::seconds timeout{30};
};

/// External correctness judge over HTTP.
///
/// POSTs {"prediction": ..., "gold_answers": [...]} with a bearer credential
/// and expects a body whose verdict is CORRECT or INCORRECT (plain text, or a
/// JSON object with a "verdict" field). Verdicts are cached on disk keyed by
/// the SHA-256 of the request content, so repeated pairs never hit the network.
class HttpJudge final : public paradigm::Judge {
 public:
  HttpJudge(std::string endpoint, std::string credential, std::filesystem::path cache_dir,
            JudgeClientOptions options = {});

  /// Endpoint and credential from METAPROBE_JUDGE_URL / METAPROBE_JUDGE_KEY.
  static HttpJudge from_environment(std::filesystem::path cache_dir, JudgeClientOptions options = {});

  bool judge(std::string_view prediction, std::span<const std::string> gold) override;
  std::string name() const override { return "http-judge"; }

  int cache_hits() const { return cache_hits_; }
  int network_calls() const { return network_calls_; }

 private:
  std::string endpoint_;
  std::string credential_;
  std::filesystem::path cache_dir_;
  JudgeClientOptions options_;
  int cache_hits_ = 0;
  int network_calls_ = 0;
};

/// Parses a judge response body; throws kMalformedVerdict with the raw body.
bool parse_verdict(const std::string& body);

}  // namespace metaprobe::backend
