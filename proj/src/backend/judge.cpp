#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "metaprobe/judge.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <vector>

#include "json.hpp"
#include "metaprobe/error.hpp"
#include "metaprobe/hash.hpp"

namespace metaprobe::backend {

namespace {

std::string upper_trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  const auto e = s.find_last_not_of(" \t\r\n\"");
  s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

struct Endpoint {
  std::string origin;
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::kConfig, "judge URL lacks a scheme", url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

bool parse_verdict(const std::string& body) {
  std::string verdict = body;
  const auto parsed = nlohmann::json::parse(body, nullptr, false);
  if (!parsed.is_discarded() && parsed.is_object() && parsed.contains("verdict") &&
      parsed["verdict"].is_string()) {
    verdict = parsed["verdict"].get<std::string>();
  }
  verdict = upper_trim(verdict);
  if (verdict == "CORRECT") return true;
  if (verdict == "INCORRECT") return false;
  throw Error(ErrorCode::kMalformedVerdict, "judge verdict is neither CORRECT nor INCORRECT", body);
}

HttpJudge::HttpJudge(std::string endpoint, std::string credential, std::filesystem::path cache_dir,
                     JudgeClientOptions options)
    : endpoint_(std::move(endpoint)),
      credential_(std::move(credential)),
      cache_dir_(std::move(cache_dir)),
      options_(options) {
  if (endpoint_.empty()) throw Error(ErrorCode::kConfig, "judge endpoint is empty");
  if (options_.attempts < 1) throw Error(ErrorCode::kConfig, "judge attempts must be >= 1");
  std::filesystem::create_directories(cache_dir_);
}

HttpJudge HttpJudge::from_environment(std::filesystem::path cache_dir, JudgeClientOptions options) {
  const char* url = std::getenv("METAPROBE_JUDGE_URL");
  const char* key = std::getenv("METAPROBE_JUDGE_KEY");
  if (!url || !*url) throw Error(ErrorCode::kConfig, "METAPROBE_JUDGE_URL is not set");
  return HttpJudge(url, key ? key : "", std::move(cache_dir), options);
}

bool HttpJudge::judge(std::string_view prediction, std::span<const std::string> gold) {
  std::vector<std::string> sorted(gold.begin(), gold.end());
  std::sort(sorted.begin(), sorted.end());
  nlohmann::json request = {{"prediction", std::string(prediction)}, {"gold_answers", sorted}};
  const std::string payload = request.dump();
  const auto cache_file = cache_dir_ / (sha256_hex(payload) + ".verdict");

  if (std::ifstream in(cache_file); in) {
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ++cache_hits_;
    return parse_verdict(body);
  }

  const Endpoint ep = split_url(endpoint_);
  httplib::Client client(ep.origin);
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  httplib::Headers headers;
  if (!credential_.empty()) headers.emplace("Authorization", "Bearer " + credential_);

  std::string last_failure;
  for (int attempt = 0; attempt < options_.attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options_.base_delay * (1 << (attempt - 1)));
    ++network_calls_;
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_failure = "connection error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_failure = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kTransport, "judge rejected the request",
                  "HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    const bool verdict = parse_verdict(res->body);
    std::ofstream(cache_file) << res->body;
    return verdict;
  }
  throw Error(ErrorCode::kTransport,
              "judge unreachable after " + std::to_string(options_.attempts) + " attempts", last_failure);
}

}  // namespace metaprobe::backend
