#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <fstream>

#include "metaprobe/error.hpp"
#include "metaprobe/hash.hpp"
#include "metaprobe/pipeline.hpp"

namespace metaprobe::pipeline {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kLock = ".lock";

}  // namespace

std::vector<std::string> walk_files(const fs::path& run_dir) {
  std::vector<std::string> out;
  if (!fs::exists(run_dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), run_dir).generic_string();
    if (rel == kManifest || rel == kLock) continue;
    out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_manifest(const fs::path& run_dir, const nlohmann::ordered_json& header) {
  nlohmann::ordered_json m = header;
  auto files = nlohmann::ordered_json::array();
  for (const auto& rel : walk_files(run_dir)) {
    const auto p = run_dir / rel;
    files.push_back({{"path", rel}, {"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}});
  }
  m["files"] = files;
  const auto tmp = run_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write manifest", tmp.string());
    out << m.dump(2) << '\n';
  }
  fs::rename(tmp, run_dir / kManifest);
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / kLock) {
  fs::create_directories(run_dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    if (errno == EEXIST) throw Error(ErrorCode::kConfig, "run directory is locked by another writer", path_.string());
    throw Error(ErrorCode::kIo, "cannot create lock file", path_.string());
  }
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

}  // namespace metaprobe::pipeline
