#include "l96uq/manifest.hpp"

#include "l96uq/array_file.hpp"

#include <algorithm>
#include <fstream>

#ifndef L96UQ_VERSION
#define L96UQ_VERSION "0.0.0"
#endif

namespace l96uq::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

const char* tool_version() { return L96UQ_VERSION; }

std::vector<ManifestEntry> scan_files(const fs::path& dir) {
  std::vector<ManifestEntry> entries;
  if (!fs::exists(dir)) return entries;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == kManifestName) continue;
    ManifestEntry m;
    m.path = fs::relative(e.path(), dir).generic_string();
    m.sha1 = git_blob_sha1_file(e.path());
    m.bytes = e.file_size();
    entries.push_back(std::move(m));
  }
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  return entries;
}

void write_manifest(const fs::path& dir, const std::string& command, const Json& config,
                    const Json& seeds, const Json& details, double wall_seconds) {
  Json files = Json::array();
  for (const ManifestEntry& e : scan_files(dir)) {
    files.push_back({{"path", e.path}, {"sha1", e.sha1}, {"bytes", e.bytes}});
  }
  Json m;
  m["tool"] = "l96uq";
  m["version"] = tool_version();
  m["command"] = command;
  m["seeds"] = seeds;
  m["details"] = details;
  m["files"] = std::move(files);
  m["timing"] = {{"wall_seconds", wall_seconds}};
  m["config"] = config;
  write_file(dir / kManifestName, m.dump(2) + "\n");
}

std::vector<std::string> check_manifest(const fs::path& dir) {
  std::vector<std::string> problems;
  const fs::path path = dir / kManifestName;
  if (!fs::exists(path)) return {"missing " + path.string()};
  Json m;
  try {
    m = Json::parse(read_file(path));
  } catch (const std::exception& ex) {
    return {path.string() + ": " + ex.what()};
  }
  std::vector<std::string> listed;
  for (const Json& f : m.value("files", Json::array())) {
    const std::string rel = f.at("path").get<std::string>();
    listed.push_back(rel);
    const fs::path file = dir / rel;
    if (!fs::exists(file)) {
      problems.push_back("listed file missing: " + rel);
    } else if (git_blob_sha1_file(file) != f.at("sha1").get<std::string>()) {
      problems.push_back("hash mismatch: " + rel);
    }
  }
  for (const ManifestEntry& e : scan_files(dir)) {
    if (std::find(listed.begin(), listed.end(), e.path) == listed.end()) {
      problems.push_back("unlisted file: " + e.path);
    }
  }
  return problems;
}

Json stable_manifest(const Json& manifest) {
  Json out = manifest;
  out.erase("timing");
  return out;
}

}  // namespace l96uq::io
