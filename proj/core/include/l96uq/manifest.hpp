#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

/// Run manifests: config snapshot, seeds, content hashes of every produced
/// file, timing and tool version, stored as manifest.json.
namespace l96uq::io {

inline constexpr const char* kManifestName = "manifest.json";

const char* tool_version();

struct ManifestEntry {
  std::string path;  // relative, '/'-separated
  std::string sha1;  // git blob id
  std::uintmax_t bytes = 0;
};

/// Every regular file below `dir` except manifests, sorted by path.
std::vector<ManifestEntry> scan_files(const std::filesystem::path& dir);

/// Writes dir/manifest.json listing every file below dir.
void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const nlohmann::ordered_json& config, const nlohmann::ordered_json& seeds,
                    const nlohmann::ordered_json& details, double wall_seconds);

/// Problems found when re-hashing the files listed in dir/manifest.json and
/// looking for unlisted files. Empty means the manifest is complete.
std::vector<std::string> check_manifest(const std::filesystem::path& dir);

/// Manifest JSON without the parts that legitimately vary between runs.
nlohmann::ordered_json stable_manifest(const nlohmann::ordered_json& manifest);

}  // namespace l96uq::io
