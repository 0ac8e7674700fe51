#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace vqfuzz {

// Reproducibility record written next to every artifact as manifest.json.
// Two runs with the same inputs produce identical files apart from
// `timestamp`.
struct RunManifest {
  std::string command;
  std::string config;       // canonical config text
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string dataset_checksum;
  std::map<std::string, std::string> model_checksums;
  std::optional<double> trained_lambda;
  std::map<std::string, std::string> properties;  // stage-specific flags
  std::string tool_version;
  std::string timestamp;  // UTC, ISO 8601
};

std::string to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const std::string& text);

inline constexpr const char* kManifestFile = "manifest.json";

void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);
// Throws MissingArtifact when `dir` has no manifest and CorruptData when it
// cannot be parsed.
RunManifest read_manifest(const std::filesystem::path& dir);

std::string utc_timestamp();
const char* tool_version() noexcept;

}  // namespace vqfuzz
