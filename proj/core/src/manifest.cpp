#include "vqfuzz/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vqfuzz/error.hpp"
#include "vqfuzz/version.hpp"

namespace vqfuzz {

namespace fs = std::filesystem;

std::string to_json(const RunManifest& m) {
  nlohmann::json doc;
  doc["command"] = m.command;
  doc["config"] = m.config;
  doc["config_hash"] = m.config_hash;
  doc["seed"] = m.seed;
  doc["dataset_checksum"] = m.dataset_checksum;
  doc["model_checksums"] = m.model_checksums;
  doc["trained_lambda"] = m.trained_lambda ? nlohmann::json(*m.trained_lambda) : nlohmann::json();
  doc["properties"] = m.properties;
  doc["tool_version"] = m.tool_version;
  doc["timestamp"] = m.timestamp;
  return doc.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    RunManifest m;
    m.command = doc.at("command").get<std::string>();
    m.config = doc.at("config").get<std::string>();
    m.config_hash = doc.at("config_hash").get<std::string>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.dataset_checksum = doc.at("dataset_checksum").get<std::string>();
    m.model_checksums = doc.at("model_checksums").get<std::map<std::string, std::string>>();
    if (doc.contains("trained_lambda") && !doc["trained_lambda"].is_null())
      m.trained_lambda = doc["trained_lambda"].get<double>();
    m.properties = doc.at("properties").get<std::map<std::string, std::string>>();
    m.tool_version = doc.at("tool_version").get<std::string>();
    m.timestamp = doc.at("timestamp").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptData, std::string("malformed manifest: ") + e.what());
  }
}

void write_manifest(const fs::path& dir, const RunManifest& manifest) {
  fs::create_directories(dir);
  std::ofstream out(dir / kManifestFile, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Internal, "cannot write " + (dir / kManifestFile).string());
  out << to_json(manifest);
}

RunManifest read_manifest(const fs::path& dir) {
  const auto path = dir / kManifestFile;
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingArtifact, "missing manifest " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return manifest_from_json(text.str());
  } catch (const Error& e) {
    fail(ErrorKind::CorruptData, path.string() + ": " + e.what());
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const char* tool_version() noexcept { return VQFUZZ_VERSION; }

}  // namespace vqfuzz
