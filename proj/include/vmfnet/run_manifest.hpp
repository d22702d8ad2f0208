#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vmfnet {

inline constexpr const char* kToolVersion = "0.1.0";

// Reproducibility record written atomically at the end of every CLI run.
struct RunManifest {
  std::string subcommand;
  std::string config_json;  // full resolved configuration
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::map<std::string, std::string> input_checksums;  // path -> crc32 hex
  std::string started_at, finished_at;                 // ISO-8601 UTC
  std::vector<std::string> outputs;

  void stamp_start();
  void stamp_end();
  void add_input(const std::filesystem::path& p);
  void write(const std::filesystem::path& path) const;
};

}  // namespace vmfnet
