#include "vmfnet/run_manifest.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "vmfnet/errors.hpp"
#include "vmfnet/png_io.hpp"

namespace vmfnet {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void RunManifest::stamp_start() { started_at = utc_now(); }
void RunManifest::stamp_end() { finished_at = utc_now(); }

void RunManifest::add_input(const std::filesystem::path& p) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", crc32_of(read_file_bytes(p)));
  input_checksums[p.string()] = buf;
}

void RunManifest::write(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["subcommand"] = subcommand;
  j["tool_version"] = tool_version;
  j["seed"] = seed;
  j["config"] = config_json.empty() ? nlohmann::ordered_json::object()
                                    : nlohmann::ordered_json::parse(config_json);
  j["inputs"] = input_checksums;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["outputs"] = outputs;
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot write run manifest: " + tmp.string());
    os << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace vmfnet
