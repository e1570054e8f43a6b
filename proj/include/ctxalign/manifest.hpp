#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ctxalign {

struct FileDigest {
  std::string path;
  std::string sha256;
};

// Record written beside the outputs of every CLI run.
struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;  // arguments after the program name
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  int threads = 1;
  std::string version;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  // Argument values naming output files or directories; replay redirects them.
  std::vector<std::string> output_locations;
  std::optional<std::string> stdout_sha256;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string& path);

void save_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_manifest(const std::string& path);

}  // namespace ctxalign
