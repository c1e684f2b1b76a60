#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace styleproto {

inline constexpr const char* kToolName = "styleproto";
inline constexpr const char* kToolVersion = "0.1.0";

// Every subcommand run records what produced its artifacts: the resolved
// configuration, content digests of the inputs, and the output paths.
// Deliberately no timestamps or host details — identical runs must produce
// identical manifests.
struct RunManifest {
  std::string subcommand;
  uint64_t seed = 0;
  std::string config_json = "{}";  // resolved settings, one JSON object
  std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
  std::vector<std::string> outputs;

  void add_input(const std::string& path);  // digests the file's bytes
  void add_output(const std::string& path) { outputs.push_back(path); }

  std::string to_json() const;
  // conventional location: <artifact>.manifest.json next to the primary
  // artifact, or manifest.json inside an output directory
  void write(const std::string& path) const;
};

// "fnv1a:<16 hex digits>" over the file's bytes
std::string file_digest(const std::string& path);
std::string bytes_digest(std::string_view bytes);

}  // namespace styleproto
