#include "styleproto/manifest.hpp"

#include <stdexcept>

#include "json.hpp"
#include "styleproto/common.hpp"

namespace styleproto {

using nlohmann::json;

std::string bytes_digest(std::string_view bytes) {
  return std::string("fnv1a:") + to_hex(fnv1a(bytes));
}

std::string file_digest(const std::string& path) {
  return bytes_digest(read_file(path));
}

void RunManifest::add_input(const std::string& path) {
  inputs.emplace_back(path, file_digest(path));
}

std::string RunManifest::to_json() const {
  json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["subcommand"] = subcommand;
  j["seed"] = seed;
  json cfg;
  try {
    cfg = json::parse(config_json);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("manifest: bad config json: ") + e.what());
  }
  j["config"] = cfg;
  json in = json::object();
  for (const auto& [path, digest] : inputs) in[path] = digest;
  j["inputs"] = in;
  j["outputs"] = outputs;
  return j.dump(2) + "\n";
}

void RunManifest::write(const std::string& path) const {
  write_file(path, to_json());
}

}  // namespace styleproto
