#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace evc {

struct ManifestEntry {
  std::string id;
  std::string label;
  std::filesystem::path audio_path;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> with_label(const std::string& label) const;
  std::vector<std::string> labels() const;  // distinct, in first-seen order
};

// Tab-separated: id, emotion label, audio path (relative paths resolve against
// the manifest's directory). Ids must be unique and paths must exist.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace evc
