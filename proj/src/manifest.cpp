#include "evc/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "evc/errors.hpp"

namespace evc {

std::vector<ManifestEntry> Manifest::with_label(const std::string& label) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.label == label) out.push_back(e);
  }
  return out;
}

std::vector<std::string> Manifest::labels() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    bool seen = false;
    for (const auto& l : out) seen = seen || l == e.label;
    if (!seen) out.push_back(e.label);
  }
  return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open " + path.string());
  Manifest m;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  auto base = path.parent_path();
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    ManifestEntry e;
    std::string p;
    if (!std::getline(row, e.id, '\t') || !std::getline(row, e.label, '\t') ||
        !std::getline(row, p, '\t')) {
      throw IoError("manifest: malformed line " + std::to_string(line_no) + " in " +
                    path.string());
    }
    std::filesystem::path pp(p);
    e.audio_path = pp.is_absolute() ? pp : base / pp;
    if (!ids.insert(e.id).second) {
      throw InputError("manifest: duplicate utterance id '" + e.id + "'");
    }
    if (!std::filesystem::exists(e.audio_path)) {
      throw InputError("manifest: missing audio file " + e.audio_path.string());
    }
    m.entries.push_back(std::move(e));
  }
  if (m.labels().size() != 2) {
    throw InputError("manifest: expected exactly two emotion labels, found " +
                     std::to_string(m.labels().size()));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream os(path);
  if (!os) throw IoError("manifest: cannot open " + path.string() + " for writing");
  for (const auto& e : manifest.entries) {
    os << e.id << "\t" << e.label << "\t" << e.audio_path.filename().string() << "\n";
  }
  if (!os) throw IoError("manifest: write failure for " + path.string());
}

}  // namespace evc
