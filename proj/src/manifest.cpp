#include "deepca/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "deepca/errors.hpp"

namespace deepca {

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("fnv1a64_file: cannot open " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001b3ULL;
    }
  }
  return hash;
}

RunDir::RunDir(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

std::filesystem::path RunDir::file(const std::string& name) {
  if (std::find(artifacts_.begin(), artifacts_.end(), name) == artifacts_.end()) {
    artifacts_.push_back(name);
  }
  return root_ / name;
}

void RunDir::write_text(const std::string& name, const std::string& content) {
  const auto path = file(name);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("RunDir: cannot open " + path.string() + " for writing");
  out << content;
}

void RunDir::write_manifest() const {
  std::vector<std::string> sorted = artifacts_;
  std::sort(sorted.begin(), sorted.end());
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& name : sorted) {
    const auto p = root_ / name;
    std::ostringstream hex;
    hex << std::hex << fnv1a64_file(p);
    entries.push_back({{"path", name},
                       {"bytes", std::filesystem::file_size(p)},
                       {"fnv1a64", hex.str()}});
  }
  std::ofstream out(root_ / "manifest.json", std::ios::binary);
  out << entries.dump(2) << '\n';
}

}  // namespace deepca
