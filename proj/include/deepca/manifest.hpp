#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace deepca {

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

// Output directory of one command run. Tracks every artifact written so
// the closing manifest lists each with a content checksum.
class RunDir {
 public:
  explicit RunDir(std::filesystem::path root);

  const std::filesystem::path& path() const { return root_; }

  // Registers an artifact (created by the caller) and returns its path.
  std::filesystem::path file(const std::string& name);
  void write_text(const std::string& name, const std::string& content);

  // manifest.json: [{"path","bytes","fnv1a64"}...], sorted by path.
  void write_manifest() const;

 private:
  std::filesystem::path root_;
  std::vector<std::string> artifacts_;
};

}  // namespace deepca
