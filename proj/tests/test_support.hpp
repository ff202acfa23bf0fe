#pragma once
// Shared test plumbing: doctest entry point, the statistical oracles, and a
// self-cleaning temp directory.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <string>

#include "stat_oracles.hpp"

namespace testkit {

// Unique directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path();
    for (std::uint64_t salt = 0;; ++salt) {
      fs::path candidate =
          base / ("mbmard_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(salt));
      std::error_code ec;
      if (fs::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testkit
