#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "viqa/image.hpp"
#include "viqa/random.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("viqa_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline viqa::ImageBuffer random_image(int w, int h, int c, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  viqa::Rng rng(seed);
  viqa::ImageBuffer img(w, h, c);
  for (float& v : img.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

}  // namespace testutil
