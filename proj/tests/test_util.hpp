#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "polymine/embedding.hpp"
#include "polymine/rng.hpp"

namespace testutil {

// Scratch directory wiped on destruction; unique per instance.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("polymine-" + tag + "-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static std::size_t& counter() {
    static std::size_t c = 0;
    return c;
  }
};

// Random unit-norm rows (normalized in double, stored f32).
inline polymine::EmbeddingMatrix random_unit_rows(std::size_t count, std::uint32_t dim,
                                                  std::uint64_t seed) {
  polymine::Rng rng(seed);
  polymine::EmbeddingMatrix m;
  m.dim = dim;
  m.count = count;
  m.data.resize(count * dim);
  for (std::size_t r = 0; r < count; ++r) {
    std::vector<double> v(dim);
    double ss = 0.0;
    for (std::uint32_t c = 0; c < dim; ++c) {
      v[c] = rng.gaussian();
      ss += v[c] * v[c];
    }
    double norm = std::sqrt(ss);
    for (std::uint32_t c = 0; c < dim; ++c)
      m.data[r * dim + c] = static_cast<float>(v[c] / norm);
  }
  m.normalized = false;  // f32 rounding means norms are only approximately 1
  return m;
}

inline std::vector<double> random_unit_vec(std::uint32_t dim, polymine::Rng& rng) {
  std::vector<double> v(dim);
  double ss = 0.0;
  for (auto& x : v) {
    x = rng.gaussian();
    ss += x * x;
  }
  double n = std::sqrt(ss);
  for (auto& x : v) x /= n;
  return v;
}

}  // namespace testutil
