#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "metacon/meta.hpp"
#include "metacon/numerics.hpp"

namespace metacon::testutil {

inline Matrix random_matrix(RngStream& rng, std::size_t rows, std::size_t cols, double stddev = 1.0) {
  return Matrix(rows, cols, draw_gaussian(rng, rows * cols, 0.0, stddev));
}

inline std::vector<LabeledFeature> random_features(RngStream& rng, std::size_t n_way, std::size_t per_class,
                                                   std::size_t nf) {
  std::vector<LabeledFeature> out;
  for (std::size_t c = 0; c < n_way; ++c)
    for (std::size_t i = 0; i < per_class; ++i) out.push_back({draw_gaussian(rng, nf, 0.0, 1.0), c});
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double rel_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-8);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("metacon_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace metacon::testutil
