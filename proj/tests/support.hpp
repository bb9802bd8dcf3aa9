#pragma once

// Helpers shared by the unit tests.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "fusionshot/logitstore.hpp"

namespace fstest {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("fusionshot_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

/// Logit matrix whose argmax on every row is preds[e].
inline fusionshot::LogitMatrix matrix_from_predictions(const std::vector<int>& preds, const std::vector<int>& y,
                                                       int K) {
  fusionshot::LogitMatrix m;
  m.K = K;
  for (std::size_t e = 0; e < preds.size(); ++e) {
    std::vector<double> z(static_cast<std::size_t>(K), 0.0);
    z[static_cast<std::size_t>(preds[e])] = 2.0;
    m.records.push_back({e, y[e], z});
  }
  return m;
}

/// Pool with one split built from per-model prediction vectors.
inline fusionshot::Pool pool_from_predictions(const std::vector<std::vector<int>>& preds, const std::vector<int>& y,
                                              int K, const std::string& split = "val") {
  fusionshot::PoolManifest manifest;
  manifest.pool_name = "handmade";
  manifest.K = K;
  std::vector<fusionshot::LogitMatrix> mats;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    manifest.models.push_back({"m" + std::to_string(i), "", "", {}});
    mats.push_back(matrix_from_predictions(preds[i], y, K));
  }
  return fusionshot::Pool::assemble(manifest, {{split, mats}});
}

}  // namespace fstest
