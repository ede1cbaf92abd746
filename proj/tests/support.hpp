#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>

#include <unistd.h>

#include "autosep/backend.hpp"
#include "autosep/hashing.hpp"
#include "autosep/mock_backend.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("autosep_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

/// Mock world, images on disk, and a client with an in-memory ledger and
/// cache. Sleeps between retries are skipped.
struct MockRig {
  TempDir dir;
  autosep::MockWorld world;
  autosep::MockBackend backend;
  autosep::QueryLedger ledger;
  autosep::DescriptionCache cache;
  autosep::Client client;
  autosep::Dataset X;

  MockRig(int dims, int classes, double noise, std::uint64_t seed, int per_class)
      : world(autosep::MockWorld::standard(dims, classes, noise, seed)),
        backend(world),
        client(backend, ledger, cache) {
    client.set_sleeper([](std::chrono::milliseconds) {});
    X = autosep::generate_mock_dataset(world, dir.path(), "x", per_class, autosep::derive_seed(seed, "images"));
  }
};

}  // namespace testing
