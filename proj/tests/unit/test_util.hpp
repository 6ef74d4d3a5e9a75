#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "voxharm/volume.hpp"

namespace voxharm::test {

inline Geometry geom(std::size_t nx, std::size_t ny, std::size_t nz, Vec3 spacing = {1.0, 1.0, 1.0},
                     Vec3 origin = {0.0, 0.0, 0.0}) {
  Geometry g;
  g.dims = {nx, ny, nz};
  g.spacing = spacing;
  g.origin = origin;
  return g;
}

template <typename F>
Volume make_volume(const Geometry& g, F&& f) {
  std::vector<double> data(g.voxel_count());
  for (std::size_t z = 0; z < g.dims[2]; ++z)
    for (std::size_t y = 0; y < g.dims[1]; ++y)
      for (std::size_t x = 0; x < g.dims[0]; ++x) data[g.index(x, y, z)] = f(x, y, z);
  return Volume(g, std::move(data));
}

inline Volume random_volume(const Geometry& g, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(mean, sd);
  std::vector<double> data(g.voxel_count());
  for (auto& v : data) v = n(rng);
  return Volume(g, std::move(data));
}

inline LabelMap random_labels(const Geometry& g, std::uint64_t seed, Label max_label,
                              const Vocabulary& vocab) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, max_label);
  std::vector<Label> data(g.voxel_count());
  for (auto& v : data) v = static_cast<Label>(d(rng));
  return LabelMap(g, std::move(data), vocab);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("voxharm_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

}  // namespace voxharm::test
