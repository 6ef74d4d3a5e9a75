#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace voxharm {

using Index3 = std::array<std::size_t, 3>;
using Vec3 = std::array<double, 3>;

/// Axis-aligned voxel grid. Linear index order is x fastest, z slowest.
struct Geometry {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};  // mm per voxel
  Vec3 origin{0.0, 0.0, 0.0};   // world position of voxel (0,0,0) centre, mm

  std::size_t voxel_count() const noexcept { return dims[0] * dims[1] * dims[2]; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + dims[0] * (y + dims[1] * z);
  }

  Vec3 world(double x, double y, double z) const noexcept {
    return {origin[0] + x * spacing[0], origin[1] + y * spacing[1], origin[2] + z * spacing[2]};
  }

  bool operator==(const Geometry&) const = default;
};

/// Throws Error(invalid_argument) unless dims are positive, the voxel count
/// does not overflow, and every spacing component is finite and positive.
void validate(const Geometry& geometry);

/// Opaque orientation bytes (qform/sform block) carried from a file header so
/// a rewrite preserves them. Never interpreted.
using OrientationBlob = std::vector<std::uint8_t>;

/// Scalar intensity volume (HU). Immutable after construction.
class Volume {
 public:
  Volume(Geometry geometry, std::vector<double> data, OrientationBlob orientation = {});

  const Geometry& geometry() const noexcept { return geometry_; }
  std::span<const double> data() const noexcept { return data_; }
  const OrientationBlob& orientation() const noexcept { return orientation_; }

  std::size_t size() const noexcept { return data_.size(); }
  double at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return data_[geometry_.index(x, y, z)];
  }

  /// Same geometry and orientation, new voxel values.
  Volume with_data(std::vector<double> data) const;

 private:
  Geometry geometry_;
  std::vector<double> data_;
  OrientationBlob orientation_;
};

using Label = std::uint16_t;

/// Label ID -> class name. Background (0) is implicit and never listed.
using Vocabulary = std::map<Label, std::string>;

class LabelMap {
 public:
  /// Every non-zero value in data must be a key of vocabulary.
  LabelMap(Geometry geometry, std::vector<Label> data, Vocabulary vocabulary,
           OrientationBlob orientation = {});

  const Geometry& geometry() const noexcept { return geometry_; }
  std::span<const Label> data() const noexcept { return data_; }
  const Vocabulary& vocabulary() const noexcept { return vocabulary_; }
  const OrientationBlob& orientation() const noexcept { return orientation_; }

  std::size_t size() const noexcept { return data_.size(); }
  Label at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return data_[geometry_.index(x, y, z)];
  }

  /// Voxel count per label value present in the map (including 0).
  std::map<Label, std::size_t> histogram() const;

  bool knows(Label label) const noexcept { return label == 0 || vocabulary_.contains(label); }

 private:
  Geometry geometry_;
  std::vector<Label> data_;
  Vocabulary vocabulary_;
  OrientationBlob orientation_;
};

struct BinaryMask {
  Geometry geometry;
  std::vector<std::uint8_t> data;  // 0 or 1

  std::size_t count() const noexcept;
};

/// Named union of label IDs, e.g. "masses" = {tumor, cyst}.
struct RegionSpec {
  std::string name;
  std::set<Label> labels;
  /// Accept label IDs the map's vocabulary does not list.
  bool allow_absent = false;
};

/// Mask voxel is 1 iff its label belongs to region.labels. Throws if a
/// region label is unknown to the vocabulary and the region does not allow it.
BinaryMask extract_region_mask(const LabelMap& labels, const RegionSpec& region);

}  // namespace voxharm
