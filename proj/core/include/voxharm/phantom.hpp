#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "voxharm/volume.hpp"

namespace voxharm {

struct GaussianComponent {
  double mean = 0.0;  // HU
  double std = 1.0;
  double weight = 1.0;
};

using Range = std::array<double, 2>;

/// Random ellipsoids carrying one label. Centres and radii are in voxels and
/// drawn uniformly from their ranges. Voxels inside get the label and have
/// intensity_offset added to their background sample.
struct EllipsoidClass {
  std::string name;
  Label label = 1;
  int priority = 0;  // higher wins where ellipsoids overlap
  std::size_t count = 1;
  std::array<Range, 3> center;
  std::array<Range, 3> radius;
  double intensity_offset = 0.0;
};

struct PhantomSpec {
  std::string prefix = "case";
  std::size_t count = 1;
  Index3 dims{32, 32, 32};
  Vec3 spacing{1.0, 1.0, 1.0};
  std::vector<GaussianComponent> background{{0.0, 1.0, 1.0}};
  std::vector<EllipsoidClass> classes;
  std::uint64_t seed = 0;

  Vocabulary vocabulary() const;
};

/// Throws unless weights are positive and sum to 1 (to 1e-9), stds and radii
/// are positive, ranges are ordered, and labels are non-zero and unique.
void validate(const PhantomSpec& spec);

struct PhantomCase {
  std::string id;
  Volume volume;
  LabelMap labels;
};

/// Case `index` of the set; depends only on (spec, index).
PhantomCase generate_phantom(const PhantomSpec& spec, std::size_t index);

std::vector<PhantomCase> generate_phantoms(const PhantomSpec& spec);

/// Writes <dir>/volumes/<id>.nii.gz and <dir>/labels/<id>.nii.gz.
void write_phantoms(const PhantomSpec& spec, const std::filesystem::path& dir);

PhantomSpec phantom_from_json(std::string_view text);
std::string to_json(const PhantomSpec& spec);

/// Target-domain preset: air near -1000 HU and soft tissue near 0 HU, with
/// kidney, tumor and cyst ellipsoids.
PhantomSpec default_target_phantom();

/// Source-domain preset: intensities between roughly 800 and 1500 HU with a
/// different (skewed, bimodal) shape; kidney and tumor plus artery/vein labels.
PhantomSpec default_source_phantom();

}  // namespace voxharm
