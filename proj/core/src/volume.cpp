#include "voxharm/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "voxharm/error.hpp"

namespace voxharm {

void validate(const Geometry& geometry) {
  std::size_t count = 1;
  for (int a = 0; a < 3; ++a) {
    if (geometry.dims[a] == 0)
      throw Error(ErrorKind::invalid_argument, fmt::format("dimension {} is zero", a));
    if (count > std::numeric_limits<std::size_t>::max() / geometry.dims[a])
      throw Error(ErrorKind::out_of_range, "voxel count overflows");
    count *= geometry.dims[a];
    if (!(std::isfinite(geometry.spacing[a]) && geometry.spacing[a] > 0.0))
      throw Error(ErrorKind::invalid_argument,
                  fmt::format("spacing[{}] = {} is not positive", a, geometry.spacing[a]));
    if (!std::isfinite(geometry.origin[a]))
      throw Error(ErrorKind::invalid_argument, "origin is not finite");
  }
}

Volume::Volume(Geometry geometry, std::vector<double> data, OrientationBlob orientation)
    : geometry_(geometry), data_(std::move(data)), orientation_(std::move(orientation)) {
  validate(geometry_);
  if (data_.size() != geometry_.voxel_count())
    throw Error(ErrorKind::invalid_argument,
                fmt::format("volume data has {} values, geometry needs {}", data_.size(),
                            geometry_.voxel_count()));
  if (!std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); }))
    throw Error(ErrorKind::numeric, "volume contains non-finite values");
}

Volume Volume::with_data(std::vector<double> data) const {
  return Volume(geometry_, std::move(data), orientation_);
}

LabelMap::LabelMap(Geometry geometry, std::vector<Label> data, Vocabulary vocabulary,
                   OrientationBlob orientation)
    : geometry_(geometry),
      data_(std::move(data)),
      vocabulary_(std::move(vocabulary)),
      orientation_(std::move(orientation)) {
  validate(geometry_);
  if (data_.size() != geometry_.voxel_count())
    throw Error(ErrorKind::invalid_argument,
                fmt::format("label data has {} values, geometry needs {}", data_.size(),
                            geometry_.voxel_count()));
  vocabulary_.erase(0);
  std::vector<bool> seen(std::numeric_limits<Label>::max() + 1, false);
  for (Label v : data_) seen[v] = true;
  for (std::size_t v = 1; v < seen.size(); ++v)
    if (seen[v] && !vocabulary_.contains(static_cast<Label>(v)))
      throw Error(ErrorKind::invalid_argument,
                  fmt::format("label {} is not in the vocabulary", v));
}

std::map<Label, std::size_t> LabelMap::histogram() const {
  std::vector<std::size_t> counts(std::numeric_limits<Label>::max() + 1, 0);
  for (Label v : data_) ++counts[v];
  std::map<Label, std::size_t> out;
  for (std::size_t v = 0; v < counts.size(); ++v)
    if (counts[v] != 0) out.emplace(static_cast<Label>(v), counts[v]);
  return out;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

BinaryMask extract_region_mask(const LabelMap& labels, const RegionSpec& region) {
  if (!region.allow_absent) {
    for (Label l : region.labels)
      if (!labels.knows(l))
        throw Error(ErrorKind::invalid_argument,
                    fmt::format("region '{}' uses label {} missing from the vocabulary",
                                region.name, l));
  }
  std::vector<bool> member(std::numeric_limits<Label>::max() + 1, false);
  for (Label l : region.labels) member[l] = true;

  BinaryMask mask{labels.geometry(), std::vector<std::uint8_t>(labels.size(), 0)};
  const auto src = labels.data();
  for (std::size_t i = 0; i < src.size(); ++i) mask.data[i] = member[src[i]] ? 1 : 0;
  return mask;
}

}  // namespace voxharm
