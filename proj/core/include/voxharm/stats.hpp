#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "voxharm/volume.hpp"

namespace voxharm {

/// Pooled moments and order statistics of a set of volumes.
struct DatasetStats {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population definition (divide by n)
  double min = 0.0;
  double max = 0.0;
  std::map<double, double> percentiles;  // rank in [0,100] -> value

  bool operator==(const DatasetStats&) const = default;
};

/// Restricts statistics to foreground voxels. masks[i] pairs with volume i.
struct VoxelSelection {
  std::span<const LabelMap> masks;
  std::set<Label> foreground;  // empty: any non-zero label
};

/// Pooled statistics over every voxel (or every selected voxel) of the set.
/// Moments use a compensated two-pass reduction evaluated in volume order, so
/// the result is independent of the thread count. Percentiles use linear
/// interpolation between order statistics at rank p/100*(n-1).
DatasetStats compute_stats(std::span<const Volume* const> volumes,
                           std::span<const double> percentiles = {},
                           const std::optional<VoxelSelection>& selection = std::nullopt);

DatasetStats compute_stats(std::span<const Volume> volumes,
                           std::span<const double> percentiles = {},
                           const std::optional<VoxelSelection>& selection = std::nullopt);

/// Percentile of an ascending sequence, inclusive linear interpolation.
double percentile_sorted(std::span<const double> sorted, double pct);

/// Percentiles of an arbitrary sequence using selection instead of a full
/// sort. Values are taken by copy.
std::vector<double> percentiles_of(std::vector<double> values, std::span<const double> pcts);

std::vector<const Volume*> pointers_to(std::span<const Volume> volumes);

}  // namespace voxharm
