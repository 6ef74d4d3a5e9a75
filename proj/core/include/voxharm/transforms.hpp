#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "voxharm/histogram.hpp"
#include "voxharm/intensity_map.hpp"
#include "voxharm/stats.hpp"
#include "voxharm/volume.hpp"

namespace voxharm {

// ---------------------------------------------------------------------------
// Harmonisation fits
// ---------------------------------------------------------------------------

/// Affine map x -> (x - mu_src) / sd_src * sd_tgt + mu_tgt. Extends linearly
/// beyond its breakpoints so the moments of the mapped data are exact.
IntensityMap fit_moment_shift(const DatasetStats& source, const DatasetStats& target);

/// Quantile mapping x -> Q_ref(F_src(x)) built from two histograms. Both CDFs
/// are piecewise linear across bin edges. Where the reference CDF is flat the
/// quantile takes the left edge of the flat run, except at the lower end of an
/// occupied source run, where the right edge is used so samples inside the
/// run are not dragged across an empty reference gap.
///
/// A reference with a single occupied bin maps everything to that bin's
/// centre (logged as a warning).
IntensityMap fit_histogram_match(const Histogram& source, const Histogram& reference);

enum class MatchMode {
  per_volume,  // one source CDF (and map) per source volume
  pooled,      // one source CDF over all source volumes
};

struct HistogramMatchOptions {
  std::size_t bins = 4096;
  MatchMode mode = MatchMode::per_volume;
  /// Fraction of reference voxels used for the reference CDF; 1 uses all.
  double reference_fraction = 1.0;
  std::uint64_t seed = 0;
};

/// Fits the dataset-level histogram match: a pooled reference histogram over
/// the reference set's [min, max] and per-volume (or pooled) source
/// histograms over their own [min, max]. Returns one map per source volume;
/// in pooled mode all entries are the same map.
std::vector<IntensityMap> fit_histogram_match(std::span<const Volume* const> source,
                                              std::span<const Volume* const> reference,
                                              const HistogramMatchOptions& options = {});

/// Voxelwise application; geometry unchanged.
Volume apply_map(const Volume& volume, const IntensityMap& map);

// ---------------------------------------------------------------------------
// Shared preprocessing chain
// ---------------------------------------------------------------------------

enum class ClipMode {
  pooled,      // one pair of thresholds over the whole dataset
  per_volume,  // thresholds from each volume's own voxels
};

struct ClipResult {
  std::vector<Volume> volumes;
  /// (t_lo, t_hi). One entry in pooled mode, one per volume otherwise.
  std::vector<std::pair<double, double>> thresholds;
};

/// Clips every voxel to [P_lo, P_hi] of the (optionally selected) voxels.
/// Percentiles use the inclusive linear-interpolation convention.
ClipResult clip_percentiles(std::span<const Volume* const> volumes, double lo_pct = 0.5,
                            double hi_pct = 99.5, ClipMode mode = ClipMode::pooled,
                            const std::optional<VoxelSelection>& selection = std::nullopt);
ClipResult clip_percentiles(std::span<const Volume> volumes, double lo_pct = 0.5,
                            double hi_pct = 99.5, ClipMode mode = ClipMode::pooled,
                            const std::optional<VoxelSelection>& selection = std::nullopt);

/// x -> (x - stats.mean) / stats.std on every volume.
std::vector<Volume> znormalize(std::span<const Volume* const> volumes, const DatasetStats& stats);
std::vector<Volume> znormalize(std::span<const Volume> volumes, const DatasetStats& stats);

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// Source label -> destination label. Unlisted labels map to themselves.
struct LabelRemap {
  std::map<Label, Label> mapping;
  std::string description;

  Label operator()(Label source) const noexcept {
    const auto it = mapping.find(source);
    return it == mapping.end() ? source : it->second;
  }

  /// {"description": "...", "mapping": {"3": 0, "4": 0}}
  static LabelRemap from_json(std::string_view text);
  std::string to_json() const;
};

/// Voxelwise relabelling into target_vocabulary. In strict mode every label
/// of the source vocabulary must be listed explicitly in remap.mapping.
LabelMap remap_labels(const LabelMap& labels, const LabelRemap& remap,
                      const Vocabulary& target_vocabulary, bool strict = false);

}  // namespace voxharm
