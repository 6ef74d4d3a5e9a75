#pragma once

#include "voxharm/volume.hpp"

namespace voxharm {

/// Interpolation orders: 0 nearest, 1 linear, 3 cubic B-spline.
struct ResampleSpec {
  Vec3 target_spacing{0.7636, 0.7636, 0.7636};
  int intensity_order = 3;
  int label_order = 0;
};

void validate(const ResampleSpec& spec);

/// Output dims per axis: round-half-away(dim * spacing / target), at least 1.
Index3 resampled_dims(const Geometry& geometry, const Vec3& target_spacing);

/// Resamples onto spec.target_spacing with spec.intensity_order. Voxel
/// (0,0,0) keeps its world position. Cubic interpolation uses B-spline
/// coefficients from the recursive prefilter, so the interpolant passes
/// through the input samples. Axes shorter than 4 voxels fall back to linear.
Volume resample_volume(const Volume& volume, const ResampleSpec& spec);

/// Same grid as resample_volume, nearest-neighbour (ties go to the lower
/// index). Output vocabulary equals the input vocabulary.
LabelMap resample_labels(const LabelMap& labels, const ResampleSpec& spec);

/// Samples volume on the output grid with an explicit order (0, 1 or 3).
Volume resample_volume(const Volume& volume, const Vec3& target_spacing, int order);

}  // namespace voxharm
