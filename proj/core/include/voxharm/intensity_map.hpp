#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace voxharm {

/// What happens outside [breakpoints.front(), breakpoints.back()].
enum class Extrapolation {
  clamp,   // hold the end outputs
  linear,  // extend the first/last segment
};

/// Monotone piecewise-linear value map.
///
/// Between breakpoints b[i] <= x < b[i+1] the value is
///   o[i] + (x - b[i]) * (o[i+1] - o[i]) / (b[i+1] - b[i])
/// evaluated in exactly that order. A single-breakpoint clamp map is constant.
class IntensityMap {
 public:
  IntensityMap(std::vector<double> breakpoints, std::vector<double> outputs,
               Extrapolation policy = Extrapolation::clamp);

  static IntensityMap identity();
  /// x -> scale * x + offset as a two-breakpoint linear map.
  static IntensityMap affine(double scale, double offset);

  double operator()(double x) const noexcept;

  std::span<const double> breakpoints() const noexcept { return breakpoints_; }
  std::span<const double> outputs() const noexcept { return outputs_; }
  Extrapolation policy() const noexcept { return policy_; }

  /// {"breakpoints": [...], "outputs": [...], "policy": "clamp"|"linear"}
  std::string to_json() const;
  static IntensityMap from_json(std::string_view text);

  void save(const std::filesystem::path& path) const;
  static IntensityMap load(const std::filesystem::path& path);

  bool operator==(const IntensityMap&) const = default;

 private:
  std::vector<double> breakpoints_;
  std::vector<double> outputs_;
  Extrapolation policy_;
};

}  // namespace voxharm
