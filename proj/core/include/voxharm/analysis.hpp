#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "voxharm/histogram.hpp"

namespace voxharm {

struct CdfDistance {
  double ks = 0.0;   // sup |F_a - F_b|
  double emd = 0.0;  // integral of |F_a - F_b| (1-Wasserstein), HU
};

/// Distances between the piecewise-linear CDFs of two histograms, evaluated
/// exactly on the union of their edge sets. Only in-range counts contribute.
CdfDistance cdf_distance(const Histogram& a, const Histogram& b);

/// Series name -> histogram; std::map keeps emission ordered by name.
using HistogramSet = std::map<std::string, Histogram>;

/// CSV with header "series,bin_left,bin_right,count,density", one row per
/// bin, ordered by series name then bin index. LF line endings.
std::string format_plot_csv(const HistogramSet& histograms);

/// JSON mirror: {series: {edges: [...], counts: [...], underflow, overflow}}.
std::string format_plot_json(const HistogramSet& histograms);

/// Writes the CSV to path, plus a .json mirror next to it when requested.
void emit_plot_data(const HistogramSet& histograms, const std::filesystem::path& path,
                    bool json_mirror = false);

/// Reads an emitted CSV back into histograms (under/overflow are not stored
/// in the CSV and come back as zero).
HistogramSet parse_plot_csv(std::string_view csv);

}  // namespace voxharm
