#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "voxharm/volume.hpp"

namespace voxharm {

/// Binned intensity counts. Bins are half-open [e_i, e_{i+1}) except the last,
/// which is closed. Values outside [e_0, e_n] land in underflow/overflow.
class Histogram {
 public:
  Histogram() = default;
  /// Arbitrary strictly increasing edges (n+1 edges, n >= 1).
  explicit Histogram(std::vector<double> edges);
  Histogram(std::vector<double> edges, std::vector<std::uint64_t> counts,
            std::uint64_t underflow = 0, std::uint64_t overflow = 0);

  static Histogram uniform(double lo, double hi, std::size_t bins);

  std::span<const double> edges() const noexcept { return edges_; }
  std::span<const std::uint64_t> counts() const noexcept { return counts_; }
  std::uint64_t underflow() const noexcept { return underflow_; }
  std::uint64_t overflow() const noexcept { return overflow_; }

  std::size_t bins() const noexcept { return counts_.size(); }
  double lo() const noexcept { return edges_.front(); }
  double hi() const noexcept { return edges_.back(); }
  double width(std::size_t bin) const noexcept { return edges_[bin + 1] - edges_[bin]; }

  /// Sum of in-range counts.
  std::uint64_t total() const noexcept { return total_; }
  /// In-range plus under/overflow.
  std::uint64_t grand_total() const noexcept { return total_ + underflow_ + overflow_; }

  /// Bin index of v; -1 for underflow, bins() for overflow.
  std::ptrdiff_t locate(double v) const noexcept;

  void add(double v) noexcept;
  void add(std::span<const double> values) noexcept;

  /// Adds counts of a histogram with identical edges.
  void merge(const Histogram& other);

  /// count / (grand_total * width); integrates to total / grand_total.
  std::vector<double> density() const;

  bool operator==(const Histogram&) const = default;

 private:
  std::vector<double> edges_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t underflow_ = 0;
  std::uint64_t overflow_ = 0;
  std::uint64_t total_ = 0;
  bool uniform_ = false;
  double inv_width_ = 0.0;
};

/// Pooled histogram with `bins` uniform bins over [lo, hi]. Volumes are
/// binned in parallel and merged with integer adds, so the result does not
/// depend on volume order or thread count.
Histogram build_histogram(std::span<const Volume* const> volumes, double lo, double hi,
                          std::size_t bins);
Histogram build_histogram(std::span<const Volume> volumes, double lo, double hi,
                          std::size_t bins);

}  // namespace voxharm
