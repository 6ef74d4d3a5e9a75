#include "voxharm/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "voxharm/error.hpp"
#include "voxharm/parallel.hpp"
#include "voxharm/stats.hpp"

namespace voxharm {

Histogram::Histogram(std::vector<double> edges)
    : Histogram(edges, std::vector<std::uint64_t>(edges.empty() ? 0 : edges.size() - 1, 0)) {}

Histogram::Histogram(std::vector<double> edges, std::vector<std::uint64_t> counts,
                     std::uint64_t underflow, std::uint64_t overflow)
    : edges_(std::move(edges)),
      counts_(std::move(counts)),
      underflow_(underflow),
      overflow_(overflow) {
  if (edges_.size() < 2)
    throw Error(ErrorKind::invalid_argument, "histogram needs at least two edges");
  if (counts_.size() + 1 != edges_.size())
    throw Error(ErrorKind::invalid_argument,
                fmt::format("histogram has {} edges but {} counts", edges_.size(), counts_.size()));
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    if (!std::isfinite(edges_[i]))
      throw Error(ErrorKind::invalid_argument, "histogram edges must be finite");
    if (i > 0 && !(edges_[i] > edges_[i - 1]))
      throw Error(ErrorKind::invalid_argument, "histogram edges must be strictly increasing");
  }
  total_ = std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});

  const double step = (edges_.back() - edges_.front()) / static_cast<double>(counts_.size());
  uniform_ = true;
  for (std::size_t i = 0; i < edges_.size() && uniform_; ++i) {
    const double expect = edges_.front() + step * static_cast<double>(i);
    uniform_ = std::abs(edges_[i] - expect) <= 1e-9 * std::max(1.0, std::abs(expect));
  }
  inv_width_ = 1.0 / step;
}

Histogram Histogram::uniform(double lo, double hi, std::size_t bins) {
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi))
    throw Error(ErrorKind::invalid_argument, fmt::format("histogram range [{}, {}] is empty", lo, hi));
  if (bins == 0) throw Error(ErrorKind::invalid_argument, "histogram needs at least one bin");
  std::vector<double> edges(bins + 1);
  const double step = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) edges[i] = lo + step * static_cast<double>(i);
  edges.back() = hi;
  return Histogram(std::move(edges));
}

std::ptrdiff_t Histogram::locate(double v) const noexcept {
  const auto n = static_cast<std::ptrdiff_t>(counts_.size());
  if (v < edges_.front()) return -1;
  if (v > edges_.back()) return n;
  if (v == edges_.back()) return n - 1;
  std::ptrdiff_t i;
  if (uniform_) {
    i = static_cast<std::ptrdiff_t>((v - edges_.front()) * inv_width_);
    i = std::clamp<std::ptrdiff_t>(i, 0, n - 1);
    // The guess can be off by one next to an edge; settle on the edge array.
    while (i > 0 && v < edges_[static_cast<std::size_t>(i)]) --i;
    while (i < n - 1 && v >= edges_[static_cast<std::size_t>(i) + 1]) ++i;
  } else {
    i = std::upper_bound(edges_.begin(), edges_.end(), v) - edges_.begin() - 1;
  }
  return i;
}

void Histogram::add(double v) noexcept {
  const auto i = locate(v);
  if (i < 0)
    ++underflow_;
  else if (i >= static_cast<std::ptrdiff_t>(counts_.size()))
    ++overflow_;
  else {
    ++counts_[static_cast<std::size_t>(i)];
    ++total_;
  }
}

void Histogram::add(std::span<const double> values) noexcept {
  for (double v : values) add(v);
}

void Histogram::merge(const Histogram& other) {
  if (other.edges_ != edges_)
    throw Error(ErrorKind::invalid_argument, "cannot merge histograms with different edges");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  underflow_ += other.underflow_;
  overflow_ += other.overflow_;
  total_ += other.total_;
}

std::vector<double> Histogram::density() const {
  std::vector<double> d(counts_.size(), 0.0);
  const auto all = static_cast<double>(grand_total());
  if (all == 0.0) return d;
  for (std::size_t i = 0; i < counts_.size(); ++i)
    d[i] = static_cast<double>(counts_[i]) / (all * width(i));
  return d;
}

Histogram build_histogram(std::span<const Volume* const> volumes, double lo, double hi,
                          std::size_t bins) {
  if (volumes.empty()) throw Error(ErrorKind::empty_input, "build_histogram: no volumes");
  const Histogram empty = Histogram::uniform(lo, hi, bins);
  std::vector<Histogram> parts(volumes.size(), empty);
  parallel_for(volumes.size(), [&](std::size_t v) { parts[v].add(volumes[v]->data()); });
  Histogram out = empty;
  for (const auto& p : parts) out.merge(p);
  return out;
}

Histogram build_histogram(std::span<const Volume> volumes, double lo, double hi, std::size_t bins) {
  const auto ptrs = pointers_to(volumes);
  return build_histogram(std::span<const Volume* const>(ptrs), lo, hi, bins);
}

}  // namespace voxharm
