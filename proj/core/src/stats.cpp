#include "voxharm/stats.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "voxharm/error.hpp"
#include "voxharm/parallel.hpp"

namespace voxharm {
namespace {

// Neumaier compensated accumulator.
struct KahanSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double v) noexcept {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      comp += (sum - t) + v;
    else
      comp += (v - t) + sum;
    sum = t;
  }
  double value() const noexcept { return sum + comp; }
};

struct Partial {
  std::size_t count = 0;
  KahanSum sum;
  double min = 0.0;
  double max = 0.0;
};

std::vector<std::uint8_t> selection_mask(const LabelMap& labels, const std::set<Label>& fg) {
  std::vector<std::uint8_t> keep(labels.size());
  const auto src = labels.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    keep[i] = fg.empty() ? (src[i] != 0) : fg.contains(src[i]);
  return keep;
}

}  // namespace

double percentile_sorted(std::span<const double> sorted, double pct) {
  if (sorted.empty()) throw Error(ErrorKind::empty_input, "percentile of an empty sequence");
  if (!(pct >= 0.0 && pct <= 100.0))
    throw Error(ErrorKind::invalid_argument, fmt::format("percentile {} outside [0,100]", pct));
  const double rank = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> percentiles_of(std::vector<double> values, std::span<const double> pcts) {
  if (values.empty()) throw Error(ErrorKind::empty_input, "percentile of an empty sequence");
  std::vector<double> out;
  out.reserve(pcts.size());
  const std::size_t n = values.size();
  for (double pct : pcts) {
    if (!(pct >= 0.0 && pct <= 100.0))
      throw Error(ErrorKind::invalid_argument, fmt::format("percentile {} outside [0,100]", pct));
    const double rank = pct / 100.0 * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const double frac = rank - static_cast<double>(lo);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double a = values[lo];
    double b = a;
    if (lo + 1 < n && frac > 0.0)
      b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    out.push_back(a + frac * (b - a));
  }
  return out;
}

std::vector<const Volume*> pointers_to(std::span<const Volume> volumes) {
  std::vector<const Volume*> out;
  out.reserve(volumes.size());
  for (const auto& v : volumes) out.push_back(&v);
  return out;
}

DatasetStats compute_stats(std::span<const Volume> volumes, std::span<const double> percentiles,
                           const std::optional<VoxelSelection>& selection) {
  const auto ptrs = pointers_to(volumes);
  return compute_stats(std::span<const Volume* const>(ptrs), percentiles, selection);
}

DatasetStats compute_stats(std::span<const Volume* const> volumes,
                           std::span<const double> percentiles,
                           const std::optional<VoxelSelection>& selection) {
  if (volumes.empty()) throw Error(ErrorKind::empty_input, "compute_stats: no volumes");
  if (selection) {
    if (selection->masks.size() != volumes.size())
      throw Error(ErrorKind::invalid_argument,
                  fmt::format("compute_stats: {} masks for {} volumes", selection->masks.size(),
                              volumes.size()));
    for (std::size_t i = 0; i < volumes.size(); ++i)
      if (!(selection->masks[i].geometry() == volumes[i]->geometry()))
        throw Error(ErrorKind::geometry_mismatch,
                    fmt::format("compute_stats: mask {} geometry differs from its volume", i));
  }

  std::vector<std::vector<std::uint8_t>> keep(volumes.size());
  auto selected = [&](std::size_t v, std::size_t i) { return !selection || keep[v][i] != 0; };

  // Pass 1: counts, sums, extrema.
  std::vector<Partial> first(volumes.size());
  parallel_for(volumes.size(), [&](std::size_t v) {
    if (selection) keep[v] = selection_mask(selection->masks[v], selection->foreground);
    const auto data = volumes[v]->data();
    Partial p;
    p.min = std::numeric_limits<double>::infinity();
    p.max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!selected(v, i)) continue;
      ++p.count;
      p.sum.add(data[i]);
      p.min = std::min(p.min, data[i]);
      p.max = std::max(p.max, data[i]);
    }
    first[v] = p;
  });

  DatasetStats out;
  KahanSum total;
  out.min = std::numeric_limits<double>::infinity();
  out.max = -std::numeric_limits<double>::infinity();
  for (const auto& p : first) {
    out.count += p.count;
    total.add(p.sum.sum);
    total.add(p.sum.comp);
    if (p.count != 0) {
      out.min = std::min(out.min, p.min);
      out.max = std::max(out.max, p.max);
    }
  }
  if (out.count == 0) throw Error(ErrorKind::empty_input, "compute_stats: selection is empty");
  const double n = static_cast<double>(out.count);
  out.mean = total.value() / n;

  // Pass 2: squared deviations, with the residual-sum correction.
  std::vector<std::pair<KahanSum, KahanSum>> second(volumes.size());
  parallel_for(volumes.size(), [&](std::size_t v) {
    const auto data = volumes[v]->data();
    KahanSum sq, lin;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!selected(v, i)) continue;
      const double d = data[i] - out.mean;
      sq.add(d * d);
      lin.add(d);
    }
    second[v] = {sq, lin};
  });
  KahanSum sq, lin;
  for (const auto& [s, l] : second) {
    sq.add(s.sum);
    sq.add(s.comp);
    lin.add(l.sum);
    lin.add(l.comp);
  }
  const double residual = lin.value();
  const double var = std::max(0.0, (sq.value() - residual * residual / n) / n);
  out.std = std::sqrt(var);

  if (!percentiles.empty()) {
    std::vector<double> pooled;
    pooled.reserve(out.count);
    for (std::size_t v = 0; v < volumes.size(); ++v) {
      const auto data = volumes[v]->data();
      for (std::size_t i = 0; i < data.size(); ++i)
        if (selected(v, i)) pooled.push_back(data[i]);
    }
    const auto values = percentiles_of(std::move(pooled), percentiles);
    for (std::size_t k = 0; k < percentiles.size(); ++k)
      out.percentiles[percentiles[k]] = std::clamp(values[k], out.min, out.max);
  }
  return out;
}

}  // namespace voxharm
