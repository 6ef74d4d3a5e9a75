#include "voxharm/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "voxharm/error.hpp"
#include "voxharm/parallel.hpp"

namespace voxharm {
namespace {

// CDF levels at each edge: (underflow + counts left of edge i) / grand total.
std::vector<double> cdf_levels(const Histogram& h) {
  const auto counts = h.counts();
  const auto n = static_cast<double>(h.grand_total());
  std::vector<double> levels(counts.size() + 1);
  std::uint64_t acc = h.underflow();
  levels[0] = static_cast<double>(acc) / n;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    acc += counts[i];
    levels[i + 1] = static_cast<double>(acc) / n;
  }
  return levels;
}

// Smallest x with CDF(x) >= p: left edge of a flat run.
double quantile_lower(std::span<const double> edges, std::span<const double> levels, double p) {
  if (p <= levels.front()) return edges.front();
  if (p > levels.back()) return edges.back();
  const auto j = static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), p) -
                                          levels.begin());
  if (levels[j] == p) return edges[j];
  const double t = (p - levels[j - 1]) / (levels[j] - levels[j - 1]);
  return edges[j - 1] + t * (edges[j] - edges[j - 1]);
}

// Largest x with CDF(x) <= p: right edge of a flat run.
double quantile_upper(std::span<const double> edges, std::span<const double> levels, double p) {
  if (p < levels.front()) return edges.front();
  if (p >= levels.back()) return edges.back();
  const auto j = static_cast<std::size_t>(std::upper_bound(levels.begin(), levels.end(), p) -
                                          levels.begin()) - 1;
  if (levels[j] == p) return edges[j];
  const double t = (p - levels[j]) / (levels[j + 1] - levels[j]);
  return edges[j] + t * (edges[j + 1] - edges[j]);
}

struct MapBuilder {
  std::vector<double> x;
  std::vector<double> y;

  void push(double bx, double by) {
    if (!x.empty() && bx <= x.back()) {
      y.back() = std::max(y.back(), by);
      return;
    }
    if (!y.empty()) by = std::max(by, y.back());
    x.push_back(bx);
    y.push_back(by);
  }

  // A jump from lo to hi at bx, approximated by a one-ulp ramp.
  void push_jump(double bx, double lo, double hi) {
    push(bx, lo);
    if (hi > lo) push(std::nextafter(bx, std::numeric_limits<double>::infinity()), hi);
  }
};

std::pair<double, double> value_range(const Volume& v) {
  const auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
  return {*lo, *hi};
}

// Histogram range that is never empty.
std::pair<double, double> padded_range(double lo, double hi) {
  if (lo < hi) return {lo, hi};
  return {lo - 0.5, hi + 0.5};
}

}  // namespace

IntensityMap fit_moment_shift(const DatasetStats& source, const DatasetStats& target) {
  if (!(std::isfinite(source.std) && source.std > 0.0))
    throw Error(ErrorKind::numeric,
                fmt::format("moment shift needs a positive finite source std (got {})", source.std));
  if (!(std::isfinite(target.std) && target.std >= 0.0) || !std::isfinite(target.mean) ||
      !std::isfinite(source.mean))
    throw Error(ErrorKind::numeric, "moment shift needs finite moments");
  if (target.std == 0.0) {
    // Everything collapses onto the target mean; keep the map affine.
    return IntensityMap({source.mean, source.mean + source.std}, {target.mean, target.mean},
                        Extrapolation::linear);
  }
  return IntensityMap({source.mean, source.mean + source.std},
                      {target.mean, target.mean + target.std}, Extrapolation::linear);
}

IntensityMap fit_histogram_match(const Histogram& source, const Histogram& reference) {
  if (source.grand_total() == 0)
    throw Error(ErrorKind::empty_input, "histogram match: source histogram is empty");
  if (reference.grand_total() == 0)
    throw Error(ErrorKind::empty_input, "histogram match: reference histogram is empty");

  const auto src_edges = source.edges();
  const auto ref_edges = reference.edges();
  const auto src_counts = source.counts();

  const auto ref_counts = reference.counts();
  const auto occupied = std::count_if(ref_counts.begin(), ref_counts.end(),
                                      [](std::uint64_t c) { return c != 0; });
  if (occupied == 1 && reference.underflow() == 0 && reference.overflow() == 0) {
    const auto bin = static_cast<std::size_t>(
        std::find_if(ref_counts.begin(), ref_counts.end(), [](std::uint64_t c) { return c != 0; }) -
        ref_counts.begin());
    const double centre = 0.5 * (ref_edges[bin] + ref_edges[bin + 1]);
    spdlog::warn("histogram match: reference occupies a single bin; mapping everything to {}",
                 centre);
    return IntensityMap({src_edges.front(), src_edges.back()}, {centre, centre},
                        Extrapolation::clamp);
  }

  const auto s = cdf_levels(source);
  const auto c = cdf_levels(reference);
  const std::size_t n = source.bins();

  MapBuilder out;
  out.x.reserve(n + reference.bins() + 2);
  out.y.reserve(n + reference.bins() + 2);
  for (std::size_t i = 0; i <= n; ++i) {
    const bool left = i > 0 && src_counts[i - 1] != 0;
    const bool right = i < n && src_counts[i] != 0;
    const double lo = quantile_lower(ref_edges, c, s[i]);
    const double hi = quantile_upper(ref_edges, c, s[i]);
    if (right && !left)
      out.push(src_edges[i], hi);
    else if (left && right)
      out.push_jump(src_edges[i], lo, hi);
    else
      out.push(src_edges[i], lo);

    if (!right) continue;
    // Reference levels falling strictly inside this source bin.
    const double s0 = s[i], s1 = s[i + 1];
    const double width = src_edges[i + 1] - src_edges[i];
    auto j = static_cast<std::size_t>(std::upper_bound(c.begin(), c.end(), s0) - c.begin());
    double previous = s0;
    for (; j < c.size() && c[j] < s1; ++j) {
      if (c[j] == previous) continue;
      previous = c[j];
      const double x = src_edges[i] + (c[j] - s0) / (s1 - s0) * width;
      if (!(x > src_edges[i] && x < src_edges[i + 1])) continue;
      out.push_jump(x, quantile_lower(ref_edges, c, c[j]), quantile_upper(ref_edges, c, c[j]));
    }
  }
  return IntensityMap(std::move(out.x), std::move(out.y), Extrapolation::clamp);
}

std::vector<IntensityMap> fit_histogram_match(std::span<const Volume* const> source,
                                              std::span<const Volume* const> reference,
                                              const HistogramMatchOptions& options) {
  if (source.empty()) throw Error(ErrorKind::empty_input, "histogram match: no source volumes");
  if (reference.empty())
    throw Error(ErrorKind::empty_input, "histogram match: no reference volumes");
  if (options.bins == 0) throw Error(ErrorKind::invalid_argument, "histogram match: zero bins");
  if (!(options.reference_fraction > 0.0 && options.reference_fraction <= 1.0))
    throw Error(ErrorKind::invalid_argument, "reference_fraction must lie in (0, 1]");

  // Reference: pooled, optionally subsampled with a per-volume seeded stream.
  Histogram ref_hist;
  if (options.reference_fraction >= 1.0) {
    std::vector<std::pair<double, double>> ranges(reference.size());
    parallel_for(reference.size(), [&](std::size_t v) { ranges[v] = value_range(*reference[v]); });
    double lo = ranges[0].first, hi = ranges[0].second;
    for (const auto& [a, b] : ranges) {
      lo = std::min(lo, a);
      hi = std::max(hi, b);
    }
    const auto [plo, phi] = padded_range(lo, hi);
    ref_hist = build_histogram(reference, plo, phi, options.bins);
  } else {
    std::vector<std::vector<double>> picked(reference.size());
    parallel_for(reference.size(), [&](std::size_t v) {
      std::mt19937_64 rng(options.seed ^ (0x9e3779b97f4a7c15ULL * (v + 1)));
      std::bernoulli_distribution keep(options.reference_fraction);
      for (double x : reference[v]->data())
        if (keep(rng)) picked[v].push_back(x);
    });
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& p : picked)
      for (double x : p) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    if (!(lo <= hi)) throw Error(ErrorKind::empty_input, "reference subsample is empty");
    const auto [plo, phi] = padded_range(lo, hi);
    ref_hist = Histogram::uniform(plo, phi, options.bins);
    for (const auto& p : picked) ref_hist.add(p);
  }

  if (options.mode == MatchMode::pooled) {
    std::vector<std::pair<double, double>> ranges(source.size());
    parallel_for(source.size(), [&](std::size_t v) { ranges[v] = value_range(*source[v]); });
    double lo = ranges[0].first, hi = ranges[0].second;
    for (const auto& [a, b] : ranges) {
      lo = std::min(lo, a);
      hi = std::max(hi, b);
    }
    const auto [plo, phi] = padded_range(lo, hi);
    const auto map = fit_histogram_match(build_histogram(source, plo, phi, options.bins), ref_hist);
    return std::vector<IntensityMap>(source.size(), map);
  }

  std::vector<std::optional<IntensityMap>> maps(source.size());
  parallel_for(source.size(), [&](std::size_t v) {
    const auto [lo, hi] = value_range(*source[v]);
    const auto [plo, phi] = padded_range(lo, hi);
    Histogram h = Histogram::uniform(plo, phi, options.bins);
    h.add(source[v]->data());
    maps[v] = fit_histogram_match(h, ref_hist);
  });
  std::vector<IntensityMap> out;
  out.reserve(maps.size());
  for (auto& m : maps) out.push_back(std::move(*m));
  return out;
}

Volume apply_map(const Volume& volume, const IntensityMap& map) {
  const auto in = volume.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = map(in[i]);
  return volume.with_data(std::move(out));
}

ClipResult clip_percentiles(std::span<const Volume* const> volumes, double lo_pct, double hi_pct,
                            ClipMode mode, const std::optional<VoxelSelection>& selection) {
  if (volumes.empty()) throw Error(ErrorKind::empty_input, "clip_percentiles: no volumes");
  if (!(lo_pct >= 0.0 && hi_pct <= 100.0 && lo_pct < hi_pct))
    throw Error(ErrorKind::invalid_argument,
                fmt::format("clip percentiles must satisfy 0 <= lo < hi <= 100 (got {}, {})",
                            lo_pct, hi_pct));
  const std::array<double, 2> pcts{lo_pct, hi_pct};

  ClipResult result;
  if (mode == ClipMode::pooled) {
    const auto stats = compute_stats(volumes, pcts, selection);
    result.thresholds.emplace_back(stats.percentiles.at(lo_pct), stats.percentiles.at(hi_pct));
  } else {
    result.thresholds.resize(volumes.size());
    parallel_for(volumes.size(), [&](std::size_t v) {
      std::optional<VoxelSelection> one;
      if (selection)
        one = VoxelSelection{selection->masks.subspan(v, 1), selection->foreground};
      const auto stats = compute_stats(volumes.subspan(v, 1), pcts, one);
      result.thresholds[v] = {stats.percentiles.at(lo_pct), stats.percentiles.at(hi_pct)};
    });
  }
  for (const auto& [lo, hi] : result.thresholds)
    if (lo == hi) spdlog::warn("clip_percentiles: degenerate data, both thresholds equal {}", lo);

  std::vector<std::optional<Volume>> out(volumes.size());
  parallel_for(volumes.size(), [&](std::size_t v) {
    const auto [lo, hi] = result.thresholds[mode == ClipMode::pooled ? 0 : v];
    const auto in = volumes[v]->data();
    std::vector<double> data(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) data[i] = std::clamp(in[i], lo, hi);
    out[v] = volumes[v]->with_data(std::move(data));
  });
  result.volumes.reserve(out.size());
  for (auto& v : out) result.volumes.push_back(std::move(*v));
  return result;
}

ClipResult clip_percentiles(std::span<const Volume> volumes, double lo_pct, double hi_pct,
                            ClipMode mode, const std::optional<VoxelSelection>& selection) {
  const auto ptrs = pointers_to(volumes);
  return clip_percentiles(std::span<const Volume* const>(ptrs), lo_pct, hi_pct, mode, selection);
}

std::vector<Volume> znormalize(std::span<const Volume* const> volumes, const DatasetStats& stats) {
  if (!(std::isfinite(stats.std) && stats.std > 0.0))
    throw Error(ErrorKind::numeric,
                fmt::format("znormalize: std must be positive and finite (got {})", stats.std));
  if (!std::isfinite(stats.mean)) throw Error(ErrorKind::numeric, "znormalize: mean is not finite");
  std::vector<std::optional<Volume>> out(volumes.size());
  parallel_for(volumes.size(), [&](std::size_t v) {
    const auto in = volumes[v]->data();
    std::vector<double> data(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) data[i] = (in[i] - stats.mean) / stats.std;
    out[v] = volumes[v]->with_data(std::move(data));
  });
  std::vector<Volume> result;
  result.reserve(out.size());
  for (auto& v : out) result.push_back(std::move(*v));
  return result;
}

std::vector<Volume> znormalize(std::span<const Volume> volumes, const DatasetStats& stats) {
  const auto ptrs = pointers_to(volumes);
  return znormalize(std::span<const Volume* const>(ptrs), stats);
}

LabelRemap LabelRemap::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    LabelRemap remap;
    remap.description = j.value("description", "");
    for (const auto& [key, value] : j.at("mapping").items()) {
      const long src = std::stol(key);
      const long dst = value.get<long>();
      if (src < 0 || dst < 0 || src > std::numeric_limits<Label>::max() ||
          dst > std::numeric_limits<Label>::max())
        throw Error(ErrorKind::format, fmt::format("label remap entry {} -> {} out of range", src, dst));
      remap.mapping[static_cast<Label>(src)] = static_cast<Label>(dst);
    }
    return remap;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, fmt::format("bad label remap document: {}", e.what()));
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::format, fmt::format("bad label remap key: {}", e.what()));
  }
}

std::string LabelRemap::to_json() const {
  nlohmann::ordered_json j;
  j["description"] = description;
  j["mapping"] = nlohmann::ordered_json::object();
  for (const auto& [src, dst] : mapping) j["mapping"][std::to_string(src)] = dst;
  return j.dump(2);
}

LabelMap remap_labels(const LabelMap& labels, const LabelRemap& remap,
                      const Vocabulary& target_vocabulary, bool strict) {
  std::vector<Label> table(std::numeric_limits<Label>::max() + 1);
  for (std::size_t l = 0; l < table.size(); ++l) table[l] = remap(static_cast<Label>(l));

  for (const auto& [src, name] : labels.vocabulary()) {
    if (strict && !remap.mapping.contains(src))
      throw Error(ErrorKind::invalid_argument,
                  fmt::format("label remap does not cover source label {} ({})", src, name));
    const Label dst = table[src];
    if (dst != 0 && !target_vocabulary.contains(dst))
      throw Error(ErrorKind::invalid_argument,
                  fmt::format("source label {} ({}) maps to {}, which the target vocabulary "
                              "does not define",
                              src, name, dst));
  }
  if (table[0] != 0 && !target_vocabulary.contains(table[0]))
    throw Error(ErrorKind::invalid_argument, "background maps outside the target vocabulary");

  const auto in = labels.data();
  std::vector<Label> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = table[in[i]];
  return LabelMap(labels.geometry(), std::move(out), target_vocabulary, labels.orientation());
}

}  // namespace voxharm
