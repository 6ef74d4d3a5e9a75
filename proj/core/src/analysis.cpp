#include "voxharm/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "voxharm/error.hpp"

namespace voxharm {
namespace {

// Walks a histogram's piecewise-linear CDF at increasing query points.
class CdfCursor {
 public:
  explicit CdfCursor(const Histogram& h) : h_(h), total_(static_cast<double>(h.total())) {}

  double at(double x) {
    const auto edges = h_.edges();
    const auto counts = h_.counts();
    if (x <= edges.front()) return 0.0;
    if (x >= edges.back()) return 1.0;
    while (bin_ + 1 < counts.size() && x >= edges[bin_ + 1]) {
      cum_ += counts[bin_];
      ++bin_;
    }
    if (x == edges[bin_]) return static_cast<double>(cum_) / total_;
    const double frac = (x - edges[bin_]) / (edges[bin_ + 1] - edges[bin_]);
    return (static_cast<double>(cum_) + frac * static_cast<double>(counts[bin_])) / total_;
  }

 private:
  const Histogram& h_;
  double total_;
  std::size_t bin_ = 0;
  std::uint64_t cum_ = 0;
};

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorKind::format, fmt::format("bad number '{}' in plot CSV", s));
  return v;
}

std::uint64_t parse_count(std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorKind::format, fmt::format("bad count '{}' in plot CSV", s));
  return v;
}

}  // namespace

CdfDistance cdf_distance(const Histogram& a, const Histogram& b) {
  if (a.total() == 0 || b.total() == 0)
    throw Error(ErrorKind::empty_input, "cdf_distance: histogram has no in-range counts");

  std::vector<double> grid;
  grid.reserve(a.edges().size() + b.edges().size());
  std::merge(a.edges().begin(), a.edges().end(), b.edges().begin(), b.edges().end(),
             std::back_inserter(grid));
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  CdfCursor fa(a), fb(b);
  CdfDistance out;
  double prev_x = grid.front();
  double prev_d = fa.at(prev_x) - fb.at(prev_x);
  out.ks = std::abs(prev_d);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double x = grid[k];
    const double d = fa.at(x) - fb.at(x);
    const double h = x - prev_x;
    const double p = std::abs(prev_d), q = std::abs(d);
    if ((prev_d >= 0.0) == (d >= 0.0) || p == 0.0 || q == 0.0)
      out.emd += 0.5 * (p + q) * h;
    else
      out.emd += 0.5 * (p * p + q * q) / (p + q) * h;  // sign change inside the segment
    out.ks = std::max(out.ks, q);
    prev_x = x;
    prev_d = d;
  }
  return out;
}

std::string format_plot_csv(const HistogramSet& histograms) {
  std::string out = "series,bin_left,bin_right,count,density\n";
  for (const auto& [name, h] : histograms) {
    if (name.find_first_of(",\n\"") != std::string::npos)
      throw Error(ErrorKind::invalid_argument,
                  fmt::format("series name '{}' contains a CSV delimiter", name));
    const auto density = h.density();
    for (std::size_t i = 0; i < h.bins(); ++i)
      out += fmt::format("{},{},{},{},{}\n", name, h.edges()[i], h.edges()[i + 1], h.counts()[i],
                         density[i]);
  }
  return out;
}

std::string format_plot_json(const HistogramSet& histograms) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, h] : histograms) {
    j[name] = {{"edges", std::vector<double>(h.edges().begin(), h.edges().end())},
               {"counts", std::vector<std::uint64_t>(h.counts().begin(), h.counts().end())},
               {"underflow", h.underflow()},
               {"overflow", h.overflow()}};
  }
  return j.dump(2) + "\n";
}

void emit_plot_data(const HistogramSet& histograms, const std::filesystem::path& path,
                    bool json_mirror) {
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, fmt::format("cannot create '{}'", p.string()));
    out << text;
    if (!out) throw Error(ErrorKind::io, fmt::format("error writing '{}'", p.string()));
  };
  write(path, format_plot_csv(histograms));
  if (json_mirror) {
    auto mirror = path;
    mirror.replace_extension(".json");
    write(mirror, format_plot_json(histograms));
  }
}

HistogramSet parse_plot_csv(std::string_view csv) {
  struct Rows {
    std::vector<double> edges;
    std::vector<std::uint64_t> counts;
  };
  std::map<std::string, Rows> rows;
  bool header = true;
  while (!csv.empty()) {
    const auto eol = csv.find('\n');
    std::string_view line = csv.substr(0, eol);
    csv = eol == std::string_view::npos ? std::string_view{} : csv.substr(eol + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      if (line != "series,bin_left,bin_right,count,density")
        throw Error(ErrorKind::format, "plot CSV has an unexpected header");
      header = false;
      continue;
    }
    std::array<std::string_view, 5> f;
    for (std::size_t k = 0; k < 5; ++k) {
      const auto comma = line.find(',');
      if ((k < 4) == (comma == std::string_view::npos))
        throw Error(ErrorKind::format, "plot CSV row does not have 5 fields");
      f[k] = line.substr(0, comma);
      line = k < 4 ? line.substr(comma + 1) : std::string_view{};
    }
    auto& r = rows[std::string(f[0])];
    const double left = parse_double(f[1]);
    const double right = parse_double(f[2]);
    if (r.edges.empty())
      r.edges.push_back(left);
    else if (r.edges.back() != left)
      throw Error(ErrorKind::format, "plot CSV bins are not contiguous");
    r.edges.push_back(right);
    r.counts.push_back(parse_count(f[3]));
  }
  HistogramSet out;
  for (auto& [name, r] : rows)
    out.emplace(name, Histogram(std::move(r.edges), std::move(r.counts)));
  return out;
}

}  // namespace voxharm
