#include "voxharm/intensity_map.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "voxharm/error.hpp"

namespace voxharm {

IntensityMap::IntensityMap(std::vector<double> breakpoints, std::vector<double> outputs,
                           Extrapolation policy)
    : breakpoints_(std::move(breakpoints)), outputs_(std::move(outputs)), policy_(policy) {
  if (breakpoints_.empty())
    throw Error(ErrorKind::invalid_argument, "intensity map needs at least one breakpoint");
  if (breakpoints_.size() != outputs_.size())
    throw Error(ErrorKind::invalid_argument,
                fmt::format("intensity map has {} breakpoints but {} outputs",
                            breakpoints_.size(), outputs_.size()));
  if (policy_ == Extrapolation::linear && breakpoints_.size() < 2)
    throw Error(ErrorKind::invalid_argument, "linear extrapolation needs two breakpoints");
  for (std::size_t i = 0; i < breakpoints_.size(); ++i) {
    if (!std::isfinite(breakpoints_[i]) || !std::isfinite(outputs_[i]))
      throw Error(ErrorKind::invalid_argument, "intensity map values must be finite");
    if (i > 0 && !(breakpoints_[i] > breakpoints_[i - 1]))
      throw Error(ErrorKind::invalid_argument, "breakpoints must be strictly increasing");
    if (i > 0 && outputs_[i] < outputs_[i - 1])
      throw Error(ErrorKind::invalid_argument, "outputs must be non-decreasing");
  }
}

IntensityMap IntensityMap::identity() { return IntensityMap({0.0, 1.0}, {0.0, 1.0}, Extrapolation::linear); }

IntensityMap IntensityMap::affine(double scale, double offset) {
  return IntensityMap({0.0, 1.0}, {offset, offset + scale}, Extrapolation::linear);
}

double IntensityMap::operator()(double x) const noexcept {
  const auto& b = breakpoints_;
  const auto& o = outputs_;
  const std::size_t n = b.size();
  if (n == 1) return o[0];
  if (policy_ == Extrapolation::clamp) {
    if (x <= b.front()) return o.front();
    if (x >= b.back()) return o.back();
  }
  std::size_t i = static_cast<std::size_t>(std::upper_bound(b.begin(), b.end(), x) - b.begin());
  i = std::clamp<std::size_t>(i, 1, n - 1) - 1;
  return o[i] + (x - b[i]) * (o[i + 1] - o[i]) / (b[i + 1] - b[i]);
}

std::string IntensityMap::to_json() const {
  nlohmann::json j;
  j["breakpoints"] = breakpoints_;
  j["outputs"] = outputs_;
  j["policy"] = policy_ == Extrapolation::clamp ? "clamp" : "linear";
  return j.dump(2);
}

IntensityMap IntensityMap::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    const auto policy = j.at("policy").get<std::string>();
    if (policy != "clamp" && policy != "linear")
      throw Error(ErrorKind::format, fmt::format("unknown extrapolation policy '{}'", policy));
    return IntensityMap(j.at("breakpoints").get<std::vector<double>>(),
                        j.at("outputs").get<std::vector<double>>(),
                        policy == "clamp" ? Extrapolation::clamp : Extrapolation::linear);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, fmt::format("bad intensity map document: {}", e.what()));
  }
}

void IntensityMap::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot create '{}'", path.string()));
  out << to_json() << '\n';
  if (!out) throw Error(ErrorKind::io, fmt::format("error writing '{}'", path.string()));
}

IntensityMap IntensityMap::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace voxharm
