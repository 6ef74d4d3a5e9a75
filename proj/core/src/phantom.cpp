#include "voxharm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "voxharm/error.hpp"
#include "voxharm/nifti.hpp"
#include "voxharm/parallel.hpp"

namespace voxharm {
namespace {

struct Ellipsoid {
  std::size_t cls;
  Vec3 center;
  Vec3 radius;
};

double draw(std::mt19937_64& rng, const Range& r) {
  if (r[0] == r[1]) return r[0];
  return std::uniform_real_distribution<double>(r[0], r[1])(rng);
}

Range range_from(const nlohmann::json& j) {
  if (j.is_number()) return {j.get<double>(), j.get<double>()};
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) throw Error(ErrorKind::format, "range must be [lo, hi]");
  return {v[0], v[1]};
}

std::array<Range, 3> ranges_from(const nlohmann::json& j) {
  if (j.size() != 3) throw Error(ErrorKind::format, "expected three per-axis ranges");
  return {range_from(j[0]), range_from(j[1]), range_from(j[2])};
}

}  // namespace

Vocabulary PhantomSpec::vocabulary() const {
  Vocabulary v;
  for (const auto& c : classes) v.emplace(c.label, c.name);
  return v;
}

void validate(const PhantomSpec& spec) {
  if (spec.count == 0) throw Error(ErrorKind::invalid_argument, "phantom count must be positive");
  Geometry g;
  g.dims = spec.dims;
  g.spacing = spec.spacing;
  validate(g);
  if (spec.background.empty())
    throw Error(ErrorKind::invalid_argument, "phantom background needs at least one component");
  double wsum = 0.0;
  for (const auto& c : spec.background) {
    if (!(c.weight > 0.0) || !(c.std > 0.0) || !std::isfinite(c.mean))
      throw Error(ErrorKind::invalid_argument,
                  "background components need positive weight and std and a finite mean");
    wsum += c.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw Error(ErrorKind::invalid_argument,
                fmt::format("background weights sum to {}, expected 1", wsum));
  std::set<Label> labels;
  for (const auto& c : spec.classes) {
    if (c.label == 0) throw Error(ErrorKind::invalid_argument, "class label 0 is reserved");
    if (!labels.insert(c.label).second)
      throw Error(ErrorKind::invalid_argument, fmt::format("duplicate class label {}", c.label));
    for (int a = 0; a < 3; ++a) {
      if (!(c.center[a][0] <= c.center[a][1]) || !(c.radius[a][0] <= c.radius[a][1]))
        throw Error(ErrorKind::invalid_argument,
                    fmt::format("class '{}' has an inverted range", c.name));
      if (!(c.radius[a][0] > 0.0))
        throw Error(ErrorKind::invalid_argument,
                    fmt::format("class '{}' radii must be positive", c.name));
    }
  }
}

PhantomCase generate_phantom(const PhantomSpec& spec, std::size_t index) {
  validate(spec);
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);

  std::vector<Ellipsoid> shapes;
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    const auto& c = spec.classes[k];
    for (std::size_t e = 0; e < c.count; ++e) {
      Ellipsoid s{k, {}, {}};
      for (int a = 0; a < 3; ++a) s.center[a] = draw(rng, c.center[a]);
      for (int a = 0; a < 3; ++a) s.radius[a] = draw(rng, c.radius[a]);
      shapes.push_back(s);
    }
  }
  // Lowest priority first so higher priorities overwrite.
  std::stable_sort(shapes.begin(), shapes.end(), [&](const Ellipsoid& a, const Ellipsoid& b) {
    return spec.classes[a.cls].priority < spec.classes[b.cls].priority;
  });

  Geometry g;
  g.dims = spec.dims;
  g.spacing = spec.spacing;
  const std::size_t n = g.voxel_count();

  std::vector<double> weights;
  for (const auto& c : spec.background) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<std::normal_distribution<double>> normals;
  for (const auto& c : spec.background) normals.emplace_back(c.mean, c.std);

  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = normals[pick(rng)](rng);

  std::vector<Label> labels(n, 0);
  std::vector<int> owner(n, -1);
  for (const auto& s : shapes) {
    std::array<std::size_t, 3> lo{}, hi{};
    bool empty = false;
    for (int a = 0; a < 3; ++a) {
      const double l = std::ceil(s.center[a] - s.radius[a]);
      const double h = std::floor(s.center[a] + s.radius[a]);
      if (h < 0.0 || l > static_cast<double>(g.dims[a] - 1)) empty = true;
      lo[a] = static_cast<std::size_t>(std::max(0.0, l));
      hi[a] = static_cast<std::size_t>(std::min(static_cast<double>(g.dims[a] - 1), std::max(0.0, h)));
    }
    if (empty) continue;
    for (std::size_t z = lo[2]; z <= hi[2]; ++z)
      for (std::size_t y = lo[1]; y <= hi[1]; ++y)
        for (std::size_t x = lo[0]; x <= hi[0]; ++x) {
          const double dx = (static_cast<double>(x) - s.center[0]) / s.radius[0];
          const double dy = (static_cast<double>(y) - s.center[1]) / s.radius[1];
          const double dz = (static_cast<double>(z) - s.center[2]) / s.radius[2];
          if (dx * dx + dy * dy + dz * dz <= 1.0) {
            const std::size_t i = g.index(x, y, z);
            labels[i] = spec.classes[s.cls].label;
            owner[i] = static_cast<int>(s.cls);
          }
        }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (owner[i] >= 0) data[i] += spec.classes[static_cast<std::size_t>(owner[i])].intensity_offset;

  return PhantomCase{fmt::format("{}_{:04d}", spec.prefix, index), Volume(g, std::move(data)),
                     LabelMap(g, std::move(labels), spec.vocabulary())};
}

std::vector<PhantomCase> generate_phantoms(const PhantomSpec& spec) {
  validate(spec);
  std::vector<std::optional<PhantomCase>> cases(spec.count);
  parallel_for(spec.count, [&](std::size_t i) { cases[i] = generate_phantom(spec, i); });
  std::vector<PhantomCase> out;
  out.reserve(cases.size());
  for (auto& c : cases) out.push_back(std::move(*c));
  return out;
}

void write_phantoms(const PhantomSpec& spec, const std::filesystem::path& dir) {
  validate(spec);
  std::filesystem::create_directories(dir / "volumes");
  std::filesystem::create_directories(dir / "labels");
  parallel_for(spec.count, [&](std::size_t i) {
    const auto c = generate_phantom(spec, i);
    nifti::write_volume(c.volume, dir / "volumes" / (c.id + ".nii.gz"));
    nifti::write_labels(c.labels, dir / "labels" / (c.id + ".nii.gz"));
  });
}

PhantomSpec phantom_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    PhantomSpec s;
    s.prefix = j.value("prefix", s.prefix);
    s.count = j.value("count", s.count);
    if (j.contains("dims")) {
      const auto d = j.at("dims").get<std::vector<std::size_t>>();
      if (d.size() != 3) throw Error(ErrorKind::format, "dims must have three entries");
      s.dims = {d[0], d[1], d[2]};
    }
    if (j.contains("spacing")) {
      const auto d = j.at("spacing").get<std::vector<double>>();
      if (d.size() != 3) throw Error(ErrorKind::format, "spacing must have three entries");
      s.spacing = {d[0], d[1], d[2]};
    }
    if (j.contains("background")) {
      s.background.clear();
      for (const auto& c : j.at("background"))
        s.background.push_back({c.at("mean").get<double>(), c.at("std").get<double>(),
                                c.value("weight", 1.0)});
    }
    for (const auto& c : j.value("classes", nlohmann::json::array())) {
      EllipsoidClass e;
      e.name = c.at("name").get<std::string>();
      e.label = c.at("label").get<Label>();
      e.priority = c.value("priority", 0);
      e.count = c.value("count", std::size_t{1});
      e.center = ranges_from(c.at("center"));
      e.radius = ranges_from(c.at("radius"));
      e.intensity_offset = c.value("intensity_offset", 0.0);
      s.classes.push_back(std::move(e));
    }
    s.seed = j.value("seed", std::uint64_t{0});
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, fmt::format("bad phantom spec: {}", e.what()));
  }
}

std::string to_json(const PhantomSpec& spec) {
  nlohmann::ordered_json j;
  j["prefix"] = spec.prefix;
  j["count"] = spec.count;
  j["dims"] = spec.dims;
  j["spacing"] = spec.spacing;
  j["background"] = nlohmann::ordered_json::array();
  for (const auto& c : spec.background)
    j["background"].push_back({{"mean", c.mean}, {"std", c.std}, {"weight", c.weight}});
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : spec.classes)
    j["classes"].push_back({{"name", c.name},
                            {"label", c.label},
                            {"priority", c.priority},
                            {"count", c.count},
                            {"center", c.center},
                            {"radius", c.radius},
                            {"intensity_offset", c.intensity_offset}});
  j["seed"] = spec.seed;
  return j.dump(2) + "\n";
}

PhantomSpec default_target_phantom() {
  PhantomSpec s;
  s.prefix = "kits";
  s.count = 10;
  s.dims = {64, 64, 64};
  s.spacing = {0.8, 0.8, 1.5};
  s.background = {{-1000.0, 40.0, 0.45}, {20.0, 60.0, 0.55}};
  s.classes = {
      {"kidney", 1, 1, 2, {Range{18, 46}, Range{18, 46}, Range{20, 44}}, {Range{7, 10}, Range{5, 8}, Range{8, 12}}, 150.0},
      {"tumor", 2, 2, 1, {Range{24, 40}, Range{24, 40}, Range{24, 40}}, {Range{3, 6}, Range{3, 6}, Range{3, 6}}, 80.0},
      {"cyst", 3, 3, 1, {Range{24, 40}, Range{24, 40}, Range{24, 40}}, {Range{2, 3}, Range{2, 3}, Range{2, 3}}, -20.0},
  };
  s.seed = 23;
  return s;
}

PhantomSpec default_source_phantom() {
  PhantomSpec s;
  s.prefix = "kipa";
  s.count = 10;
  s.dims = {64, 64, 64};
  s.spacing = {0.7, 0.7, 0.8};
  s.background = {{950.0, 45.0, 0.3}, {1200.0, 90.0, 0.7}};
  s.classes = {
      {"kidney", 1, 1, 1, {Range{22, 42}, Range{22, 42}, Range{22, 42}}, {Range{8, 12}, Range{6, 9}, Range{9, 13}}, 120.0},
      {"tumor", 2, 3, 1, {Range{26, 38}, Range{26, 38}, Range{26, 38}}, {Range{3, 6}, Range{3, 6}, Range{3, 6}}, 60.0},
      {"artery", 3, 2, 1, {Range{10, 54}, Range{10, 54}, Range{10, 54}}, {Range{1.5, 2.5}, Range{1.5, 2.5}, Range{10, 20}}, 200.0},
      {"vein", 4, 2, 1, {Range{10, 54}, Range{10, 54}, Range{10, 54}}, {Range{2, 3}, Range{2, 3}, Range{10, 20}}, 100.0},
  };
  s.seed = 22;
  return s;
}

}  // namespace voxharm
