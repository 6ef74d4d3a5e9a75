#include <fnmatch.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "voxharm/error.hpp"
#include "voxharm/pipeline.hpp"

namespace voxharm {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::array<Stage, 5> kStageOrder{Stage::remap, Stage::harmonize, Stage::clip,
                                           Stage::normalize, Stage::resample};

Error config_error(const std::string& what) { return Error(ErrorKind::config, what); }

Stage parse_stage(const std::string& s) {
  for (Stage st : kStageOrder)
    if (to_string(st) == s) return st;
  throw config_error(fmt::format("unknown stage '{}'", s));
}

nifti::Datatype parse_datatype(const std::string& s) {
  if (s == "float32") return nifti::Datatype::float32;
  if (s == "int16") return nifti::Datatype::int16;
  if (s == "uint8") return nifti::Datatype::uint8;
  throw config_error(fmt::format("unknown datatype '{}'", s));
}

std::string_view datatype_name(nifti::Datatype dt) {
  switch (dt) {
    case nifti::Datatype::float32: return "float32";
    case nifti::Datatype::int16: return "int16";
    case nifti::Datatype::uint8: return "uint8";
  }
  return "?";
}

Vocabulary parse_vocabulary(const json& j) {
  Vocabulary v;
  for (const auto& [key, value] : j.items()) {
    const long id = std::stol(key);
    if (id <= 0 || id > std::numeric_limits<Label>::max())
      throw config_error(fmt::format("vocabulary label {} out of range", key));
    v.emplace(static_cast<Label>(id), value.get<std::string>());
  }
  return v;
}

ordered_json vocabulary_json(const Vocabulary& v) {
  ordered_json j = ordered_json::object();
  for (const auto& [id, name] : v) j[std::to_string(id)] = name;
  return j;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return path.lexically_normal();
  return (base / path).lexically_normal();
}

DatasetConfig parse_dataset(const json& j, const std::filesystem::path& base,
                            const std::string& fallback_name) {
  DatasetConfig d;
  d.name = j.value("name", fallback_name);
  d.dir = resolve(base, j.at("dir").get<std::string>());
  d.volumes = j.value("volumes", d.volumes);
  if (j.contains("labels")) d.labels = j.at("labels").is_null() ? "" : j.at("labels").get<std::string>();
  if (j.contains("vocabulary")) d.vocabulary = parse_vocabulary(j.at("vocabulary"));
  return d;
}

ordered_json dataset_json(const DatasetConfig& d) {
  ordered_json j;
  j["name"] = d.name;
  j["dir"] = d.dir.generic_string();
  j["volumes"] = d.volumes;
  j["labels"] = d.labels.empty() ? ordered_json(nullptr) : ordered_json(d.labels);
  j["vocabulary"] = vocabulary_json(d.vocabulary);
  return j;
}

Vocabulary kits_vocab() { return {{1, "kidney"}, {2, "tumor"}, {3, "cyst"}}; }
Vocabulary kipa_vocab() { return {{1, "kidney"}, {2, "tumor"}, {3, "artery"}, {4, "vein"}}; }

}  // namespace

std::string_view to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::remap: return "remap";
    case Stage::harmonize: return "harmonize";
    case Stage::clip: return "clip";
    case Stage::normalize: return "normalize";
    case Stage::resample: return "resample";
  }
  return "?";
}

std::string_view to_string(Harmonization method) noexcept {
  switch (method) {
    case Harmonization::none: return "none";
    case Harmonization::moment_shift: return "moment_shift";
    case Harmonization::histogram_match: return "histogram_match";
  }
  return "?";
}

bool PipelineConfig::has(Stage s) const noexcept {
  return std::find(stages.begin(), stages.end(), s) != stages.end();
}

void validate(const PipelineConfig& config) {
  for (std::size_t i = 1; i < config.stages.size(); ++i) {
    const auto pos = [](Stage s) { return std::find(kStageOrder.begin(), kStageOrder.end(), s); };
    if (pos(config.stages[i]) <= pos(config.stages[i - 1]))
      throw config_error(fmt::format(
          "stage '{}' cannot follow '{}'; the order is remap, harmonize, clip, normalize, resample",
          to_string(config.stages[i]), to_string(config.stages[i - 1])));
  }
  if (config.target.dir.empty()) throw config_error("target dataset directory is required");
  if (config.has(Stage::harmonize) && config.harmonization != Harmonization::none &&
      !config.source)
    throw config_error("harmonisation needs a source dataset");
  if (config.source && config.source->name == config.target.name)
    throw config_error("source and target datasets need distinct names");
  if (config.has(Stage::clip) &&
      !(config.clip_lo_pct >= 0.0 && config.clip_hi_pct <= 100.0 &&
        config.clip_lo_pct < config.clip_hi_pct))
    throw config_error(fmt::format("clip percentiles must satisfy 0 <= lo < hi <= 100 (got {}, {})",
                                   config.clip_lo_pct, config.clip_hi_pct));
  if (config.has(Stage::resample)) {
    try {
      validate(config.resample);
    } catch (const Error& e) {
      throw config_error(e.what());
    }
    if (config.resample.label_order != 0)
      throw config_error("labels are resampled with order 0 only");
  }
  if (config.histogram.bins == 0) throw config_error("histogram bins must be positive");
  if (!(config.histogram.reference_fraction > 0.0 && config.histogram.reference_fraction <= 1.0))
    throw config_error("reference_fraction must lie in (0, 1]");
  if (config.output_dir.empty()) throw config_error("output directory is required");
  if (config.label_datatype == nifti::Datatype::float32)
    throw config_error("labels need an integer datatype");

  const auto out = std::filesystem::weakly_canonical(config.output_dir);
  auto clash = [&](const DatasetConfig& d) {
    return std::filesystem::weakly_canonical(d.dir) == out;
  };
  if (clash(config.target) || (config.source && clash(*config.source)))
    throw config_error("output directory must differ from the input directories");
}

PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  try {
    const auto j = json::parse(text);
    c.target = parse_dataset(j.at("target"), base_dir, "target");
    if (c.target.vocabulary.empty()) c.target.vocabulary = kits_vocab();
    if (j.contains("source") && !j.at("source").is_null())
      c.source = parse_dataset(j.at("source"), base_dir, "source");

    if (j.contains("stages")) {
      c.stages.clear();
      for (const auto& s : j.at("stages")) c.stages.push_back(parse_stage(s.get<std::string>()));
    }
    if (j.contains("label_remap") && !j.at("label_remap").is_null())
      c.label_remap = LabelRemap::from_json(j.at("label_remap").dump());

    if (j.contains("harmonization")) {
      const auto& h = j.at("harmonization");
      const auto method = h.value("method", std::string("none"));
      if (method == "none") c.harmonization = Harmonization::none;
      else if (method == "moment_shift") c.harmonization = Harmonization::moment_shift;
      else if (method == "histogram_match") c.harmonization = Harmonization::histogram_match;
      else throw config_error(fmt::format("unknown harmonisation method '{}'", method));
      c.histogram.bins = h.value("bins", c.histogram.bins);
      const auto mode = h.value("mode", std::string("per_volume"));
      if (mode == "per_volume") c.histogram.mode = MatchMode::per_volume;
      else if (mode == "pooled") c.histogram.mode = MatchMode::pooled;
      else throw config_error(fmt::format("unknown histogram mode '{}'", mode));
      c.histogram.reference_fraction = h.value("reference_fraction", 1.0);
    }

    if (j.contains("clip")) {
      const auto& cl = j.at("clip");
      if (cl.is_null() || (cl.is_boolean() && !cl.get<bool>())) {
        std::erase(c.stages, Stage::clip);
      } else if (cl.is_object()) {
        c.clip_lo_pct = cl.value("lo_pct", c.clip_lo_pct);
        c.clip_hi_pct = cl.value("hi_pct", c.clip_hi_pct);
        const auto mode = cl.value("mode", std::string("pooled"));
        if (mode == "pooled") c.clip_mode = ClipMode::pooled;
        else if (mode == "per_volume") c.clip_mode = ClipMode::per_volume;
        else throw config_error(fmt::format("unknown clip mode '{}'", mode));
      }
    }
    if (j.contains("normalize") && !j.at("normalize").get<bool>())
      std::erase(c.stages, Stage::normalize);

    const auto scope = j.value("stats_scope", std::string("all"));
    if (scope == "all") c.foreground_stats = false;
    else if (scope == "foreground") c.foreground_stats = true;
    else throw config_error(fmt::format("unknown stats_scope '{}'", scope));

    if (j.contains("resample")) {
      const auto& r = j.at("resample");
      if (r.is_null() || (r.is_boolean() && !r.get<bool>())) {
        std::erase(c.stages, Stage::resample);
      } else if (r.is_object()) {
        if (r.contains("spacing")) {
          const auto s = r.at("spacing").get<std::vector<double>>();
          if (s.size() != 3) throw config_error("resample.spacing needs three values");
          c.resample.target_spacing = {s[0], s[1], s[2]};
        }
        c.resample.intensity_order = r.value("intensity_order", c.resample.intensity_order);
        c.resample.label_order = r.value("label_order", c.resample.label_order);
      }
    }

    const auto& out = j.at("output");
    c.output_dir = resolve(base_dir, out.at("dir").get<std::string>());
    c.output_datatype = parse_datatype(out.value("datatype", std::string("float32")));
    c.label_datatype = parse_datatype(out.value("label_datatype", std::string("uint8")));
    c.seed = j.value("seed", std::uint64_t{0});
    c.histogram.seed = c.seed;
  } catch (const json::exception& e) {
    throw config_error(fmt::format("bad pipeline config: {}", e.what()));
  } catch (const std::logic_error& e) {
    throw config_error(fmt::format("bad pipeline config: {}", e.what()));
  }
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open config '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string to_json(const PipelineConfig& c) {
  ordered_json j;
  j["target"] = dataset_json(c.target);
  j["source"] = c.source ? dataset_json(*c.source) : ordered_json(nullptr);
  j["stages"] = ordered_json::array();
  for (Stage s : c.stages) j["stages"].push_back(to_string(s));
  j["label_remap"] = ordered_json::parse(c.label_remap.to_json());
  j["harmonization"] = {
      {"method", to_string(c.harmonization)},
      {"bins", c.histogram.bins},
      {"mode", c.histogram.mode == MatchMode::per_volume ? "per_volume" : "pooled"},
      {"reference_fraction", c.histogram.reference_fraction}};
  j["clip"] = {{"lo_pct", c.clip_lo_pct},
               {"hi_pct", c.clip_hi_pct},
               {"mode", c.clip_mode == ClipMode::pooled ? "pooled" : "per_volume"}};
  j["normalize"] = c.has(Stage::normalize);
  j["stats_scope"] = c.foreground_stats ? "foreground" : "all";
  j["resample"] = {{"spacing", c.resample.target_spacing},
                   {"intensity_order", c.resample.intensity_order},
                   {"label_order", c.resample.label_order}};
  j["output"] = {{"dir", c.output_dir.generic_string()},
                 {"datatype", datatype_name(c.output_datatype)},
                 {"label_datatype", datatype_name(c.label_datatype)}};
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

std::vector<std::filesystem::path> glob_files(const std::filesystem::path& dir,
                                              std::string_view pattern) {
  const std::filesystem::path p{std::string(pattern)};
  const auto sub = dir / p.parent_path();
  const auto name = p.filename().string();
  if (p.parent_path().string().find_first_of("*?[") != std::string::npos)
    throw config_error(fmt::format("glob '{}': wildcards are only allowed in the file name", pattern));
  std::vector<std::filesystem::path> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(sub, ec))
    throw Error(ErrorKind::io, fmt::format("'{}' is not a directory", sub.string()));
  for (const auto& entry : std::filesystem::directory_iterator(sub)) {
    if (!entry.is_regular_file()) continue;
    if (fnmatch(name.c_str(), entry.path().filename().c_str(), 0) == 0) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string case_stem(const std::filesystem::path& path) {
  std::string name = path.filename().string();
  for (std::string_view ext : {".nii.gz", ".nii"})
    if (name.size() > ext.size() && name.ends_with(ext)) return name.substr(0, name.size() - ext.size());
  return path.stem().string();
}

PipelineConfig dataset1_preset() {
  PipelineConfig c;
  c.target = {"kits", "data/kits23", "volumes/*.nii.gz", "labels/*.nii.gz", kits_vocab()};
  c.source = DatasetConfig{"kipa", "data/kipa22", "volumes/*.nii.gz", "labels/*.nii.gz", kipa_vocab()};
  c.label_remap.mapping = {{3, 0}, {4, 0}};
  c.label_remap.description = "drop artery and vein, keep kidney and tumor";
  c.harmonization = Harmonization::moment_shift;
  c.output_dir = "out/dataset1";
  return c;
}

PipelineConfig dataset2_preset() {
  PipelineConfig c = dataset1_preset();
  c.harmonization = Harmonization::histogram_match;
  c.output_dir = "out/dataset2";
  return c;
}

}  // namespace voxharm
