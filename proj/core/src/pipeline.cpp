#include "voxharm/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "voxharm/digest.hpp"
#include "voxharm/error.hpp"
#include "voxharm/parallel.hpp"

namespace voxharm {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

constexpr std::array<double, 3> kReportPercentiles{0.5, 50.0, 99.5};

struct Case {
  std::string id;
  std::string role;
  fs::path volume_path;
  fs::path labels_path;
  std::optional<Volume> volume;
  std::optional<LabelMap> labels;
  std::string map_file;
};

template <typename F>
decltype(auto) in_stage(std::string_view stage, const std::string& case_id, F&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(e.kind(), std::string(stage), case_id, e.what());
  } catch (const fs::filesystem_error& e) {
    throw StageError(ErrorKind::io, std::string(stage), case_id, e.what());
  }
}

std::vector<Case> discover(const DatasetConfig& d, const std::string& role) {
  const auto volumes = glob_files(d.dir, d.volumes);
  if (volumes.empty())
    throw Error(ErrorKind::empty_input,
                fmt::format("dataset '{}': no volumes match '{}' in {}", d.name, d.volumes, d.dir.string()));
  std::map<std::string, fs::path> labels;
  if (!d.labels.empty())
    for (const auto& p : glob_files(d.dir, d.labels)) labels.emplace(case_stem(p), p);

  std::vector<Case> out;
  for (const auto& v : volumes) {
    Case c;
    const auto stem = case_stem(v);
    c.id = d.name + "_" + stem;
    c.role = role;
    c.volume_path = v;
    if (!d.labels.empty()) {
      const auto it = labels.find(stem);
      if (it == labels.end())
        throw StageError(ErrorKind::empty_input, "load", c.id,
                         fmt::format("no label file for volume '{}'", v.string()));
      c.labels_path = it->second;
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<const Volume*> volumes_of(const std::vector<Case*>& cases) {
  std::vector<const Volume*> out;
  out.reserve(cases.size());
  for (const auto* c : cases) out.push_back(&*c->volume);
  return out;
}

std::optional<VoxelSelection> selection_for(const std::vector<Case*>& cases,
                                            std::vector<LabelMap>& storage, bool foreground) {
  if (!foreground) return std::nullopt;
  storage.clear();
  for (const auto* c : cases) {
    if (!c->labels)
      throw StageError(ErrorKind::config, "stats", c->id,
                       "foreground statistics need label maps for every case");
    storage.push_back(*c->labels);
  }
  return VoxelSelection{storage, {}};
}

ordered_json stats_json(const DatasetStats& s) {
  ordered_json j;
  j["count"] = s.count;
  j["mean"] = s.mean;
  j["std"] = s.std;
  j["min"] = s.min;
  j["max"] = s.max;
  j["percentiles"] = ordered_json::object();
  for (const auto& [p, v] : s.percentiles) j["percentiles"][fmt::format("{}", p)] = v;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot create '{}'", path.string()));
  out << text;
  if (!out) throw Error(ErrorKind::io, fmt::format("error writing '{}'", path.string()));
}

void promote(const fs::path& staging, const fs::path& out) {
  const fs::path previous = out.string() + ".previous";
  fs::remove_all(previous);
  if (fs::exists(out)) fs::rename(out, previous);
  fs::rename(staging, out);
  fs::remove_all(previous);
}

}  // namespace

std::string Manifest::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["stages"] = ordered_json::array();
  for (Stage s : stages) j["stages"].push_back(to_string(s));
  j["harmonization"] = harmonization;
  j["config"] = config_json.empty() ? ordered_json(nullptr) : ordered_json::parse(config_json);

  ordered_json stats = ordered_json::object();
  auto put = [&](const char* key, const std::optional<DatasetStats>& s) {
    if (s) stats[key] = stats_json(*s);
  };
  put("target_raw", target_raw);
  put("source_raw", source_raw);
  put("source_harmonized", source_harmonized);
  put("clipped", clipped);
  put("normalized", normalized);
  j["stats"] = stats;

  j["clip_thresholds"] = ordered_json::array();
  for (const auto& [lo, hi] : clip_thresholds) j["clip_thresholds"].push_back({lo, hi});
  j["normalize"] = normalize_stats
                       ? ordered_json{{"mean", normalize_stats->mean}, {"std", normalize_stats->std}}
                       : ordered_json(nullptr);
  j["maps"] = maps;

  j["outputs"] = ordered_json::array();
  for (const auto& o : outputs) {
    ordered_json r;
    r["case"] = o.case_id;
    r["role"] = o.role;
    r["volume"] = o.volume;
    r["volume_sha256"] = o.volume_sha256;
    r["labels"] = o.labels.empty() ? ordered_json(nullptr) : ordered_json(o.labels);
    r["labels_sha256"] = o.labels.empty() ? ordered_json(nullptr) : ordered_json(o.labels_sha256);
    r["map"] = o.map.empty() ? ordered_json(nullptr) : ordered_json(o.map);
    r["dims"] = o.dims;
    r["spacing"] = o.spacing;
    j["outputs"].push_back(r);
  }
  return j.dump(2) + "\n";
}

Manifest run_pipeline(const PipelineConfig& config) {
  in_stage("validate", "", [&] { validate(config); });

  Manifest manifest;
  manifest.stages = config.stages;
  manifest.seed = config.seed;
  manifest.config_json = to_json(config);
  const bool harmonize = config.has(Stage::harmonize) && config.harmonization != Harmonization::none;
  manifest.harmonization = std::string(to_string(harmonize ? config.harmonization : Harmonization::none));

  // Discover and load.
  std::vector<Case> cases = in_stage("load", "", [&] { return discover(config.target, "target"); });
  std::size_t n_target = cases.size();
  if (config.source) {
    auto src = in_stage("load", "", [&] { return discover(*config.source, "source"); });
    for (auto& c : src) cases.push_back(std::move(c));
  }
  {
    std::map<std::string, int> seen;
    for (const auto& c : cases)
      if (seen[c.id]++)
        throw StageError(ErrorKind::config, "load", c.id, "duplicate case ID");
  }
  parallel_for(cases.size(), [&](std::size_t i) {
    Case& c = cases[i];
    in_stage("load", c.id, [&] {
      c.volume = nifti::read_volume(c.volume_path);
      if (!c.labels_path.empty()) {
        const auto& vocab = c.role == "target" ? config.target.vocabulary : config.source->vocabulary;
        c.labels = nifti::read_labels(c.labels_path, vocab, false);
        if (!(c.labels->geometry() == c.volume->geometry()))
          throw Error(ErrorKind::geometry_mismatch, "label map geometry differs from its volume");
      }
    });
  });

  std::vector<Case*> all, target, source;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    all.push_back(&cases[i]);
    (i < n_target ? target : source).push_back(&cases[i]);
  }

  // remap: source labels into the target vocabulary.
  if (config.has(Stage::remap) && config.source) {
    parallel_for(source.size(), [&](std::size_t i) {
      Case& c = *source[i];
      if (!c.labels) return;
      in_stage("remap", c.id, [&] {
        c.labels = remap_labels(*c.labels, config.label_remap, config.target.vocabulary);
      });
    });
  }

  const std::span<const double> report_pcts(kReportPercentiles);
  manifest.target_raw = in_stage("stats", "", [&] {
    const auto v = volumes_of(target);
    return compute_stats(v, report_pcts);
  });
  if (!source.empty())
    manifest.source_raw = in_stage("stats", "", [&] {
      const auto v = volumes_of(source);
      return compute_stats(v, report_pcts);
    });

  fs::path staging = config.output_dir.string() + ".staging";
  in_stage("write", "", [&] {
    fs::remove_all(staging);
    fs::create_directories(staging / "volumes");
    fs::create_directories(staging / "maps");
    fs::create_directories(staging / "labels");
  });

  // harmonize: source toward target.
  if (harmonize) {
    const auto src = volumes_of(source);
    const auto tgt = volumes_of(target);
    std::vector<IntensityMap> maps;
    std::vector<std::string> map_names;
    if (config.harmonization == Harmonization::moment_shift) {
      const auto map = in_stage("harmonize", "", [&] {
        return fit_moment_shift(*manifest.source_raw, *manifest.target_raw);
      });
      maps.assign(source.size(), map);
      map_names.assign(source.size(), "maps/moment_shift.json");
      in_stage("write", "", [&] { map.save(staging / "maps/moment_shift.json"); });
      manifest.maps.push_back("maps/moment_shift.json");
    } else {
      maps = in_stage("harmonize", "", [&] { return fit_histogram_match(src, tgt, config.histogram); });
      if (config.histogram.mode == MatchMode::pooled) {
        map_names.assign(source.size(), "maps/histogram_match.json");
        in_stage("write", "", [&] { maps.front().save(staging / "maps/histogram_match.json"); });
        manifest.maps.push_back("maps/histogram_match.json");
      } else {
        for (std::size_t i = 0; i < source.size(); ++i) {
          map_names.push_back("maps/" + source[i]->id + ".json");
          in_stage("write", source[i]->id, [&] { maps[i].save(staging / map_names.back()); });
          manifest.maps.push_back(map_names.back());
        }
      }
    }
    parallel_for(source.size(), [&](std::size_t i) {
      Case& c = *source[i];
      in_stage("harmonize", c.id, [&] { c.volume = apply_map(*c.volume, maps[i]); });
      c.map_file = map_names[i];
    });
    manifest.source_harmonized = in_stage("stats", "", [&] {
      const auto v = volumes_of(source);
      return compute_stats(v, report_pcts);
    });
  }

  std::vector<LabelMap> mask_storage;

  // clip: thresholds over the combined dataset.
  if (config.has(Stage::clip)) {
    auto result = in_stage("clip", "", [&] {
      const auto v = volumes_of(all);
      const auto sel = selection_for(all, mask_storage, config.foreground_stats);
      return clip_percentiles(v, config.clip_lo_pct, config.clip_hi_pct, config.clip_mode, sel);
    });
    for (std::size_t i = 0; i < all.size(); ++i) all[i]->volume = std::move(result.volumes[i]);
    manifest.clip_thresholds = result.thresholds;
    manifest.clipped = in_stage("stats", "", [&] {
      const auto v = volumes_of(all);
      return compute_stats(v, report_pcts);
    });
  }

  // normalize: by the combined dataset's own moments.
  if (config.has(Stage::normalize)) {
    manifest.normalize_stats = in_stage("normalize", "", [&] {
      const auto v = volumes_of(all);
      const auto sel = selection_for(all, mask_storage, config.foreground_stats);
      return compute_stats(v, {}, sel);
    });
    auto normalized = in_stage("normalize", "", [&] {
      const auto v = volumes_of(all);
      return znormalize(v, *manifest.normalize_stats);
    });
    for (std::size_t i = 0; i < all.size(); ++i) all[i]->volume = std::move(normalized[i]);
    manifest.normalized = in_stage("stats", "", [&] {
      const auto v = volumes_of(all);
      return compute_stats(v, report_pcts);
    });
  }

  // resample, then write each case.
  manifest.outputs.resize(all.size());
  parallel_for(all.size(), [&](std::size_t i) {
    Case& c = *all[i];
    if (config.has(Stage::resample)) {
      in_stage("resample", c.id, [&] {
        c.volume = resample_volume(*c.volume, config.resample);
        if (c.labels) c.labels = resample_labels(*c.labels, config.resample);
      });
    }
    in_stage("write", c.id, [&] {
      OutputRecord& r = manifest.outputs[i];
      r.case_id = c.id;
      r.role = c.role;
      r.map = c.map_file;
      r.dims = c.volume->geometry().dims;
      r.spacing = c.volume->geometry().spacing;
      const nifti::VolumeWriteOptions opts{config.output_datatype, std::nullopt};
      r.volume = "volumes/" + c.id + ".nii.gz";
      r.volume_sha256 = sha256_hex(nifti::stored_data(*c.volume, opts));
      nifti::write_volume(*c.volume, staging / r.volume, opts);
      if (c.labels) {
        r.labels = "labels/" + c.id + ".nii.gz";
        r.labels_sha256 = sha256_hex(nifti::stored_data(*c.labels, config.label_datatype));
        nifti::write_labels(*c.labels, staging / r.labels, config.label_datatype);
      }
      c.volume.reset();
      c.labels.reset();
    });
  });
  std::sort(manifest.outputs.begin(), manifest.outputs.end(),
            [](const OutputRecord& a, const OutputRecord& b) { return a.case_id < b.case_id; });

  in_stage("write", "", [&] {
    write_text(staging / "manifest.json", manifest.to_json());
    promote(staging, config.output_dir);
  });
  spdlog::info("pipeline: wrote {} cases to {}", manifest.outputs.size(), config.output_dir.string());
  return manifest;
}

}  // namespace voxharm
