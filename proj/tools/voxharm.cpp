// voxharm command-line front end.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "voxharm/analysis.hpp"
#include "voxharm/error.hpp"
#include "voxharm/evaluation.hpp"
#include "voxharm/histogram.hpp"
#include "voxharm/nifti.hpp"
#include "voxharm/parallel.hpp"
#include "voxharm/phantom.hpp"
#include "voxharm/pipeline.hpp"
#include "voxharm/resample.hpp"
#include "voxharm/stats.hpp"
#include "voxharm/transforms.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace voxharm;

namespace {

struct Common {
  unsigned threads = 0;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--threads", common.threads, "Worker threads (0: VOXHARM_THREADS or all cores)");
  cmd->add_option("--seed", common.seed, "Seed for stochastic steps");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot create '{}'", path.string()));
  out << text;
}

bool is_nifti(const fs::path& p) {
  const auto name = p.filename().string();
  return name.ends_with(".nii") || name.ends_with(".nii.gz");
}

// Files named by each argument: a directory (its NIfTI files), a pattern with
// wildcards in the file name, or a plain file.
std::vector<fs::path> expand(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && is_nifti(e.path())) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (a.find_first_of("*?[") != std::string::npos) {
      const auto dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
      const auto found = glob_files(dir, p.filename().string());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  if (out.empty()) throw Error(ErrorKind::empty_input, "no input files matched");
  return out;
}

std::vector<Volume> load_volumes(const std::vector<fs::path>& paths) {
  std::vector<std::optional<Volume>> slots(paths.size());
  parallel_for(paths.size(), [&](std::size_t i) { slots[i] = nifti::read_volume(paths[i]); });
  std::vector<Volume> out;
  out.reserve(slots.size());
  for (auto& v : slots) out.push_back(std::move(*v));
  return out;
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

Vec3 parse_triple(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::invalid_argument, fmt::format("bad number '{}' in '{}'", item, text));
    }
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() != 3)
    throw Error(ErrorKind::invalid_argument, fmt::format("expected a or a,b,c, got '{}'", text));
  return {v[0], v[1], v[2]};
}

Vocabulary vocabulary_from_json(const std::string& text) {
  Vocabulary v;
  try {
    for (const auto& [key, value] : nlohmann::json::parse(text).items())
      v.emplace(static_cast<Label>(std::stoul(key)), value.get<std::string>());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::format, fmt::format("bad vocabulary: {}", e.what()));
  }
  return v;
}

// ---------------------------------------------------------------------------

int cmd_stats(const std::vector<std::string>& inputs, const std::vector<double>& pcts) {
  const auto volumes = load_volumes(expand(inputs));
  const auto s = compute_stats(std::span<const Volume>(volumes), pcts);
  std::cout << stats_json(s).dump(2) << "\n";
  return 0;
}

int cmd_histogram(const std::vector<std::string>& inputs, std::size_t bins,
                  const std::string& range, const fs::path& out, bool per_volume, bool json) {
  const auto paths = expand(inputs);
  const auto volumes = load_volumes(paths);
  double lo = 0.0, hi = 0.0;
  if (!range.empty()) {
    const auto comma = range.find(',');
    if (comma == std::string::npos)
      throw Error(ErrorKind::invalid_argument, "--range expects lo,hi");
    lo = std::stod(range.substr(0, comma));
    hi = std::stod(range.substr(comma + 1));
  } else {
    const auto s = compute_stats(std::span<const Volume>(volumes));
    lo = s.min;
    hi = s.max > s.min ? s.max : s.min + 1.0;
  }
  HistogramSet set;
  if (per_volume) {
    for (std::size_t i = 0; i < volumes.size(); ++i)
      set.emplace(case_stem(paths[i]), build_histogram(std::span<const Volume>(&volumes[i], 1), lo, hi, bins));
  } else {
    set.emplace("pooled", build_histogram(std::span<const Volume>(volumes), lo, hi, bins));
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  emit_plot_data(set, out, json);
  return 0;
}

int cmd_harmonize(const std::string& method, const std::string& source_dir,
                  const std::string& reference_dir, const fs::path& out_dir, std::size_t bins,
                  const std::string& mode, double fraction, std::uint64_t seed) {
  const auto src_paths = expand({source_dir});
  const auto ref_paths = expand({reference_dir});
  const auto src = load_volumes(src_paths);
  const auto ref = load_volumes(ref_paths);
  const auto src_ptr = pointers_to(src);
  const auto ref_ptr = pointers_to(ref);

  std::vector<IntensityMap> maps;
  std::vector<std::string> map_names;
  if (method == "shift") {
    const auto m = fit_moment_shift(compute_stats(src_ptr), compute_stats(ref_ptr));
    maps.assign(src.size(), m);
    map_names.assign(src.size(), "moment_shift.json");
  } else if (method == "match") {
    HistogramMatchOptions opts;
    opts.bins = bins;
    opts.mode = mode == "pooled" ? MatchMode::pooled : MatchMode::per_volume;
    opts.reference_fraction = fraction;
    opts.seed = seed;
    maps = fit_histogram_match(src_ptr, ref_ptr, opts);
    for (const auto& p : src_paths)
      map_names.push_back(opts.mode == MatchMode::pooled ? "histogram_match.json" : case_stem(p) + ".json");
  } else {
    throw Error(ErrorKind::invalid_argument, fmt::format("unknown method '{}'", method));
  }

  fs::create_directories(out_dir / "volumes");
  fs::create_directories(out_dir / "maps");
  std::vector<std::optional<Volume>> mapped(src.size());
  parallel_for(src.size(), [&](std::size_t i) {
    mapped[i] = apply_map(src[i], maps[i]);
    nifti::write_volume(*mapped[i], out_dir / "volumes" / (case_stem(src_paths[i]) + ".nii.gz"));
  });
  for (std::size_t i = 0; i < maps.size(); ++i) maps[i].save(out_dir / "maps" / map_names[i]);

  std::vector<const Volume*> after;
  for (const auto& v : mapped) after.push_back(&*v);
  const auto rs = compute_stats(ref_ptr);
  const auto ss = compute_stats(src_ptr);
  const auto as = compute_stats(after);
  const double lo = std::min({rs.min, ss.min, as.min});
  const double hi = std::max({rs.max, ss.max, as.max});
  const auto href = build_histogram(ref_ptr, lo, hi, 4096);
  ordered_json j;
  j["method"] = method;
  j["ks_before"] = cdf_distance(build_histogram(src_ptr, lo, hi, 4096), href).ks;
  j["ks_after"] = cdf_distance(build_histogram(after, lo, hi, 4096), href).ks;
  j["source_after"] = stats_json(as);
  j["reference"] = stats_json(rs);
  std::cout << j.dump(2) << "\n";
  return 0;
}

void print_manifest_summary(const Manifest& m, const fs::path& out) {
  ordered_json j;
  j["output"] = out.generic_string();
  j["cases"] = m.outputs.size();
  j["harmonization"] = m.harmonization;
  if (m.normalized) j["normalized"] = {{"mean", m.normalized->mean}, {"std", m.normalized->std}};
  std::cout << j.dump() << "\n";
}

int cmd_run(const fs::path& config_path, bool harmonize, const std::string& target_dir,
            const std::string& source_dir, const std::string& out_dir,
            std::optional<std::uint64_t> seed) {
  auto config = load_config(config_path);
  if (!target_dir.empty()) config.target.dir = target_dir;
  if (!source_dir.empty()) {
    if (!config.source) throw Error(ErrorKind::config, "config has no source dataset to override");
    config.source->dir = source_dir;
  }
  if (!out_dir.empty()) config.output_dir = out_dir;
  if (seed) {
    config.seed = *seed;
    config.histogram.seed = *seed;
  }
  if (!harmonize) std::erase(config.stages, Stage::harmonize);
  const auto manifest = run_pipeline(config);
  print_manifest_summary(manifest, config.output_dir);
  return 0;
}

int cmd_remap(const fs::path& map_path, const std::vector<std::string>& inputs,
              const fs::path& out_dir, const std::string& vocab_path, bool strict) {
  const auto remap = LabelRemap::from_json(read_text(map_path));
  const Vocabulary vocab = vocab_path.empty() ? kits_vocabulary() : vocabulary_from_json(read_text(vocab_path));
  const auto paths = expand(inputs);
  fs::create_directories(out_dir);
  parallel_for(paths.size(), [&](std::size_t i) {
    const auto labels = nifti::read_labels(paths[i]);
    const auto out = remap_labels(labels, remap, vocab, strict);
    nifti::write_labels(out, out_dir / (case_stem(paths[i]) + ".nii.gz"));
  });
  return 0;
}

int cmd_resample(const std::vector<std::string>& inputs, const fs::path& out_dir,
                 const std::string& spacing, int order, bool labels) {
  ResampleSpec spec;
  spec.target_spacing = parse_triple(spacing);
  spec.intensity_order = order;
  spec.label_order = labels ? order : 0;
  validate(spec);
  const auto paths = expand(inputs);
  fs::create_directories(out_dir);
  for (const auto& p : paths) {
    const auto dst = out_dir / (case_stem(p) + ".nii.gz");
    if (labels)
      nifti::write_labels(resample_labels(nifti::read_labels(p), spec), dst);
    else
      nifti::write_volume(resample_volume(nifti::read_volume(p), spec), dst);
  }
  return 0;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir,
                 const std::string& regions_path, const fs::path& out, const std::string& csv,
                 const std::string& policy) {
  const auto regions = regions_path.empty() ? default_regions() : regions_from_json(read_text(regions_path));
  const auto pred_paths = expand({pred_dir});
  std::map<std::string, fs::path> gt;
  for (const auto& p : expand({gt_dir})) gt.emplace(case_stem(p), p);

  std::vector<std::optional<EvalCase>> slots(pred_paths.size());
  parallel_for(pred_paths.size(), [&](std::size_t i) {
    const auto id = case_stem(pred_paths[i]);
    const auto it = gt.find(id);
    if (it == gt.end())
      throw Error(ErrorKind::empty_input, fmt::format("no ground truth for prediction '{}'", id));
    slots[i] = EvalCase{id, nifti::read_labels(pred_paths[i]), nifti::read_labels(it->second)};
  });
  std::vector<EvalCase> cases;
  for (auto& c : slots) cases.push_back(std::move(*c));
  if (cases.size() != gt.size())
    spdlog::warn("evaluate: {} ground-truth files have no prediction", gt.size() - cases.size());

  EmptyPolicy p = EmptyPolicy::undefined;
  if (policy == "score_one") p = EmptyPolicy::score_one;
  else if (policy != "undefined")
    throw Error(ErrorKind::invalid_argument, fmt::format("unknown empty policy '{}'", policy));

  const auto report = evaluate_dataset(cases, regions, p);
  write_text(out, report.to_json());
  if (!csv.empty()) write_text(csv, report.to_csv());

  for (const auto& name : report.region_order) {
    const auto& score = report.aggregate.at(name);
    if (score)
      std::cout << fmt::format("{:<16} {:.6f}  ({:.6f})\n", name, *score, *score * 100.0);
    else
      std::cout << fmt::format("{:<16} undefined\n", name);
  }
  return 0;
}

int cmd_phantom(const std::string& spec_arg, const fs::path& out_dir, std::size_t count,
                std::optional<std::uint64_t> seed, bool dump) {
  PhantomSpec spec;
  if (spec_arg == "target") spec = default_target_phantom();
  else if (spec_arg == "source") spec = default_source_phantom();
  else spec = phantom_from_json(read_text(spec_arg));
  if (count > 0) spec.count = count;
  if (seed) spec.seed = *seed;
  if (dump) {
    std::cout << to_json(spec);
    return 0;
  }
  if (out_dir.empty()) throw Error(ErrorKind::invalid_argument, "--out is required");
  write_phantoms(spec, out_dir);
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int fail(std::string_view kind, const std::string& message, const std::string& stage = {},
         const std::string& case_id = {}) {
  ordered_json j;
  j["error"] = kind;
  if (!stage.empty()) j["stage"] = stage;
  if (!case_id.empty()) j["case"] = case_id;
  j["message"] = one_line(message);
  std::cerr << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
  return 1;
}

struct Options {
  std::vector<std::string> inputs;
  std::vector<double> pcts{0.5, 50.0, 99.5};
  std::size_t bins = 4096;
  std::string range, out, method, source, reference, mode = "per_volume";
  bool per_volume = false, json = false, strict = false, labels = false, dump = false;
  double fraction = 1.0;
  std::string config, target_dir, source_dir;
  std::string map, vocab;
  std::string spacing = "0.7636,0.7636,0.7636";
  int order = 3;
  std::string pred, gt, regions, csv, policy = "undefined";
  std::string spec;
  std::size_t count = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxharm: CT intensity harmonisation and evaluation"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  Common common;
  Options o;
  std::function<int()> action;

  {
    auto* c = app.add_subcommand("stats", "Pooled statistics of a set of volumes");
    add_common(c, common);
    c->add_option("inputs", o.inputs, "Files, directories or patterns")->required();
    c->add_option("--percentiles", o.pcts, "Percentiles to report")->delimiter(',');
    c->callback([&] { action = [&] { return cmd_stats(o.inputs, o.pcts); }; });
  }
  {
    auto* c = app.add_subcommand("histogram", "Histogram plot data (CSV, optional JSON mirror)");
    add_common(c, common);
    c->add_option("inputs", o.inputs, "Files, directories or patterns")->required();
    c->add_option("--bins", o.bins, "Bin count")->check(CLI::PositiveNumber);
    c->add_option("--range", o.range, "lo,hi (default: data range)");
    c->add_option("--out", o.out, "CSV path")->required();
    c->add_flag("--per-volume", o.per_volume, "One series per file instead of a pooled series");
    c->add_flag("--json", o.json, "Also write a .json mirror");
    c->callback([&] {
      action = [&] { return cmd_histogram(o.inputs, o.bins, o.range, o.out, o.per_volume, o.json); };
    });
  }
  {
    auto* c = app.add_subcommand("harmonize", "Fit and apply a harmonisation map");
    add_common(c, common);
    c->add_option("--method", o.method, "shift|match")->required()->check(CLI::IsMember({"shift", "match"}));
    c->add_option("--source", o.source, "Source volumes (directory or pattern)")->required();
    c->add_option("--reference", o.reference, "Reference volumes (directory or pattern)")->required();
    c->add_option("--out", o.out, "Output directory")->required();
    c->add_option("--bins", o.bins, "Histogram bins for matching")->check(CLI::PositiveNumber);
    c->add_option("--mode", o.mode, "per_volume|pooled")->check(CLI::IsMember({"per_volume", "pooled"}));
    c->add_option("--reference-fraction", o.fraction, "Reference subsampling fraction");
    c->callback([&] {
      action = [&] {
        return cmd_harmonize(o.method, o.source, o.reference, o.out, o.bins, o.mode, o.fraction,
                             common.seed.value_or(0));
      };
    });
  }
  for (const bool full : {false, true}) {
    auto* c = full ? app.add_subcommand("run", "Full pipeline from a config file")
                   : app.add_subcommand("preprocess", "Pipeline without harmonisation");
    add_common(c, common);
    c->add_option("--config", o.config, "Pipeline config (JSON)")->required();
    c->add_option("--target-dir", o.target_dir, "Override the target dataset directory");
    c->add_option("--source-dir", o.source_dir, "Override the source dataset directory");
    c->add_option("--out", o.out, "Override the output directory");
    c->callback([&, full] {
      action = [&, full] {
        return cmd_run(o.config, full, o.target_dir, o.source_dir, o.out, common.seed);
      };
    });
  }
  {
    auto* c = app.add_subcommand("remap", "Relabel label maps");
    add_common(c, common);
    c->add_option("--map", o.map, "Label remap (JSON)")->required();
    c->add_option("inputs", o.inputs, "Label files, directories or patterns")->required();
    c->add_option("--out", o.out, "Output directory")->required();
    c->add_option("--vocab", o.vocab, "Target vocabulary JSON (default kidney/tumor/cyst)");
    c->add_flag("--strict", o.strict, "Require every source label to be listed");
    c->callback([&] { action = [&] { return cmd_remap(o.map, o.inputs, o.out, o.vocab, o.strict); }; });
  }
  {
    auto* c = app.add_subcommand("resample", "Resample volumes or label maps");
    add_common(c, common);
    c->add_option("inputs", o.inputs, "Files, directories or patterns")->required();
    c->add_option("--out", o.out, "Output directory")->required();
    c->add_option("--spacing", o.spacing, "Target spacing a,b,c in mm");
    c->add_option("--order", o.order, "0, 1 or 3")->check(CLI::IsMember({0, 1, 3}));
    c->add_flag("--labels", o.labels, "Inputs are label maps (nearest neighbour)");
    c->callback([&] {
      action = [&] { return cmd_resample(o.inputs, o.out, o.spacing, o.order, o.labels); };
    });
  }
  {
    auto* c = app.add_subcommand("evaluate", "Region Dice of predictions against ground truth");
    add_common(c, common);
    c->add_option("--pred", o.pred, "Prediction label maps")->required();
    c->add_option("--gt", o.gt, "Ground-truth label maps")->required();
    c->add_option("--regions", o.regions, "Region definitions (JSON); default: the five kidney regions");
    c->add_option("--out", o.out, "Report JSON")->required();
    c->add_option("--csv", o.csv, "Per-case CSV");
    c->add_option("--empty", o.policy, "undefined|score_one")
        ->check(CLI::IsMember({"undefined", "score_one"}));
    c->callback([&] {
      action = [&] { return cmd_evaluate(o.pred, o.gt, o.regions, o.out, o.csv, o.policy); };
    });
  }
  {
    auto* c = app.add_subcommand("phantom", "Generate synthetic phantoms");
    add_common(c, common);
    c->add_option("--spec", o.spec, "Spec JSON, or 'target' / 'source' for the presets")->required();
    c->add_option("--out", o.out, "Output directory");
    c->add_option("--count", o.count, "Override the volume count");
    c->add_flag("--print-spec", o.dump, "Print the resolved spec and exit");
    c->callback([&] { action = [&] { return cmd_phantom(o.spec, o.out, o.count, common.seed, o.dump); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    fail("usage", e.what());
    return 2;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("voxharm"));
  spdlog::set_level(spdlog::level::from_str(log_level));
  if (common.threads > 0) set_default_threads(common.threads);

  try {
    return action();
  } catch (const StageError& e) {
    return fail(to_string(e.kind()), e.what(), e.stage(), e.case_id());
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
