#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "voxharm/nifti.hpp"
#include "voxharm/resample.hpp"
#include "voxharm/stats.hpp"
#include "voxharm/transforms.hpp"
#include "voxharm/volume.hpp"

namespace voxharm {

/// One input dataset. Globs are "<subdir>/<pattern>" relative to dir; only the
/// final path component may contain wildcards. Cases pair volumes and labels
/// by file stem.
struct DatasetConfig {
  std::string name;
  std::filesystem::path dir;
  std::string volumes = "volumes/*.nii.gz";
  std::string labels = "labels/*.nii.gz";  // empty: no labels
  Vocabulary vocabulary;
};

enum class Harmonization { none, moment_shift, histogram_match };

/// The fixed stage order. A config may omit stages but never reorder them.
enum class Stage { remap, harmonize, clip, normalize, resample };

std::string_view to_string(Stage stage) noexcept;
std::string_view to_string(Harmonization method) noexcept;

struct PipelineConfig {
  DatasetConfig target;
  std::optional<DatasetConfig> source;  // the dataset that gets harmonised

  std::vector<Stage> stages{Stage::remap, Stage::harmonize, Stage::clip, Stage::normalize,
                            Stage::resample};

  LabelRemap label_remap;  // applied to source labels, into target.vocabulary
  Harmonization harmonization = Harmonization::none;
  HistogramMatchOptions histogram;

  double clip_lo_pct = 0.5;
  double clip_hi_pct = 99.5;
  ClipMode clip_mode = ClipMode::pooled;
  bool foreground_stats = false;  // clip/normalize statistics over labelled voxels only

  ResampleSpec resample;

  std::filesystem::path output_dir;
  nifti::Datatype output_datatype = nifti::Datatype::float32;
  nifti::Datatype label_datatype = nifti::Datatype::uint8;

  std::uint64_t seed = 0;

  bool has(Stage s) const noexcept;
};

/// Checks stage order, percentages, harmonisation prerequisites and that the
/// output directory is not one of the inputs.
void validate(const PipelineConfig& config);

/// Parses a JSON config. Relative paths resolve against base_dir.
PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
std::string to_json(const PipelineConfig& config);

struct OutputRecord {
  std::string case_id;
  std::string role;  // "target" or "source"
  std::string volume;
  std::string labels;  // empty without labels
  std::string volume_sha256;
  std::string labels_sha256;
  std::string map;  // fitted harmonisation map, if any
  Index3 dims{};
  Vec3 spacing{};
};

struct Manifest {
  std::vector<Stage> stages;
  std::string harmonization;
  std::optional<DatasetStats> target_raw;
  std::optional<DatasetStats> source_raw;
  std::optional<DatasetStats> source_harmonized;
  std::optional<DatasetStats> clipped;     // pooled, after clipping
  std::optional<DatasetStats> normalized;  // pooled, after z-normalisation
  std::vector<std::pair<double, double>> clip_thresholds;
  std::optional<DatasetStats> normalize_stats;  // the moments that were divided out
  std::vector<std::string> maps;
  std::vector<OutputRecord> outputs;
  std::uint64_t seed = 0;
  std::string config_json;

  std::string to_json() const;
};

/// Runs remap -> harmonize -> clip -> normalize -> resample and writes
///   <out>/volumes/<case>.nii.gz, <out>/labels/<case>.nii.gz,
///   <out>/maps/*.json, <out>/manifest.json
/// Outputs are staged in "<out>.staging" and moved into place on success.
/// Failures raise StageError naming the stage and case.
Manifest run_pipeline(const PipelineConfig& config);

/// Files of dir matching a "<subdir>/<pattern>" glob, sorted.
std::vector<std::filesystem::path> glob_files(const std::filesystem::path& dir,
                                              std::string_view pattern);

/// File name without ".nii" / ".nii.gz".
std::string case_stem(const std::filesystem::path& path);

/// dataset1 (moment shift) and dataset2 (histogram match) presets.
PipelineConfig dataset1_preset();
PipelineConfig dataset2_preset();

}  // namespace voxharm
