#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "voxharm/digest.hpp"
#include "voxharm/error.hpp"
#include "voxharm/evaluation.hpp"
#include "voxharm/nifti.hpp"
#include "voxharm/parallel.hpp"
#include "voxharm/phantom.hpp"
#include "voxharm/pipeline.hpp"

using namespace voxharm;
using namespace voxharm::test;
namespace fs = std::filesystem;

namespace {

PhantomSpec small(PhantomSpec s, std::size_t count) {
  s.count = count;
  s.dims = {20, 18, 12};
  for (auto& c : s.classes)
    for (int a = 0; a < 3; ++a) {
      c.center[a] = {4.0, 8.0};
      c.radius[a] = {2.0, 4.0};
    }
  return s;
}

// Writes small target and source phantom sets under root and returns a config
// over them with every stage enabled.
PipelineConfig fixture(const TempDir& root) {
  const auto t = small(default_target_phantom(), 3);
  const auto s = small(default_source_phantom(), 2);
  write_phantoms(t, root / "target");
  write_phantoms(s, root / "source");
  PipelineConfig c;
  c.target = {"tgt", root / "target", "volumes/*.nii.gz", "labels/*.nii.gz", t.vocabulary()};
  c.source = DatasetConfig{"src", root / "source", "volumes/*.nii.gz", "labels/*.nii.gz", s.vocabulary()};
  c.label_remap.mapping = {{3, 0}, {4, 0}};
  c.harmonization = Harmonization::moment_shift;
  c.resample.target_spacing = {1.2, 1.2, 1.2};
  c.output_dir = root / "out";
  return c;
}

std::vector<double> as_vector(const Volume& v) { return {v.data().begin(), v.data().end()}; }

}  // namespace

TEST(Pipeline, IdentityStagesReproduceInputs) {
  TempDir root;
  auto c = fixture(root);
  c.source.reset();
  c.stages = {Stage::remap, Stage::harmonize, Stage::clip};
  c.harmonization = Harmonization::none;
  c.clip_lo_pct = 0.0;
  c.clip_hi_pct = 100.0;
  const auto m = run_pipeline(c);
  ASSERT_EQ(m.outputs.size(), 3u);
  for (const auto& o : m.outputs) {
    const auto stem = o.case_id.substr(4);
    const auto in = nifti::read_volume(root / "target" / "volumes" / (stem + ".nii.gz"));
    const auto out = nifti::read_volume(c.output_dir / o.volume);
    EXPECT_EQ(as_vector(in), as_vector(out)) << o.case_id;
    EXPECT_EQ(in.geometry(), out.geometry());
    const auto lin = nifti::read_labels(root / "target" / "labels" / (stem + ".nii.gz"));
    const auto lout = nifti::read_labels(c.output_dir / o.labels);
    EXPECT_TRUE(std::equal(lin.data().begin(), lin.data().end(), lout.data().begin()));
  }

  // Native-spacing resampling is the identity up to interpolation round-off.
  c.stages = {Stage::resample};
  // The spacing as stored (float32), so the grid ratio is exactly one.
  c.resample.target_spacing =
      nifti::read_volume(root / "target" / "volumes" / "kits_0000.nii.gz").geometry().spacing;
  const auto r = run_pipeline(c);
  for (const auto& o : r.outputs) {
    const auto in = nifti::read_volume(root / "target" / "volumes" / (o.case_id.substr(4) + ".nii.gz"));
    const auto out = nifti::read_volume(c.output_dir / o.volume);
    ASSERT_EQ(in.size(), out.size());
    for (std::size_t i = 0; i < in.size(); ++i)
      ASSERT_NEAR(out.data()[i], in.data()[i], 1e-6 * std::max(1.0, std::abs(in.data()[i])));
  }
}

TEST(Pipeline, RejectsReorderedStages) {
  TempDir root;
  auto c = fixture(root);
  c.stages = {Stage::normalize, Stage::clip};
  try {
    run_pipeline(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_EQ(e.stage(), "validate");
  }
  EXPECT_FALSE(fs::exists(c.output_dir));
}

TEST(Pipeline, OutputMustDifferFromInputs) {
  TempDir root;
  auto c = fixture(root);
  c.output_dir = root / "source";
  EXPECT_THROW(validate(c), Error);
  c.output_dir = root / "target" / ".." / "target";
  EXPECT_THROW(validate(c), Error);
}

TEST(Pipeline, FailureNamesStageAndCase) {
  TempDir root;
  auto c = fixture(root);
  std::ofstream(root / "source" / "volumes" / "kipa_0001.nii.gz", std::ios::binary | std::ios::trunc)
      << "definitely not gzip";
  try {
    run_pipeline(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "load");
    EXPECT_EQ(e.case_id(), "src_kipa_0001");
  }
  EXPECT_FALSE(fs::exists(c.output_dir));
}

TEST(Pipeline, MissingLabelFileIsReported) {
  TempDir root;
  auto c = fixture(root);
  fs::remove(root / "target" / "labels" / "kits_0002.nii.gz");
  try {
    run_pipeline(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "load");
    EXPECT_EQ(e.case_id(), "tgt_kits_0002");
  }
}

TEST(Pipeline, StagingReplacesPreviousOutputAtomically) {
  TempDir root;
  auto c = fixture(root);
  run_pipeline(c);
  std::ofstream(c.output_dir / "stale.txt") << "x";
  run_pipeline(c);
  EXPECT_FALSE(fs::exists(c.output_dir / "stale.txt"));
  EXPECT_FALSE(fs::exists(c.output_dir.string() + ".staging"));
  EXPECT_FALSE(fs::exists(c.output_dir.string() + ".previous"));

  // A failing run leaves the last good output in place.
  const auto before = fs::last_write_time(c.output_dir / "manifest.json");
  c.clip_mode = ClipMode::pooled;
  std::ofstream(root / "target" / "volumes" / "kits_0000.nii.gz", std::ios::trunc) << "bad";
  EXPECT_THROW(run_pipeline(c), StageError);
  EXPECT_EQ(fs::last_write_time(c.output_dir / "manifest.json"), before);
}

TEST(Pipeline, DeterministicAcrossThreadCounts) {
  TempDir root;
  auto c = fixture(root);
  c.harmonization = Harmonization::histogram_match;
  c.histogram.bins = 512;
  c.histogram.reference_fraction = 0.5;
  set_default_threads(1);
  const auto a = run_pipeline(c).to_json();
  set_default_threads(4);
  const auto b = run_pipeline(c).to_json();
  set_default_threads(0);
  EXPECT_EQ(a, b);
}

TEST(Pipeline, ManifestRecordsRun) {
  TempDir root;
  auto c = fixture(root);
  c.seed = 77;
  const auto m = run_pipeline(c);
  const auto j = nlohmann::json::parse(std::ifstream(c.output_dir / "manifest.json"));
  EXPECT_EQ(j["seed"], 77);
  EXPECT_EQ(j["harmonization"], "moment_shift");
  EXPECT_EQ(j["stages"].size(), 5u);
  EXPECT_EQ(j["maps"], nlohmann::json::array({"maps/moment_shift.json"}));
  EXPECT_TRUE(fs::exists(c.output_dir / "maps/moment_shift.json"));
  EXPECT_EQ(j["clip_thresholds"].size(), 1u);
  ASSERT_EQ(j["outputs"].size(), 5u);

  std::vector<std::string> ids;
  for (const auto& o : m.outputs) {
    ids.push_back(o.case_id);
    const auto v = nifti::read_volume(c.output_dir / o.volume);
    EXPECT_EQ(sha256_hex(nifti::stored_data(v)), o.volume_sha256);
    EXPECT_EQ(v.geometry().dims, o.dims);
    EXPECT_EQ(o.map.empty(), o.role == "target");
    const auto l = nifti::read_labels(c.output_dir / o.labels);
    EXPECT_EQ(sha256_hex(nifti::stored_data(l, nifti::Datatype::uint8)), o.labels_sha256);
  }
  EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));

  // Harmonised source moments equal the target's.
  EXPECT_NEAR(m.source_harmonized->mean, m.target_raw->mean, 1e-6 * std::abs(m.target_raw->mean));
  EXPECT_NEAR(m.source_harmonized->std, m.target_raw->std, 1e-6 * m.target_raw->std);
  EXPECT_NEAR(m.normalized->mean, 0.0, 1e-9);
  EXPECT_NEAR(m.normalized->std, 1.0, 1e-9);
}

TEST(Pipeline, RemapDropsForeignLabels) {
  TempDir root;
  auto c = fixture(root);
  c.stages = {Stage::remap};
  const auto m = run_pipeline(c);
  for (const auto& o : m.outputs) {
    const auto l = nifti::read_labels(c.output_dir / o.labels);
    std::set<Label> present(l.data().begin(), l.data().end());
    for (Label x : present) EXPECT_LE(x, o.role == "source" ? 2 : 3) << o.case_id;
  }
}

TEST(Pipeline, ForegroundStatsNeedLabels) {
  TempDir root;
  auto c = fixture(root);
  c.target.labels.clear();
  c.source.reset();
  c.harmonization = Harmonization::none;
  c.foreground_stats = true;
  try {
    run_pipeline(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Config, JsonRoundTrip) {
  TempDir root;
  auto c = fixture(root);
  c.harmonization = Harmonization::histogram_match;
  c.histogram.bins = 1024;
  c.histogram.mode = MatchMode::pooled;
  c.clip_lo_pct = 1.0;
  c.seed = 5;
  const auto text = to_json(c);
  const auto back = parse_config(text);
  EXPECT_EQ(to_json(back), text);
  EXPECT_EQ(back.label_remap.mapping, c.label_remap.mapping);
  EXPECT_EQ(back.histogram.bins, 1024u);
}

TEST(Config, ParsesRelativePathsAndRejectsJunk) {
  const auto c = parse_config(R"({
    "target": {"name": "t", "dir": "data/t"},
    "source": {"name": "s", "dir": "data/s"},
    "stages": ["remap", "harmonize", "normalize"],
    "harmonization": {"method": "moment_shift"},
    "clip": null,
    "output": {"dir": "out"}
  })", "/base");
  EXPECT_EQ(c.target.dir, fs::path("/base/data/t"));
  EXPECT_EQ(c.output_dir, fs::path("/base/out"));
  EXPECT_FALSE(c.has(Stage::clip));
  EXPECT_TRUE(c.has(Stage::normalize));
  EXPECT_THROW(parse_config("{", "/"), Error);
  EXPECT_THROW(parse_config(R"({"target": {"name": "t", "dir": "x"}, "stages": ["bogus"], "output": {"dir": "o"}})", "/"),
               Error);
}

TEST(Config, PresetFilesParse) {
  for (const char* name : {"dataset1.json", "dataset2.json"}) {
    const auto c = load_config(fs::path(VOXHARM_PRESETS) / name);
    EXPECT_NO_THROW(validate(c)) << name;
    EXPECT_TRUE(c.source.has_value());
  }
  EXPECT_EQ(load_config(fs::path(VOXHARM_PRESETS) / "dataset1.json").harmonization,
            Harmonization::moment_shift);
  EXPECT_EQ(load_config(fs::path(VOXHARM_PRESETS) / "dataset2.json").harmonization,
            Harmonization::histogram_match);
}

TEST(Glob, MatchesAndSorts) {
  TempDir root;
  fs::create_directories(root / "v");
  for (const char* f : {"b.nii.gz", "a.nii.gz", "c.nii", "notes.txt"}) std::ofstream(root / "v" / f) << "";
  const auto all = glob_files(root.path(), "v/*.nii*");
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0].filename(), "a.nii.gz");
  EXPECT_EQ(case_stem(all[0]), "a");
  EXPECT_EQ(case_stem(all[2]), "c");
  EXPECT_TRUE(glob_files(root.path(), "v/*.mha").empty());
}
