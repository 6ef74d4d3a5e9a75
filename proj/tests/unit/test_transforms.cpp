#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "voxharm/analysis.hpp"
#include "voxharm/error.hpp"
#include "voxharm/histogram.hpp"
#include "voxharm/stats.hpp"
#include "voxharm/transforms.hpp"

using namespace voxharm;
using namespace voxharm::test;

namespace {

DatasetStats moments(double mean, double sd) {
  DatasetStats s;
  s.mean = mean;
  s.std = sd;
  return s;
}

Histogram filled(double lo, double hi, std::size_t bins, std::uint64_t per_bin) {
  const auto u = Histogram::uniform(lo, hi, bins);
  return Histogram(std::vector<double>(u.edges().begin(), u.edges().end()),
                   std::vector<std::uint64_t>(bins, per_bin));
}

// Bimodal samples: the shape an affine map cannot fix.
std::vector<double> bimodal(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> a(-1000.0, 40.0), b(20.0, 60.0);
  std::bernoulli_distribution pick(0.45);
  std::vector<double> v(n);
  for (auto& x : v) x = pick(rng) ? a(rng) : b(rng);
  return v;
}

Histogram histogram_of(std::span<const double> v, std::size_t bins) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  auto h = Histogram::uniform(*lo, *hi, bins);
  h.add(v);
  return h;
}

}  // namespace

// --- moment shift -----------------------------------------------------------

TEST(MomentShift, AnalyticAffine) {
  const auto m = fit_moment_shift(moments(1.0, 1.0), moments(0.0, 2.0));
  EXPECT_DOUBLE_EQ(m(0.0), -2.0);
  EXPECT_DOUBLE_EQ(m(2.0), 2.0);
  EXPECT_DOUBLE_EQ(m(-100.0), -202.0);  // linear beyond the breakpoints
  EXPECT_EQ(m.policy(), Extrapolation::linear);
}

TEST(MomentShift, IdentityWhenStatsEqual) {
  const auto m = fit_moment_shift(moments(40.0, 300.0), moments(40.0, 300.0));
  for (double x : {-3000.0, -1.5, 40.0, 340.0, 1e5}) EXPECT_DOUBLE_EQ(m(x), x);
}

TEST(MomentShift, RecomputedMomentsMatchTarget) {
  std::vector<Volume> vols;
  for (std::uint64_t i = 0; i < 10; ++i) vols.push_back(random_volume(geom(16, 16, 16), i, 1100.0 + 10.0 * i, 120.0));
  const auto src = compute_stats(std::span<const Volume>(vols));
  const auto m = fit_moment_shift(src, moments(-200.0, 450.0));
  std::vector<Volume> out;
  for (const auto& v : vols) out.push_back(apply_map(v, m));
  const auto s = compute_stats(std::span<const Volume>(out));
  EXPECT_NEAR(s.mean, -200.0, 1e-9 * 200.0);
  EXPECT_NEAR(s.std, 450.0, 1e-9 * 450.0);
}

TEST(MomentShift, RejectsDegenerateSource) {
  EXPECT_THROW(fit_moment_shift(moments(1.0, 0.0), moments(0.0, 1.0)), Error);
  EXPECT_THROW(fit_moment_shift(moments(1.0, NAN), moments(0.0, 1.0)), Error);
}

// --- histogram matching -----------------------------------------------------

TEST(HistogramMatch, UniformToUniform) {
  const auto src = filled(0.0, 1.0, 256, 100);
  const auto ref = filled(10.0, 20.0, 256, 100);
  const auto m = fit_histogram_match(src, ref);
  const double width = ref.width(0);
  for (int k = 0; k < 100; ++k) {
    const double x = (k + 0.5) / 100.0;
    EXPECT_NEAR(m(x), 10.0 + 10.0 * x, width) << x;
  }
}

TEST(HistogramMatch, SelfMatchMovesNoSampleMoreThanOneBin) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto v = bimodal(seed, 50000);
    const auto h = histogram_of(v, 4096);
    const auto m = fit_histogram_match(h, h);
    double worst = 0.0;
    for (double x : v) worst = std::max(worst, std::abs(m(x) - x));
    EXPECT_LE(worst, h.width(0)) << seed;
    // Between two occupied bins the map tracks the identity; across empty
    // runs the source CDF is flat and the map is constant by construction.
    for (std::size_t i = 1; i + 1 < h.edges().size(); ++i)
      if (h.counts()[i - 1] > 0 && h.counts()[i] > 0)
        EXPECT_LE(std::abs(m(h.edges()[i]) - h.edges()[i]), h.width(0)) << i;
  }
}

TEST(HistogramMatch, DiscreteTwoPointOracle) {
  // Source {10: 50%, 20: 50%}; reference {100: 25%, 200: 75%}.
  std::vector<double> src(1000, 10.0), ref(1000, 100.0);
  std::fill(src.begin() + 500, src.end(), 20.0);
  std::fill(ref.begin() + 250, ref.end(), 200.0);
  const auto hs = histogram_of(src, 4096);
  const auto hr = histogram_of(ref, 4096);
  const auto m = fit_histogram_match(hs, hr);

  // Oracle: each source atom maps to the reference atom holding the middle
  // of its CDF step.
  const std::vector<std::pair<double, double>> src_cdf{{10.0, 0.5}, {20.0, 1.0}};
  const std::vector<std::pair<double, double>> ref_cdf{{100.0, 0.25}, {200.0, 1.0}};
  double prev = 0.0;
  for (const auto& [x, level] : src_cdf) {
    const double mid = 0.5 * (prev + level);
    prev = level;
    double expect = ref_cdf.back().first;
    for (const auto& [r, rl] : ref_cdf)
      if (rl >= mid) {
        expect = r;
        break;
      }
    EXPECT_NEAR(m(x), expect, hr.width(0)) << x;
  }
}

TEST(HistogramMatch, SingleOccupiedReferenceBin) {
  auto ref = Histogram::uniform(0.0, 10.0, 10);
  ref.add(std::vector<double>(50, 3.5));
  const auto src = filled(-5.0, 5.0, 8, 3);
  const auto m = fit_histogram_match(src, ref);
  for (double x : {-100.0, -5.0, 0.0, 5.0, 100.0}) EXPECT_EQ(m(x), 3.5);
}

TEST(HistogramMatch, EmptyHistogramsRejected) {
  const auto empty = Histogram::uniform(0.0, 1.0, 4);
  const auto full = filled(0.0, 1.0, 4, 1);
  EXPECT_THROW(fit_histogram_match(empty, full), Error);
  EXPECT_THROW(fit_histogram_match(full, empty), Error);
}

TEST(HistogramMatch, FittedMapsAreMonotone) {
  std::mt19937_64 rng(11);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<double> s(3000), r(3000);
    std::gamma_distribution<double> g(1.0 + seed % 4, 50.0);
    std::normal_distribution<double> n(0.0, 10.0 + seed);
    for (auto& x : s) x = g(rng);
    for (auto& x : r) x = (seed % 2 ? n(rng) : std::round(n(rng)));  // integer refs leave gaps
    const auto m = fit_histogram_match(histogram_of(s, 64 + 100 * seed), histogram_of(r, 4096));
    std::uniform_real_distribution<double> d(-50.0, 800.0);
    for (int k = 0; k < 500; ++k) {
      double x = d(rng), y = d(rng);
      if (x > y) std::swap(x, y);
      ASSERT_LE(m(x), m(y));
    }
  }
}

TEST(HistogramMatch, MatchedSamplesFollowReferenceCdf) {
  const auto ref = bimodal(1, 200000);
  std::vector<double> src(200000);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(1150.0, 140.0);
  for (auto& x : src) x = n(rng);
  const auto hr = histogram_of(ref, 4096);
  const auto m = fit_histogram_match(histogram_of(src, 4096), hr);
  std::vector<double> mapped(src.size());
  std::transform(src.begin(), src.end(), mapped.begin(), [&](double x) { return m(x); });
  auto hm = Histogram(std::vector<double>(hr.edges().begin(), hr.edges().end()));
  hm.add(mapped);
  EXPECT_LT(cdf_distance(hm, hr).ks, 0.02);
}

TEST(HistogramMatch, DatasetModes) {
  std::vector<Volume> src, ref;
  for (std::uint64_t i = 0; i < 3; ++i) {
    src.push_back(random_volume(geom(12, 12, 12), i, 900.0 + 100.0 * i, 50.0));
    ref.push_back(random_volume(geom(12, 12, 12), 10 + i, 0.0, 300.0));
  }
  const auto sp = pointers_to(src);
  const auto rp = pointers_to(ref);
  HistogramMatchOptions opts;
  opts.bins = 512;
  const auto per = fit_histogram_match(sp, rp, opts);
  ASSERT_EQ(per.size(), 3u);
  EXPECT_FALSE(per[0] == per[1]);
  opts.mode = MatchMode::pooled;
  const auto pooled = fit_histogram_match(sp, rp, opts);
  ASSERT_EQ(pooled.size(), 3u);
  EXPECT_EQ(pooled[0], pooled[2]);

  // Per-volume matching puts every volume near the reference median.
  const auto rs = compute_stats(rp, std::vector<double>{50.0});
  for (std::size_t i = 0; i < 3; ++i) {
    const auto out = apply_map(src[i], per[i]);
    const auto s = compute_stats(std::span<const Volume>(&out, 1), std::vector<double>{50.0});
    EXPECT_NEAR(s.percentiles.at(50.0), rs.percentiles.at(50.0), 10.0);
  }
}

TEST(HistogramMatch, SubsamplingIsSeeded) {
  std::vector<Volume> src{random_volume(geom(16, 16, 16), 1, 1000.0, 80.0)};
  std::vector<Volume> ref{random_volume(geom(16, 16, 16), 2, 0.0, 300.0),
                          random_volume(geom(16, 16, 16), 3, -500.0, 100.0)};
  HistogramMatchOptions opts;
  opts.bins = 256;
  opts.reference_fraction = 0.25;
  opts.seed = 5;
  const auto a = fit_histogram_match(pointers_to(src), pointers_to(ref), opts);
  const auto b = fit_histogram_match(pointers_to(src), pointers_to(ref), opts);
  EXPECT_EQ(a[0], b[0]);
  opts.seed = 6;
  const auto c = fit_histogram_match(pointers_to(src), pointers_to(ref), opts);
  EXPECT_FALSE(a[0] == c[0]);
  opts.reference_fraction = 0.0;
  EXPECT_THROW(fit_histogram_match(pointers_to(src), pointers_to(ref), opts), Error);
}

// --- clip / normalize ------------------------------------------------------

TEST(Clip, IntegerRangeThresholds) {
  std::vector<double> values(1000);
  std::iota(values.begin(), values.end(), 0.0);
  std::shuffle(values.begin(), values.end(), std::mt19937_64(3));
  std::vector<Volume> vols;
  for (std::size_t k = 0; k < 4; ++k)
    vols.emplace_back(geom(10, 5, 5), std::vector<double>(values.begin() + 250 * k, values.begin() + 250 * (k + 1)));
  const auto r = clip_percentiles(std::span<const Volume>(vols));
  ASSERT_EQ(r.thresholds.size(), 1u);
  EXPECT_DOUBLE_EQ(r.thresholds[0].first, 4.995);
  EXPECT_DOUBLE_EQ(r.thresholds[0].second, 994.005);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < 250; ++i) {
      const double in = vols[k].data()[i], out = r.volumes[k].data()[i];
      EXPECT_GE(out, 4.995);
      EXPECT_LE(out, 994.005);
      if (in == 0.0) EXPECT_DOUBLE_EQ(out, 4.995);
      if (in >= 4.995 && in <= 994.005) EXPECT_EQ(out, in);
    }
}

TEST(Clip, FullRangeIsIdentityAndConstantUnchanged) {
  std::vector<Volume> vols{random_volume(geom(5, 5, 5), 1), random_volume(geom(3, 4, 5), 2)};
  const auto r = clip_percentiles(std::span<const Volume>(vols), 0.0, 100.0);
  for (std::size_t k = 0; k < vols.size(); ++k)
    EXPECT_TRUE(std::equal(vols[k].data().begin(), vols[k].data().end(), r.volumes[k].data().begin()));
  std::vector<Volume> flat{Volume(geom(2, 2, 2), std::vector<double>(8, 3.0))};
  const auto f = clip_percentiles(std::span<const Volume>(flat));
  EXPECT_EQ(f.thresholds[0], std::make_pair(3.0, 3.0));
  for (double x : f.volumes[0].data()) EXPECT_EQ(x, 3.0);
}

TEST(Clip, PerVolumeAndForeground) {
  std::vector<Volume> vols{Volume(geom(4, 1, 1), {0.0, 1.0, 2.0, 3.0}), Volume(geom(4, 1, 1), {10.0, 20.0, 30.0, 40.0})};
  const auto r = clip_percentiles(std::span<const Volume>(vols), 0.0, 50.0, ClipMode::per_volume);
  ASSERT_EQ(r.thresholds.size(), 2u);
  EXPECT_DOUBLE_EQ(r.thresholds[0].second, 1.5);
  EXPECT_DOUBLE_EQ(r.thresholds[1].second, 25.0);

  const Vocabulary v{{1, "kidney"}};
  const std::vector<LabelMap> masks{LabelMap(geom(4, 1, 1), {0, 1, 1, 0}, v), LabelMap(geom(4, 1, 1), {0, 0, 1, 0}, v)};
  const auto fg = clip_percentiles(std::span<const Volume>(vols), 0.0, 100.0, ClipMode::pooled, VoxelSelection{masks, {}});
  EXPECT_EQ(fg.thresholds[0], std::make_pair(1.0, 30.0));
  EXPECT_EQ(fg.volumes[1].data()[3], 30.0);
  EXPECT_EQ(fg.volumes[0].data()[0], 1.0);
}

TEST(Clip, RejectsBadPercentiles) {
  std::vector<Volume> vols{random_volume(geom(2, 2, 2), 1)};
  EXPECT_THROW(clip_percentiles(std::span<const Volume>(vols), 60.0, 40.0), Error);
  EXPECT_THROW(clip_percentiles(std::span<const Volume>(vols), -1.0, 40.0), Error);
  EXPECT_THROW(clip_percentiles(std::span<const Volume>(), 1.0, 40.0), Error);
}

TEST(ZNormalize, DirectFormula) {
  const std::vector<Volume> vols{Volume(geom(1, 1, 1), {9.0})};
  const auto out = znormalize(std::span<const Volume>(vols), moments(5.0, 2.0));
  EXPECT_DOUBLE_EQ(out[0].data()[0], 2.0);
  EXPECT_THROW(znormalize(std::span<const Volume>(vols), moments(5.0, 0.0)), Error);
}

TEST(ZNormalize, SelfStatsGiveZeroOne) {
  std::vector<Volume> vols;
  for (std::uint64_t i = 0; i < 8; ++i) vols.push_back(random_volume(geom(16, 16, 16), i, -400.0 + 50.0 * i, 300.0));
  const auto clipped = clip_percentiles(std::span<const Volume>(vols));
  const auto s = compute_stats(std::span<const Volume>(clipped.volumes));
  const auto out = znormalize(std::span<const Volume>(clipped.volumes), s);
  const auto z = compute_stats(std::span<const Volume>(out));
  EXPECT_LT(std::abs(z.mean), 1e-6);
  EXPECT_LT(std::abs(z.std - 1.0), 1e-6);

  // Idempotent on already-normalised data.
  const auto again = znormalize(std::span<const Volume>(out), z);
  for (std::size_t i = 0; i < out[0].size(); ++i) EXPECT_NEAR(again[0].data()[i], out[0].data()[i], 1e-12);
}

// --- labels -----------------------------------------------------------------

namespace {
const Vocabulary kKipa{{1, "kidney"}, {2, "tumor"}, {3, "artery"}, {4, "vein"}};
const Vocabulary kKits{{1, "kidney"}, {2, "tumor"}, {3, "cyst"}};

LabelRemap kipa_remap() {
  LabelRemap r;
  r.mapping = {{3, 0}, {4, 0}};
  return r;
}
}  // namespace

TEST(Remap, HandBuilt) {
  const LabelMap m(geom(2, 2, 1), {1, 3, 4, 2}, kKipa);
  const auto out = remap_labels(m, kipa_remap(), kKits);
  EXPECT_EQ(std::vector<Label>(out.data().begin(), out.data().end()), (std::vector<Label>{1, 0, 0, 2}));
  EXPECT_EQ(out.vocabulary(), kKits);
}

TEST(Remap, KipaDropsVesselsKeepsKidneyAndTumor) {
  const auto m = random_labels(geom(16, 16, 16), 8, 4, kKipa);
  const auto before = m.histogram();
  const auto after = remap_labels(m, kipa_remap(), kKits).histogram();
  EXPECT_EQ(after.at(1), before.at(1));
  EXPECT_EQ(after.at(2), before.at(2));
  EXPECT_EQ(after.at(0), before.at(0) + before.at(3) + before.at(4));
  EXPECT_FALSE(after.contains(3));
  EXPECT_FALSE(after.contains(4));
}

TEST(Remap, CountPreservationProperty) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const auto m = random_labels(geom(7, 6, 5), trial, 4, kKipa);
    LabelRemap r;
    for (Label s = 1; s <= 4; ++s) r.mapping[s] = static_cast<Label>(rng() % 4);
    const auto src = m.histogram();
    const auto dst = remap_labels(m, r, kKits).histogram();
    std::map<Label, std::size_t> expect;
    for (const auto& [s, n] : src) expect[r(s)] += n;
    EXPECT_EQ(dst, expect);
  }
}

TEST(Remap, IdentityAndErrors) {
  const auto m = random_labels(geom(5, 5, 5), 1, 3, kKits);
  const auto same = remap_labels(m, {}, kKits);
  EXPECT_TRUE(std::equal(m.data().begin(), m.data().end(), same.data().begin()));
  // Vein (4) has no place in the KiTS vocabulary.
  EXPECT_THROW(remap_labels(random_labels(geom(3, 3, 3), 2, 4, kKipa), {}, kKits), Error);
  // Strict mode wants every source label listed.
  EXPECT_THROW(remap_labels(random_labels(geom(3, 3, 3), 2, 4, kKipa), kipa_remap(), kKits, true), Error);
}

TEST(Remap, JsonRoundTrip) {
  const auto r = LabelRemap::from_json(R"({"description": "vessels", "mapping": {"3": 0, "4": 0}})");
  EXPECT_EQ(r.mapping, (std::map<Label, Label>{{3, 0}, {4, 0}}));
  EXPECT_EQ(r.description, "vessels");
  const auto back = LabelRemap::from_json(r.to_json());
  EXPECT_EQ(back.mapping, r.mapping);
  EXPECT_THROW(LabelRemap::from_json(R"({"mapping": {"x": 0}})"), Error);
  EXPECT_THROW(LabelRemap::from_json(R"({"mapping": {"3": 70000}})"), Error);
}
