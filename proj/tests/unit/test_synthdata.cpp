#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "weatherseg/errors.hpp"
#include "weatherseg/synthdata.hpp"

using namespace weatherseg;

namespace {

double mean_abs_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST(Synth, SameSeedSameScene) {
  const ModelDims dims;
  const Scene a = generate_scene(dims, WeatherConfig::medium(), 5);
  const Scene b = generate_scene(dims, WeatherConfig::medium(), 5);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NE(generate_scene(dims, WeatherConfig::medium(), 6).mask, a.mask);
}

TEST(Synth, ValuesStayInUnitRange) {
  const ModelDims dims;
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (double beta : {0.0, 0.7, 1.0}) {
      const Scene sc = generate_scene(dims, WeatherConfig::from_beta(beta, s % 2 == 0), s);
      for (double v : sc.image) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
      for (int c : sc.mask) {
        ASSERT_GE(c, 0);
        ASSERT_LT(c, 4);
      }
    }
  }
}

TEST(Synth, ZeroBetaIsTheCleanRender) {
  const ModelDims dims;
  EXPECT_EQ(generate_scene(dims, WeatherConfig::from_beta(0.0), 9).image, render_clean(dims, 9).image);
}

TEST(Synth, MasksIgnoreWeather) {
  const ModelDims dims;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto clean = render_clean(dims, s).mask;
    for (double beta : {0.2, 0.5, 0.7, 1.0}) {
      EXPECT_EQ(generate_scene(dims, WeatherConfig::from_beta(beta), s).mask, clean);
      EXPECT_EQ(generate_scene(dims, WeatherConfig::from_beta(beta, true), s).mask, clean);
    }
  }
}

TEST(Synth, DisplacementGrowsWithBeta) {
  const ModelDims dims;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto clean = render_clean(dims, s).image;
    double previous = 0.0;
    for (double beta : {0.0, 0.2, 0.5, 0.7, 1.0}) {
      const double gap = mean_abs_gap(generate_scene(dims, WeatherConfig::from_beta(beta), s).image, clean);
      EXPECT_GE(gap, previous) << "seed " << s << " beta " << beta;
      previous = gap;
    }
    EXPECT_GT(previous, 0.0);
  }
}

TEST(Synth, EachOperatorIsMonotoneOnItsOwn) {
  const ModelDims dims;
  const auto clean = render_clean(dims, 4).image;
  for (int op = 0; op < 3; ++op) {
    double previous = 0.0;
    for (double x : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      WeatherConfig w;
      (op == 0 ? w.rain_x : op == 1 ? w.fog_y : w.humidity_z) = x;
      const double gap = mean_abs_gap(degrade(clean, dims, w, 4), clean);
      EXPECT_GE(gap, previous) << op << ' ' << x;
      previous = gap;
    }
    EXPECT_GT(previous, 0.0) << op;
  }
}

TEST(Synth, NightHalvesBrightness) {
  const ModelDims dims;
  const auto day = generate_scene(dims, WeatherConfig::soft(), 3).image;
  const auto night = generate_scene(dims, WeatherConfig::from_beta(0.2, true), 3).image;
  for (std::size_t i = 0; i < day.size(); ++i) EXPECT_DOUBLE_EQ(night[i], 0.5 * day[i]);
  EXPECT_LT(mean_of(night), mean_of(day));
}

TEST(Synth, FogPullsTowardGray) {
  const ModelDims dims;
  const auto clean = render_clean(dims, 8).image;
  const auto fogged = degrade(clean, dims, {.beta = 1.0, .fog_y = 1.0}, 8);
  for (double v : fogged) EXPECT_NEAR(v, kFogGray, 1e-15);
}

TEST(Synth, WeatherValidation) {
  const ModelDims dims;
  const auto clean = render_clean(dims, 1).image;
  EXPECT_THROW(degrade(clean, dims, {.rain_x = 1.5}, 1), ConfigError);
  EXPECT_THROW(degrade(clean, dims, {.fog_y = -0.1}, 1), ConfigError);
}

TEST(Synth, PresetsMatchNamedLevels) {
  EXPECT_EQ(WeatherConfig::soft().beta, 0.2);
  EXPECT_EQ(WeatherConfig::medium().beta, 0.5);
  EXPECT_EQ(WeatherConfig::hard().fog_y, 0.7);
}

TEST(Synth, ScenesCoverAllClassesOverManySeeds) {
  const ModelDims dims;
  std::set<int> seen;
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (int c : render_clean(dims, s).mask) seen.insert(c);
  }
  EXPECT_EQ(seen, (std::set<int>{0, 1, 2, 3}));
}

TEST(Synth, FewerClassesWrap) {
  ModelDims dims;
  dims.classes = 2;
  for (int c : render_clean(dims, 1).mask) EXPECT_LT(c, 2);
}

TEST(Split, LabeledCountAndDeterminism) {
  const ModelDims dims;
  const std::vector<WeatherConfig> modes{WeatherConfig::soft(), WeatherConfig::hard()};
  const SceneDataset a = make_split(dims, 16, 0.25, modes, 3);
  const SceneDataset b = make_split(dims, 16, 0.25, modes, 3);
  EXPECT_EQ(a.labeled_indices().size(), 4u);
  EXPECT_EQ(a.unlabeled_indices().size(), 12u);
  EXPECT_EQ(a.labeled_indices(), b.labeled_indices());
  EXPECT_EQ(a.samples[5].image, b.samples[5].image);
  EXPECT_EQ(a.samples[1].weather, WeatherConfig::hard());
  EXPECT_EQ(labeled_count(64, 0.125), 8u);
  EXPECT_THROW(make_split(dims, 4, 0.0, modes, 1), ConfigError);
}

TEST(Split, BatchLaysOutImagesInOrder) {
  ModelDims dims;
  dims.height = dims.width = 4;
  const SceneDataset ds = make_split(dims, 4, 0.5, {}, 2);
  const std::vector<std::size_t> idx{2, 0};
  const SceneBatch batch = ds.batch(idx);
  EXPECT_EQ(batch.images().shape(), (Shape{2, 4, 4, 3}));
  EXPECT_EQ(batch.images()[0], ds.samples[2].image[0]);
  EXPECT_EQ(batch.images()[48], ds.samples[0].image[0]);
  EXPECT_EQ(batch.evaluation_masks().size(), 32u);
}

TEST(Split, HiddenMasksAreRefusedAndCounted) {
  ModelDims dims;
  dims.height = dims.width = 4;
  const SceneDataset ds = make_split(dims, 8, 0.5, {}, 4);
  const auto lab = ds.labeled_indices();
  const auto unl = ds.unlabeled_indices();
  EXPECT_EQ(ds.batch(lab).training_masks().size(), lab.size() * 16);
  const std::size_t before = hidden_mask_reads();
  const std::vector<std::size_t> mixed{lab[0], unl[0]};
  EXPECT_THROW(ds.batch(mixed).training_masks(), ContractError);
  EXPECT_EQ(hidden_mask_reads(), before + 1);
}

TEST(Split, PortableImageWriters) {
  ModelDims dims;
  dims.height = 3;
  dims.width = 5;
  const Scene sc = generate_scene(dims, WeatherConfig::soft(), 1);
  const auto dir = wst::scratch_dir("ppm");
  write_ppm(dir / "a.ppm", sc.image, dims);
  write_pgm(dir / "a.pgm", sc.mask, dims);
  const std::string ppm = wst::slurp(dir / "a.ppm");
  const std::string pgm = wst::slurp(dir / "a.pgm");
  EXPECT_EQ(ppm.substr(0, 11), "P6\n5 3\n255\n");
  EXPECT_EQ(ppm.size(), 11u + 45u);
  EXPECT_EQ(pgm.substr(0, 9), "P5\n5 3\n3\n");
  EXPECT_EQ(pgm.size(), 9u + 15u);
}
