#include "weatherseg/synthdata.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "weatherseg/errors.hpp"
#include "weatherseg/rng.hpp"

namespace weatherseg {

namespace {

constexpr std::uint64_t kGeometryDomain = 0x67656f6dULL;
constexpr std::uint64_t kRainDomain = 0x7261696eULL;
constexpr std::uint64_t kSceneDomain = 0x7363656eULL;
constexpr std::uint64_t kSplitDomain = 0x73706c74ULL;

std::atomic<std::size_t> g_hidden_reads{0};

using Rgb = std::array<double, 3>;

constexpr Rgb kSky{0.55, 0.70, 0.95};
constexpr Rgb kRoad{0.36, 0.36, 0.40};
constexpr Rgb kVegetation{0.22, 0.50, 0.20};
constexpr std::array<Rgb, 5> kVehiclePalette{{
    {0.80, 0.12, 0.10}, {0.12, 0.22, 0.80}, {0.92, 0.92, 0.90}, {0.10, 0.10, 0.12}, {0.85, 0.70, 0.10}}};

int class_id(SceneClass c, std::size_t classes) {
  return static_cast<int>(static_cast<std::size_t>(c) % classes);
}

std::vector<double> blur3x3(std::span<const double> img, std::size_t H, std::size_t W,
                            std::size_t ch) {
  static constexpr double kTaps[3] = {1.0, 2.0, 1.0};
  std::vector<double> out(img.size(), 0.0);
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      for (std::size_t k = 0; k < ch; ++k) {
        double acc = 0.0;
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            const std::size_t ii = clampi(static_cast<std::ptrdiff_t>(i) + di, H);
            const std::size_t jj = clampi(static_cast<std::ptrdiff_t>(j) + dj, W);
            acc += kTaps[di + 1] * kTaps[dj + 1] * img[(ii * W + jj) * ch + k];
          }
        }
        out[(i * W + j) * ch + k] = acc / 16.0;
      }
    }
  }
  return out;
}

}  // namespace

WeatherConfig WeatherConfig::from_beta(double beta, bool night) {
  return {beta, beta, beta, beta, night};
}

void WeatherConfig::validate() const {
  for (double v : {beta, rain_x, fog_y, humidity_z}) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError("weather intensities must lie in [0, 1], got " + std::to_string(v));
    }
  }
}

Scene render_clean(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  const std::size_t H = dims.height, W = dims.width, ch = dims.in_channels, C = dims.classes;
  std::mt19937_64 rng(derive_seed(seed, kGeometryDomain));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double Hd = static_cast<double>(H), Wd = static_cast<double>(W);

  std::vector<int> cls(H * W);
  std::vector<Rgb> color(H * W);

  const double horizon = Hd * (0.30 + 0.20 * unit(rng));
  const double road_center = Wd * (0.35 + 0.30 * unit(rng));
  const double top_half = Wd * (0.04 + 0.06 * unit(rng));
  const double bottom_half = Wd * (0.30 + 0.15 * unit(rng));
  const Rgb tint{0.05 * (unit(rng) - 0.5), 0.05 * (unit(rng) - 0.5), 0.05 * (unit(rng) - 0.5)};

  auto road_half_width = [&](double y) {
    const double t = std::clamp((y - horizon) / std::max(Hd - horizon, 1.0), 0.0, 1.0);
    return top_half + t * (bottom_half - top_half);
  };

  for (std::size_t i = 0; i < H; ++i) {
    const double y = static_cast<double>(i) + 0.5;
    for (std::size_t j = 0; j < W; ++j) {
      const double x = static_cast<double>(j) + 0.5;
      const std::size_t p = i * W + j;
      if (y < horizon) {
        cls[p] = class_id(SceneClass::kSky, C);
        const double lift = 0.1 * (1.0 - y / horizon);
        color[p] = {kSky[0] + lift, kSky[1] + lift, kSky[2]};
      } else if (std::abs(x - road_center) < road_half_width(y)) {
        cls[p] = class_id(SceneClass::kRoad, C);
        color[p] = kRoad;
      } else {
        cls[p] = class_id(SceneClass::kVegetation, C);
        color[p] = kVegetation;
      }
    }
  }

  // Tree crowns straddling the horizon.
  const int blobs = 1 + static_cast<int>(unit(rng) * 3.0);
  for (int b = 0; b < blobs; ++b) {
    const double cx = Wd * unit(rng);
    const double cy = horizon - 1.0 + 2.0 * unit(rng);
    const double r = 1.5 + 2.0 * unit(rng);
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const double dx = static_cast<double>(j) + 0.5 - cx, dy = static_cast<double>(i) + 0.5 - cy;
        if (dx * dx + dy * dy < r * r) {
          cls[i * W + j] = class_id(SceneClass::kVegetation, C);
          color[i * W + j] = {kVegetation[0] - 0.05, kVegetation[1] - 0.08, kVegetation[2]};
        }
      }
    }
  }

  // Vehicles sit on the road.
  const int vehicles = 1 + static_cast<int>(unit(rng) * 3.0);
  for (int v = 0; v < vehicles; ++v) {
    const double bottom = horizon + 2.0 + (Hd - horizon - 2.0) * unit(rng);
    const double scale = std::clamp((bottom - horizon) / std::max(Hd - horizon, 1.0), 0.3, 1.0);
    const double w = std::max(1.5, (2.0 + 4.0 * unit(rng)) * scale);
    const double h = std::max(1.5, (1.5 + 2.0 * unit(rng)) * scale);
    const double cx = road_center + (unit(rng) - 0.5) * road_half_width(bottom);
    const Rgb paint = kVehiclePalette[static_cast<std::size_t>(unit(rng) * kVehiclePalette.size()) %
                                      kVehiclePalette.size()];
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const double x = static_cast<double>(j) + 0.5, y = static_cast<double>(i) + 0.5;
        if (std::abs(x - cx) < w / 2.0 && y <= bottom && y > bottom - h) {
          cls[i * W + j] = class_id(SceneClass::kVehicle, C);
          color[i * W + j] = paint;
        }
      }
    }
  }

  std::normal_distribution<double> texture(0.0, 0.03);
  Scene scene;
  scene.mask = std::move(cls);
  scene.image.resize(H * W * ch);
  for (std::size_t p = 0; p < H * W; ++p) {
    for (std::size_t k = 0; k < ch; ++k) {
      const double v = color[p][k % 3] + tint[k % 3] + texture(rng);
      scene.image[p * ch + k] = std::clamp(v, 0.0, 1.0);
    }
  }
  return scene;
}

std::vector<double> degrade(std::span<const double> clean, const ModelDims& dims,
                            const WeatherConfig& weather, std::uint64_t seed) {
  weather.validate();
  const std::size_t H = dims.height, W = dims.width, ch = dims.in_channels;
  std::vector<double> out(clean.begin(), clean.end());
  const bool any = weather.rain_x > 0.0 || weather.fog_y > 0.0 || weather.humidity_z > 0.0;
  if (any) {
    // Each operator contributes a delta measured against the clean render, so
    // the total displacement scales with the intensities.
    std::vector<double> delta(out.size(), 0.0);
    if (weather.fog_y > 0.0) {
      for (std::size_t i = 0; i < out.size(); ++i) delta[i] += weather.fog_y * (kFogGray - clean[i]);
    }
    if (weather.rain_x > 0.0) {
      std::mt19937_64 rng(derive_seed(seed, kRainDomain));
      std::uniform_int_distribution<std::size_t> col(0, W - 1), row(0, H - 1);
      std::uniform_int_distribution<std::size_t> len(3, 6);
      std::vector<std::uint8_t> streak(H * W, 0);
      const std::size_t count = std::max<std::size_t>(2, W * H / 40);
      for (std::size_t s = 0; s < count; ++s) {
        const std::size_t j = col(rng), i0 = row(rng), n = len(rng);
        for (std::size_t i = i0; i < std::min(H, i0 + n); ++i) streak[i * W + j] = 1;
      }
      for (std::size_t p = 0; p < H * W; ++p) {
        if (!streak[p]) continue;
        for (std::size_t k = 0; k < ch; ++k) {
          delta[p * ch + k] += weather.rain_x * 0.8 * (0.95 - clean[p * ch + k]);
        }
      }
    }
    if (weather.humidity_z > 0.0) {
      const auto blurred = blur3x3(clean, H, W, ch);
      for (std::size_t i = 0; i < out.size(); ++i) {
        delta[i] += weather.humidity_z * (blurred[i] - clean[i]);
      }
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(clean[i] + delta[i], 0.0, 1.0);
  }
  if (weather.night) {
    for (auto& v : out) v *= 0.5;
  }
  return out;
}

Scene generate_scene(const ModelDims& dims, const WeatherConfig& weather, std::uint64_t seed) {
  Scene scene = render_clean(dims, seed);
  scene.image = degrade(scene.image, dims, weather, seed);
  return scene;
}

// ---------------------------------------------------------------------------

SceneBatch::SceneBatch(const ModelDims& dims, std::vector<const SceneSample*> samples) {
  const std::size_t B = samples.size();
  const std::size_t per_image = dims.pixels() * dims.in_channels;
  std::vector<double> pixels;
  pixels.reserve(B * per_image);
  for (const SceneSample* s : samples) {
    if (s->image.size() != per_image || s->mask.size() != dims.pixels()) {
      throw ShapeError("scene sample does not match model dims");
    }
    pixels.insert(pixels.end(), s->image.begin(), s->image.end());
    masks_.insert(masks_.end(), s->mask.begin(), s->mask.end());
    labeled_.push_back(s->labeled ? 1 : 0);
    weather_.push_back(s->weather);
    seeds_.push_back(s->seed);
  }
  images_ = Tensor({B, dims.height, dims.width, dims.in_channels}, std::move(pixels), false);
}

std::span<const int> SceneBatch::training_masks() const {
  if (std::find(labeled_.begin(), labeled_.end(), std::uint8_t{0}) != labeled_.end()) {
    g_hidden_reads.fetch_add(1);
    throw ContractError("training code requested masks of unlabeled samples");
  }
  return masks_;
}

std::size_t hidden_mask_reads() { return g_hidden_reads.load(); }

std::vector<std::size_t> SceneDataset::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].labeled) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> SceneDataset::unlabeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].labeled) out.push_back(i);
  }
  return out;
}

SceneBatch SceneDataset::batch(std::span<const std::size_t> indices) const {
  std::vector<const SceneSample*> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) picked.push_back(&samples.at(i));
  return SceneBatch(dims, std::move(picked));
}

std::size_t labeled_count(std::size_t n_total, double labeled_ratio) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n_total) * labeled_ratio + 1e-9));
}

SceneDataset make_split(const ModelDims& dims, std::size_t n_total, double labeled_ratio,
                        const std::vector<WeatherConfig>& modes, std::uint64_t seed) {
  if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0)) {
    throw ConfigError("labeled ratio must lie in (0, 1], got " + std::to_string(labeled_ratio));
  }
  SceneDataset ds;
  ds.dims = dims;
  ds.samples.resize(n_total);
  for (std::size_t i = 0; i < n_total; ++i) {
    const std::uint64_t scene_seed = derive_seed(seed, kSceneDomain, i);
    const WeatherConfig weather = modes.empty() ? WeatherConfig{} : modes[i % modes.size()];
    Scene scene = generate_scene(dims, weather, scene_seed);
    ds.samples[i] = {std::move(scene.image), std::move(scene.mask), false, weather, scene_seed};
  }
  std::vector<std::size_t> order(n_total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, kSplitDomain));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t k = std::min(n_total, labeled_count(n_total, labeled_ratio));
  for (std::size_t i = 0; i < k; ++i) ds.samples[order[i]].labeled = true;
  return ds;
}

void write_ppm(const std::filesystem::path& path, std::span<const double> image,
               const ModelDims& dims) {
  if (dims.in_channels != 3 || image.size() != dims.pixels() * 3) {
    throw ShapeError("PPM output needs a 3-channel image of the configured size");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string());
  os << "P6\n" << dims.width << ' ' << dims.height << "\n255\n";
  for (double v : image) {
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
}

void write_pgm(const std::filesystem::path& path, std::span<const int> mask, const ModelDims& dims) {
  if (mask.size() != dims.pixels()) throw ShapeError("PGM mask does not match configured size");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string());
  os << "P5\n" << dims.width << ' ' << dims.height << '\n' << std::max<std::size_t>(1, dims.classes - 1)
     << '\n';
  for (int v : mask) os.put(static_cast<char>(static_cast<unsigned char>(v)));
}

}  // namespace weatherseg
