#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "weatherseg/nets.hpp"
#include "weatherseg/tensor.hpp"

namespace weatherseg {

// Scene classes. With fewer than four classes, ids wrap modulo C.
enum class SceneClass : int { kSky = 0, kRoad = 1, kVegetation = 2, kVehicle = 3 };

// Degradation intensities, all in [0, 1]. The operators are procedural
// stand-ins: fog blends toward a flat gray, rain draws bright streaks,
// humidity blurs with a 3×3 binomial kernel, night halves brightness.
struct WeatherConfig {
  double beta = 0.0;
  double rain_x = 0.0;
  double fog_y = 0.0;
  double humidity_z = 0.0;
  bool night = false;

  static WeatherConfig from_beta(double beta, bool night = false);
  static WeatherConfig soft() { return from_beta(0.2); }
  static WeatherConfig medium() { return from_beta(0.5); }
  static WeatherConfig hard() { return from_beta(0.7); }

  void validate() const;
  bool operator==(const WeatherConfig&) const = default;
};

inline constexpr double kFogGray = 0.6;

struct Scene {
  std::vector<double> image;  // [H×W×in_channels] in [0, 1]
  std::vector<int> mask;      // [H×W] class ids
};

// Undegraded render of the geometry drawn from `seed`.
Scene render_clean(const ModelDims& dims, std::uint64_t seed);

// Applies `weather` to a clean image. Rain streak placement depends on `seed`
// only, so the geometry and the streak pattern are fixed per seed.
std::vector<double> degrade(std::span<const double> clean, const ModelDims& dims,
                            const WeatherConfig& weather, std::uint64_t seed);

Scene generate_scene(const ModelDims& dims, const WeatherConfig& weather, std::uint64_t seed);

struct SceneSample {
  std::vector<double> image;
  std::vector<int> mask;
  bool labeled = false;
  WeatherConfig weather;
  std::uint64_t seed = 0;
};

/// A batch of scenes laid out for the model.
///
/// Masks of unlabeled samples are kept for evaluation only. Training code must
/// read masks through training_masks(), which refuses batches that contain a
/// hidden mask and counts the attempt.
class SceneBatch {
 public:
  SceneBatch() = default;
  SceneBatch(const ModelDims& dims, std::vector<const SceneSample*> samples);

  std::size_t size() const { return labeled_.size(); }
  bool empty() const { return labeled_.empty(); }
  const Tensor& images() const { return images_; }
  const std::vector<std::uint8_t>& labeled_flags() const { return labeled_; }
  const std::vector<WeatherConfig>& weather() const { return weather_; }
  const std::vector<std::uint64_t>& seeds() const { return seeds_; }

  std::span<const int> training_masks() const;
  std::span<const int> evaluation_masks() const { return masks_; }

 private:
  Tensor images_;
  std::vector<int> masks_;
  std::vector<std::uint8_t> labeled_;
  std::vector<WeatherConfig> weather_;
  std::vector<std::uint64_t> seeds_;
};

// Process-wide count of refused hidden-mask reads.
std::size_t hidden_mask_reads();

struct SceneDataset {
  ModelDims dims;
  std::vector<SceneSample> samples;

  std::vector<std::size_t> labeled_indices() const;
  std::vector<std::size_t> unlabeled_indices() const;
  SceneBatch batch(std::span<const std::size_t> indices) const;
};

// n_total scenes; sample i uses modes[i % modes.size()] (clean when empty).
// Exactly floor(n_total·labeled_ratio) samples, chosen by a seeded shuffle,
// are labeled.
SceneDataset make_split(const ModelDims& dims, std::size_t n_total, double labeled_ratio,
                        const std::vector<WeatherConfig>& modes, std::uint64_t seed);

std::size_t labeled_count(std::size_t n_total, double labeled_ratio);

// 8-bit binary PPM of an [H×W×3] image and PGM of an [H×W] class map.
void write_ppm(const std::filesystem::path& path, std::span<const double> image,
               const ModelDims& dims);
void write_pgm(const std::filesystem::path& path, std::span<const int> mask, const ModelDims& dims);

}  // namespace weatherseg
