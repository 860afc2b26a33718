#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "weatherseg/ema.hpp"
#include "weatherseg/losses.hpp"
#include "weatherseg/nets.hpp"

namespace weatherseg {

// Ablation ladder, weakest to strongest.
enum class Variant {
  kSupervisedBaseline,  // STB: labeled cross-entropy only
  kSingleTeacher,       // STFW: one teacher, its own pseudo-labels, unit weights
  kDualTeacher,         // DTFW: two teachers, teacher-1 pseudo-labels, consistency on
  kDualConsensus,       // DTC: consensus pseudo-labels
  kComplete,            // DTC plus generated class weights and their regulariser
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

struct BatchSpec {
  std::size_t labeled = 4;    // B_L
  std::size_t unlabeled = 4;  // B_U

  std::size_t total() const { return labeled + unlabeled; }
  void validate() const;
};

struct DataSpec {
  std::size_t train_scenes = 64;
  double labeled_ratio = 0.125;
  std::vector<double> betas{0.2, 0.5, 0.7};
  std::size_t eval_scenes = 24;

  void validate() const;
};

struct TrainConfig {
  ModelDims dims;
  LossWeights weights;
  EmaConfig ema;
  double tau = 0.95;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t steps_per_epoch = 10;
  BatchSpec batch;
  DataSpec data;
  std::uint64_t seed = 0;
  Variant variant = Variant::kComplete;
  // Teacher initial jitter, as a fraction of the head's init range.
  double teacher_perturbation = 1e-2;
  double convergence_threshold = 0.2;

  void validate() const;
  std::size_t total_steps() const { return epochs * steps_per_epoch; }
};

std::string config_to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig config_from_json(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace weatherseg
