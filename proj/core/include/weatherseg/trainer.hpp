#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "weatherseg/config.hpp"
#include "weatherseg/ema.hpp"
#include "weatherseg/losses.hpp"
#include "weatherseg/metrics.hpp"
#include "weatherseg/nets.hpp"
#include "weatherseg/synthdata.hpp"

namespace weatherseg {

// Which pieces a variant switches on.
struct VariantWiring {
  bool uses_unlabeled = false;
  bool dual_teachers = false;
  bool consensus_labels = false;
  bool consistency = false;
  bool class_weights = false;
};

VariantWiring make_variant(Variant variant);

struct TrainState {
  EncoderParams encoder;
  HeadParams student;
  CwtParams cwt;
  TeacherPair teachers;
  std::map<std::string, std::vector<double>> velocity;  // momentum buffers by parameter name
  std::int64_t step = 0;
  std::vector<LossBreakdown> losses;
  std::vector<MetricsRow> metrics;
};

TrainState init_state(const TrainConfig& cfg);

// Parameters the optimiser updates: encoder and student head always, the
// class-weight generator only when the variant wires it in. Never teachers.
NamedTensors optimizer_parameters(const TrainState& state, Variant variant);

// Named record of the stages a forward pass executed; used to compare variants.
using StepTrace = std::vector<std::string>;

struct ForwardResult {
  LossTerms terms;
  LossBreakdown breakdown;         // values filled, step left to the caller
  std::optional<Tensor> w_class;   // [(B_L+B_U)×C] when class weights are wired
};

// Runs every forward computation of one step on the active tape.
ForwardResult forward_pass(const TrainState& state, const SceneBatch& labeled,
                           const SceneBatch& unlabeled, const TrainConfig& cfg,
                           StepTrace* trace = nullptr);

// One optimisation step: forward, one backward on the weighted total, a
// momentum-SGD update of the optimiser parameters, then the EMA teacher
// update. Throws NumericError naming the first non-finite component.
LossBreakdown train_step(TrainState& state, const SceneBatch& labeled, const SceneBatch& unlabeled,
                         const TrainConfig& cfg, StepTrace* trace = nullptr);

// Per-component backward passes; shares are encoder-gradient L2 norms of the
// λ-weighted components, normalised to sum to one.
GradShares grad_share_report(const TrainState& state, const SceneBatch& labeled,
                             const SceneBatch& unlabeled, const TrainConfig& cfg);

// Per-image class weights for a batch, or nullopt when the variant has none.
std::optional<Tensor> class_weights_for(const TrainState& state, const Tensor& images,
                                        const TrainConfig& cfg);

// Student prediction (argmax of the possibly modulated logits) per pixel.
// Images are processed in chunks of the training batch size.
std::vector<int> predict(const TrainState& state, const Tensor& images, const TrainConfig& cfg);

struct EvalResult {
  double miou = 0.0;
  double pixel_acc = 0.0;
  double weight_deviation = 0.0;
};

EvalResult evaluate(const TrainState& state, const SceneBatch& batch, const TrainConfig& cfg);

/// Owns the data streams and state of one training run.
///
/// Batches for step t are a pure function of (seed, t), and evaluation happens
/// whenever a step completes an epoch, so a run restored from a checkpoint
/// continues exactly as the uninterrupted one would.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  Trainer(TrainConfig cfg, TrainState state);

  const TrainConfig& config() const { return cfg_; }
  const TrainState& state() const { return state_; }
  const SceneDataset& train_set() const { return train_; }
  const SceneDataset& eval_set() const { return eval_; }

  std::int64_t total_steps() const { return static_cast<std::int64_t>(cfg_.total_steps()); }
  bool finished() const { return state_.step >= total_steps(); }

  std::pair<SceneBatch, SceneBatch> batches_for_step(std::int64_t step) const;

  LossBreakdown step();
  void run_until(std::int64_t step);
  MetricsHistory run();
  MetricsHistory history() const;

 private:
  void end_of_epoch(const SceneBatch& labeled, const SceneBatch& unlabeled);

  TrainConfig cfg_;
  SceneDataset train_;
  SceneDataset eval_;
  std::vector<std::size_t> labeled_pool_;
  std::vector<std::size_t> unlabeled_pool_;
  TrainState state_;
};

MetricsHistory run(const TrainConfig& cfg);

}  // namespace weatherseg
