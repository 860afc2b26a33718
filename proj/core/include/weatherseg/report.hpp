#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "weatherseg/config.hpp"
#include "weatherseg/metrics.hpp"

namespace weatherseg {

// Final-epoch result of one (variant, seed) training run.
struct AblationCell {
  Variant variant = Variant::kComplete;
  std::uint64_t seed = 0;
  double miou = 0.0;
  double pixel_acc = 0.0;
  double terminal_loss = 0.0;
  std::optional<std::int64_t> epoch_to_loss_threshold;
  double weight_deviation = 0.0;
};

struct VariantSummary {
  Variant variant = Variant::kComplete;
  std::size_t runs = 0;
  double mean_miou = 0.0;
  double sd_miou = 0.0;  // sample standard deviation, 0 for a single run
  double mean_pixel_acc = 0.0;
};

AblationCell make_cell(Variant variant, std::uint64_t seed, const MetricsHistory& history);

// Trains every variant on every seed from `base`. Runs are independent and
// are spread over `jobs` threads; results come back in (variant, seed) order
// regardless of scheduling.
std::vector<AblationCell> run_ablation(const TrainConfig& base, const std::vector<Variant>& variants,
                                       const std::vector<std::uint64_t>& seeds, unsigned jobs = 1);

// One summary per variant, in order of first appearance.
std::vector<VariantSummary> summarize_ablation(const std::vector<AblationCell>& cells);

const VariantSummary* find_summary(const std::vector<VariantSummary>& s, Variant v);

// Mean mIoU ordering COMPLETE ≥ DTC ≥ DTFW ≥ STFW with COMPLETE strictly above STFW.
bool ablation_ordering_holds(const std::vector<VariantSummary>& s);

// Columns: variant,seed,miou,pixel_acc,terminal_loss,epoch_to_loss_threshold,weight_deviation.
// Per-variant mean rows follow with seed "mean".
void write_ablation_csv(std::ostream& os, const std::vector<AblationCell>& cells);
void print_ablation_table(std::ostream& os, const std::vector<VariantSummary>& summary);

std::string history_to_json(const MetricsHistory& history);

}  // namespace weatherseg
