#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace weatherseg {

// Mean IoU over the classes present in either map; classes absent from both
// are skipped. Returns 1 when both maps are empty.
double miou(std::span<const int> pred, std::span<const int> truth, std::size_t classes);

double pixel_accuracy(std::span<const int> pred, std::span<const int> truth);

struct ConvergenceStats {
  std::optional<std::size_t> first_below;  // index into the series
  double terminal = 0.0;
};

ConvergenceStats convergence_stats(std::span<const double> series, double threshold = 0.2);

struct GradShares {
  double ce = 0.0;
  double pl = 0.0;
  double consist = 0.0;
  double reg = 0.0;
  bool defined = false;  // false when every component gradient vanished
};

struct MetricsRow {
  std::int64_t epoch = 0;
  double miou = 0.0;
  double pixel_acc = 0.0;
  double ce = 0.0;
  double pl = 0.0;
  double consist = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double mask_fraction = 0.0;
  GradShares shares;
  double weight_deviation = 0.0;  // mean ‖w_class − 1‖ on the evaluation set
};

struct MetricsHistory {
  std::vector<MetricsRow> rows;
  std::optional<std::int64_t> epoch_to_loss_threshold;
  double terminal_loss = 0.0;
};

MetricsHistory summarize(std::vector<MetricsRow> rows, double loss_threshold = 0.2);

void write_metrics_csv(std::ostream& os, const MetricsHistory& history);

}  // namespace weatherseg
