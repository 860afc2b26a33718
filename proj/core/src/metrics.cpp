#include "weatherseg/metrics.hpp"

#include <iomanip>
#include <ostream>

#include "weatherseg/errors.hpp"

namespace weatherseg {

double miou(std::span<const int> pred, std::span<const int> truth, std::size_t classes) {
  if (pred.size() != truth.size()) {
    throw ShapeError("miou: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " labels");
  }
  std::vector<std::size_t> inter(classes, 0), in_pred(classes, 0), in_truth(classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], t = truth[i];
    if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= classes ||
        static_cast<std::size_t>(t) >= classes) {
      throw ContractError("miou: label outside [0, " + std::to_string(classes - 1) + "]");
    }
    ++in_pred[static_cast<std::size_t>(p)];
    ++in_truth[static_cast<std::size_t>(t)];
    if (p == t) ++inter[static_cast<std::size_t>(p)];
  }
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t uni = in_pred[c] + in_truth[c] - inter[c];
    if (uni == 0) continue;
    total += static_cast<double>(inter[c]) / static_cast<double>(uni);
    ++present;
  }
  return present == 0 ? 1.0 : total / static_cast<double>(present);
}

double pixel_accuracy(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw ShapeError("pixel_accuracy: size mismatch");
  if (pred.empty()) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ConvergenceStats convergence_stats(std::span<const double> series, double threshold) {
  if (series.empty()) throw ContractError("convergence_stats: empty loss series");
  ConvergenceStats out;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i] < threshold) {
      out.first_below = i;
      break;
    }
  }
  out.terminal = series.back();
  return out;
}

MetricsHistory summarize(std::vector<MetricsRow> rows, double loss_threshold) {
  MetricsHistory h;
  h.rows = std::move(rows);
  if (h.rows.empty()) return h;
  std::vector<double> totals;
  totals.reserve(h.rows.size());
  for (const auto& r : h.rows) totals.push_back(r.total);
  const auto stats = convergence_stats(totals, loss_threshold);
  if (stats.first_below) h.epoch_to_loss_threshold = h.rows[*stats.first_below].epoch;
  h.terminal_loss = stats.terminal;
  return h;
}

void write_metrics_csv(std::ostream& os, const MetricsHistory& history) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << "epoch,miou,pixel_acc,ce,pl,consist,reg,total,mask_fraction,"
        "share_ce,share_pl,share_consist,share_reg,weight_deviation\n";
  os << std::setprecision(17);
  for (const auto& r : history.rows) {
    os << r.epoch << ',' << r.miou << ',' << r.pixel_acc << ',' << r.ce << ',' << r.pl << ','
       << r.consist << ',' << r.reg << ',' << r.total << ',' << r.mask_fraction << ',';
    if (r.shares.defined) {
      os << r.shares.ce << ',' << r.shares.pl << ',' << r.shares.consist << ',' << r.shares.reg;
    } else {
      os << "nan,nan,nan,nan";
    }
    os << ',' << r.weight_deviation << '\n';
  }
  os.flags(flags);
  os.precision(precision);
}

}  // namespace weatherseg
