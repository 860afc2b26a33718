#include "weatherseg/report.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "weatherseg/errors.hpp"
#include "weatherseg/trainer.hpp"

namespace weatherseg {

AblationCell make_cell(Variant variant, std::uint64_t seed, const MetricsHistory& history) {
  if (history.rows.empty()) throw ContractError("ablation run produced no evaluation rows");
  const MetricsRow& last = history.rows.back();
  AblationCell c;
  c.variant = variant;
  c.seed = seed;
  c.miou = last.miou;
  c.pixel_acc = last.pixel_acc;
  c.terminal_loss = history.terminal_loss;
  c.epoch_to_loss_threshold = history.epoch_to_loss_threshold;
  c.weight_deviation = last.weight_deviation;
  return c;
}

std::vector<AblationCell> run_ablation(const TrainConfig& base, const std::vector<Variant>& variants,
                                       const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  std::vector<AblationCell> cells(variants.size() * seeds.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        TrainConfig cfg = base;
        cfg.variant = variants[i / seeds.size()];
        cfg.seed = seeds[i % seeds.size()];
        cells[i] = make_cell(cfg.variant, cfg.seed, run(cfg));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return cells;
}

std::vector<VariantSummary> summarize_ablation(const std::vector<AblationCell>& cells) {
  std::vector<VariantSummary> out;
  for (const auto& c : cells) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const VariantSummary& s) { return s.variant == c.variant; });
    if (it == out.end()) {
      out.push_back({.variant = c.variant});
      it = out.end() - 1;
    }
    ++it->runs;
    it->mean_miou += c.miou;
    it->mean_pixel_acc += c.pixel_acc;
  }
  for (auto& s : out) {
    s.mean_miou /= static_cast<double>(s.runs);
    s.mean_pixel_acc /= static_cast<double>(s.runs);
    double ss = 0.0;
    for (const auto& c : cells) {
      if (c.variant == s.variant) ss += (c.miou - s.mean_miou) * (c.miou - s.mean_miou);
    }
    s.sd_miou = s.runs > 1 ? std::sqrt(ss / static_cast<double>(s.runs - 1)) : 0.0;
  }
  return out;
}

const VariantSummary* find_summary(const std::vector<VariantSummary>& s, Variant v) {
  for (const auto& x : s) {
    if (x.variant == v) return &x;
  }
  return nullptr;
}

bool ablation_ordering_holds(const std::vector<VariantSummary>& s) {
  const auto* complete = find_summary(s, Variant::kComplete);
  const auto* dtc = find_summary(s, Variant::kDualConsensus);
  const auto* dtfw = find_summary(s, Variant::kDualTeacher);
  const auto* stfw = find_summary(s, Variant::kSingleTeacher);
  if (!complete || !dtc || !dtfw || !stfw) return false;
  return complete->mean_miou >= dtc->mean_miou && dtc->mean_miou >= dtfw->mean_miou &&
         dtfw->mean_miou >= stfw->mean_miou && complete->mean_miou > stfw->mean_miou;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationCell>& cells) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << "variant,seed,miou,pixel_acc,terminal_loss,epoch_to_loss_threshold,weight_deviation\n";
  os << std::setprecision(17);
  for (const auto& c : cells) {
    os << variant_name(c.variant) << ',' << c.seed << ',' << c.miou << ',' << c.pixel_acc << ','
       << c.terminal_loss << ',';
    if (c.epoch_to_loss_threshold) os << *c.epoch_to_loss_threshold;
    os << ',' << c.weight_deviation << '\n';
  }
  for (const auto& s : summarize_ablation(cells)) {
    os << variant_name(s.variant) << ",mean," << s.mean_miou << ',' << s.mean_pixel_acc << ",,,\n";
  }
  os.flags(flags);
  os.precision(precision);
}

void print_ablation_table(std::ostream& os, const std::vector<VariantSummary>& summary) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  const auto* stfw = find_summary(summary, Variant::kSingleTeacher);
  os << std::left << std::setw(10) << "variant" << std::right << std::setw(6) << "runs"
     << std::setw(10) << "mIoU" << std::setw(9) << "sd" << std::setw(11) << "pix acc"
     << std::setw(12) << "vs STFW" << '\n';
  os << std::fixed;
  for (const auto& s : summary) {
    os << std::left << std::setw(10) << variant_name(s.variant) << std::right << std::setw(6)
       << s.runs << std::setprecision(4) << std::setw(10) << s.mean_miou << std::setw(9)
       << s.sd_miou << std::setw(11) << s.mean_pixel_acc;
    if (stfw) {
      os << std::showpos << std::setprecision(2) << std::setw(11)
         << 100.0 * (s.mean_miou - stfw->mean_miou) << '%' << std::noshowpos;
    }
    os << '\n';
  }
  os.flags(flags);
  os.precision(precision);
}

std::string history_to_json(const MetricsHistory& history) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : history.rows) {
    nlohmann::json row = {{"epoch", r.epoch},
                          {"miou", r.miou},
                          {"pixel_acc", r.pixel_acc},
                          {"ce", r.ce},
                          {"pl", r.pl},
                          {"consist", r.consist},
                          {"reg", r.reg},
                          {"total", r.total},
                          {"mask_fraction", r.mask_fraction},
                          {"weight_deviation", r.weight_deviation}};
    if (r.shares.defined) {
      row["grad_shares"] = {{"ce", r.shares.ce},
                            {"pl", r.shares.pl},
                            {"consist", r.shares.consist},
                            {"reg", r.shares.reg}};
    } else {
      row["grad_shares"] = nullptr;
    }
    j["rows"].push_back(std::move(row));
  }
  j["epoch_to_loss_threshold"] =
      history.epoch_to_loss_threshold ? nlohmann::json(*history.epoch_to_loss_threshold) : nullptr;
  j["terminal_loss"] = history.terminal_loss;
  return j.dump(2);
}

}  // namespace weatherseg
