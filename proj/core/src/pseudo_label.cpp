#include "weatherseg/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <thread>

#include "weatherseg/errors.hpp"
#include "weatherseg/rng.hpp"

namespace weatherseg {

std::size_t PseudoLabelBatch::confident() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

double PseudoLabelBatch::mask_fraction() const {
  return mask.empty() ? 0.0 : static_cast<double>(confident()) / static_cast<double>(mask.size());
}

Tensor consensus(const Tensor& probs1, const Tensor& probs2) {
  if (probs1.shape() != probs2.shape()) {
    throw ShapeError("consensus: shape mismatch " + to_string(probs1.shape()) + " vs " +
                     to_string(probs2.shape()));
  }
  std::vector<double> out(probs1.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (probs1[i] + probs2[i]);
  return Tensor(probs1.shape(), std::move(out), false);
}

PseudoLabelBatch threshold_labels(const Tensor& p_avg, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ConfigError("threshold tau must lie in (0, 1), got " + std::to_string(tau));
  }
  if (p_avg.rank() == 0 || p_avg.shape().back() == 0) {
    throw ShapeError("threshold_labels: empty class axis in " + to_string(p_avg.shape()));
  }
  const std::size_t C = p_avg.shape().back();
  const std::size_t rows = p_avg.size() / C;
  PseudoLabelBatch out;
  out.p_avg = p_avg.detach();
  out.tau = tau;
  out.ignore_label = static_cast<int>(C);
  out.labels.assign(rows, out.ignore_label);
  out.mask.assign(rows, 0);
  const auto p = p_avg.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (p[r * C + c] > p[r * C + best]) best = c;
    }
    if (p[r * C + best] > tau) {
      out.labels[r] = static_cast<int>(best);
      out.mask[r] = 1;
    }
  }
  return out;
}

namespace {

// Running first and second moments for one class, mergeable across chunks.
struct Moments {
  double n = 0.0;
  double mean1 = 0.0, mean2 = 0.0, mean_avg = 0.0;
  double m2_1 = 0.0, m2_2 = 0.0, m2_avg = 0.0, c12 = 0.0;

  void push(double a, double b) {
    n += 1.0;
    const double avg = 0.5 * (a + b);
    const double d1 = a - mean1, d2 = b - mean2, da = avg - mean_avg;
    mean1 += d1 / n;
    mean2 += d2 / n;
    mean_avg += da / n;
    m2_1 += d1 * (a - mean1);
    m2_2 += d2 * (b - mean2);
    m2_avg += da * (avg - mean_avg);
    c12 += d1 * (b - mean2);
  }

  void merge(const Moments& o) {
    if (o.n == 0.0) return;
    const double total = n + o.n;
    const double d1 = o.mean1 - mean1, d2 = o.mean2 - mean2, da = o.mean_avg - mean_avg;
    const double w = n * o.n / total;
    m2_1 += o.m2_1 + d1 * d1 * w;
    m2_2 += o.m2_2 + d2 * d2 * w;
    m2_avg += o.m2_avg + da * da * w;
    c12 += o.c12 + d1 * d2 * w;
    mean1 += d1 * o.n / total;
    mean2 += d2 * o.n / total;
    mean_avg += da * o.n / total;
    n = total;
  }
};

void softmax_inplace(std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& v : z) total += (v = std::exp(v - mx));
  for (auto& v : z) v /= total;
}

constexpr std::size_t kChunks = 16;

std::vector<Moments> run_chunk(const VarianceStudyConfig& cfg, std::size_t chunk,
                               std::size_t count) {
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x7661726961ULL, chunk));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t C = cfg.classes;
  const double shared_w = std::sqrt(cfg.rho), own_w = std::sqrt(1.0 - cfg.rho);
  std::vector<Moments> moments(C);
  std::vector<double> z1(C), z2(C);
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double base = 1.0 - 0.5 * static_cast<double>(c);
      const double shared = normal(rng);
      const double e1 = normal(rng);
      const double e2 = normal(rng);
      z1[c] = base + cfg.sigma * (shared_w * shared + own_w * e1);
      z2[c] = base + cfg.sigma * (shared_w * shared + own_w * e2);
    }
    softmax_inplace(z1);
    softmax_inplace(z2);
    for (std::size_t c = 0; c < C; ++c) moments[c].push(z1[c], z2[c]);
  }
  return moments;
}

}  // namespace

VarianceReport variance_study(const VarianceStudyConfig& cfg) {
  if (cfg.trials == 0) throw ConfigError("variance study needs a positive trial count");
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0)) {
    throw ConfigError("rho must lie in [0, 1], got " + std::to_string(cfg.rho));
  }
  if (!(cfg.sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (cfg.classes < 2) throw ConfigError("variance study needs at least 2 classes");

  std::vector<std::vector<Moments>> per_chunk(kChunks);
  auto chunk_size = [&](std::size_t k) {
    return cfg.trials / kChunks + (k < cfg.trials % kChunks ? 1 : 0);
  };
  const std::size_t workers = std::clamp<std::size_t>(cfg.workers, 1, kChunks);
  if (workers == 1) {
    for (std::size_t k = 0; k < kChunks; ++k) per_chunk[k] = run_chunk(cfg, k, chunk_size(k));
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < kChunks; k += workers) {
          per_chunk[k] = run_chunk(cfg, k, chunk_size(k));
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  std::vector<Moments> total(cfg.classes);
  for (const auto& chunk : per_chunk) {
    for (std::size_t c = 0; c < cfg.classes; ++c) total[c].merge(chunk[c]);
  }

  VarianceReport r;
  r.rho = cfg.rho;
  r.sigma = cfg.sigma;
  r.trials = cfg.trials;
  const double denom = static_cast<double>(cfg.trials > 1 ? cfg.trials - 1 : 1);
  for (const auto& m : total) {
    r.var_teacher1 += m.m2_1 / denom;
    r.var_teacher2 += m.m2_2 / denom;
    r.var_avg += m.m2_avg / denom;
    r.cov += m.c12 / denom;
  }
  r.var_single = 0.5 * (r.var_teacher1 + r.var_teacher2);
  r.ratio = r.var_avg / r.var_single;
  r.identity_gap = 0.25 * (r.var_teacher1 + r.var_teacher2 + 2.0 * r.cov) - r.var_avg;
  r.var_avg_stderr = r.var_avg * std::sqrt(2.0 / denom);
  return r;
}

void write_variance_csv(std::ostream& os, const std::vector<VarianceReport>& rows) {
  os << "rho,sigma,trials,var_single,var_avg,ratio,cov\n";
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.rho << ',' << r.sigma << ',' << r.trials << ',' << r.var_single << ',' << r.var_avg
       << ',' << r.ratio << ',' << r.cov << '\n';
  }
  os.flags(flags);
  os.precision(precision);
}

}  // namespace weatherseg
