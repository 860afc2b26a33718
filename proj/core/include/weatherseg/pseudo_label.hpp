#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "weatherseg/tensor.hpp"

namespace weatherseg {

struct PseudoLabelBatch {
  Tensor p_avg;                     // [..×C] consensus probabilities
  std::vector<int> labels;          // one per row of p_avg; ignore_label where unconfident
  std::vector<std::uint8_t> mask;   // 1 where max_c p_avg > tau
  double tau = 0.95;
  int ignore_label = 0;             // == C

  std::size_t confident() const;
  double mask_fraction() const;
};

// Elementwise mean of two probability fields of equal shape.
Tensor consensus(const Tensor& probs1, const Tensor& probs2);

// Per row of the last axis: argmax (ties to the lowest class) when the maximum
// strictly exceeds tau, otherwise the ignore label C.
PseudoLabelBatch threshold_labels(const Tensor& p_avg, double tau);

struct VarianceStudyConfig {
  double sigma = 0.5;      // logit noise scale
  double rho = 0.0;        // correlation between the two teachers' noise
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  std::size_t classes = 4;
  std::size_t workers = 1;
};

struct VarianceReport {
  double rho = 0.0;
  double sigma = 0.0;
  std::size_t trials = 0;
  double var_teacher1 = 0.0;
  double var_teacher2 = 0.0;
  double var_single = 0.0;  // mean of the two single-teacher variances
  double var_avg = 0.0;     // variance of the averaged prediction
  double ratio = 0.0;       // var_avg / var_single
  double cov = 0.0;         // Cov(p_t1, p_t2)
  double identity_gap = 0.0;    // ¼(Var1+Var2+2Cov) − var_avg
  double var_avg_stderr = 0.0;  // Gaussian-approximation standard error of var_avg
};

// Monte-Carlo comparison of one noisy teacher against the average of two.
// Each teacher's logits are a fixed base vector plus
// sigma·(√rho·shared + √(1−rho)·own) Gaussian noise; variances are summed over
// the class probabilities. Trials are split into fixed chunks with their own
// RNG streams, so the result does not depend on `workers`.
VarianceReport variance_study(const VarianceStudyConfig& cfg);

void write_variance_csv(std::ostream& os, const std::vector<VarianceReport>& rows);

}  // namespace weatherseg
