#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>

#include "weatherseg/pseudo_label.hpp"
#include "weatherseg/tensor.hpp"

namespace weatherseg {

struct LossWeights {
  double lambda1 = 0.3;   // pseudo-label
  double lambda2 = 0.1;   // teacher consistency
  double lambda3 = 0.01;  // class-weight regulariser

  void validate() const;
};

// A scalar loss plus a flag raised when its averaging set was empty (no
// confident pixel, or no unlabeled sample); the value is then exactly 0.
struct LossTerm {
  Tensor value;
  bool empty = false;
};

// (1/B_U)·Σ‖T1 − T2‖² over all logits of the unlabeled batch.
LossTerm consistency_loss(const Tensor& t1_logits, const Tensor& t2_logits, std::size_t batch_u);

// Logits [B×H×W×C] multiplied per pixel by the owning image's class weights
// [B×C], flattened to [B·H·W × C]. Without weights this is a plain reshape.
Tensor modulate_logits(const Tensor& logits, const std::optional<Tensor>& w_class);

// Mean over confident pixels of −log softmax(logits ⊙ w)[ỹ].
LossTerm pseudo_label_loss(const Tensor& student_logits, const std::optional<Tensor>& w_class,
                           const PseudoLabelBatch& plb);

// Mean over every labeled pixel of −log softmax(logits ⊙ w)[y].
Tensor supervised_ce(const Tensor& student_logits, const std::optional<Tensor>& w_class,
                     std::span<const int> truth);

// ‖w − 1‖² (squared Frobenius).
Tensor weight_regularizer(const Tensor& w_class);

struct LossTerms {
  Tensor ce;
  Tensor pl;
  Tensor consist;
  Tensor reg;
};

Tensor total_loss(const LossTerms& parts, const LossWeights& weights);
double total_loss(double ce, double pl, double consist, double reg, const LossWeights& weights);

struct LossBreakdown {
  std::int64_t step = 0;
  double ce = 0.0;
  double pl = 0.0;
  double consist = 0.0;
  double reg = 0.0;
  double total = 0.0;
  std::size_t batch_labeled = 0;
  std::size_t batch_unlabeled = 0;
  std::size_t confident = 0;
  double mask_fraction = 0.0;
  bool empty_mask = false;
  bool empty_unlabeled = false;
};

void write_loss_csv_header(std::ostream& os);
void write_loss_csv_row(std::ostream& os, const LossBreakdown& row);

}  // namespace weatherseg
