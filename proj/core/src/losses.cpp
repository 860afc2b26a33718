#include "weatherseg/losses.hpp"

#include <iomanip>
#include <ostream>

#include "weatherseg/errors.hpp"

namespace weatherseg {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
}

LossTerm consistency_loss(const Tensor& t1_logits, const Tensor& t2_logits, std::size_t batch_u) {
  if (t1_logits.shape() != t2_logits.shape()) {
    throw ShapeError("consistency_loss: teacher logits " + to_string(t1_logits.shape()) + " vs " +
                     to_string(t2_logits.shape()));
  }
  if (batch_u == 0) return {Tensor::scalar(0.0), true};
  const Tensor diff = sub(t1_logits, t2_logits);
  return {scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(batch_u)), false};
}

Tensor modulate_logits(const Tensor& logits, const std::optional<Tensor>& w_class) {
  if (logits.rank() != 4) {
    throw ShapeError("expected per-pixel logits [BxHxWxC], got " + to_string(logits.shape()));
  }
  const std::size_t B = logits.dim(0), C = logits.dim(3);
  const std::size_t pixels = logits.dim(1) * logits.dim(2);
  const Tensor flat = reshape(logits, {B * pixels, C});
  if (!w_class) return flat;
  if (w_class->rank() != 2 || w_class->dim(0) != B || w_class->dim(1) != C) {
    throw ShapeError("class weights " + to_string(w_class->shape()) + " do not match logits " +
                     to_string(logits.shape()));
  }
  return mul(flat, repeat_rows(*w_class, pixels));
}

LossTerm pseudo_label_loss(const Tensor& student_logits, const std::optional<Tensor>& w_class,
                           const PseudoLabelBatch& plb) {
  const Tensor logp = log_softmax(modulate_logits(student_logits, w_class));
  if (plb.labels.size() != logp.dim(0)) {
    throw ShapeError("pseudo_label_loss: " + std::to_string(plb.labels.size()) +
                     " pseudo-labels for logits " + to_string(student_logits.shape()));
  }
  if (plb.confident() == 0) return {Tensor::scalar(0.0), true};
  return {masked_nll(logp, plb.labels, plb.ignore_label), false};
}

Tensor supervised_ce(const Tensor& student_logits, const std::optional<Tensor>& w_class,
                     std::span<const int> truth) {
  const Tensor logp = log_softmax(modulate_logits(student_logits, w_class));
  if (truth.size() != logp.dim(0)) {
    throw ShapeError("supervised_ce: " + std::to_string(truth.size()) + " labels for logits " +
                     to_string(student_logits.shape()));
  }
  const int classes = static_cast<int>(logp.dim(1));
  for (int y : truth) {
    if (y < 0 || y >= classes) {
      throw ContractError("supervised label " + std::to_string(y) + " outside [0, " +
                          std::to_string(classes - 1) + "]");
    }
  }
  return masked_nll(logp, truth, classes);
}

Tensor weight_regularizer(const Tensor& w_class) {
  const Tensor diff = add_scalar(w_class, -1.0);
  return sum(mul(diff, diff));
}

Tensor total_loss(const LossTerms& parts, const LossWeights& weights) {
  return add(add(add(parts.ce, scale(parts.pl, weights.lambda1)),
                 scale(parts.consist, weights.lambda2)),
             scale(parts.reg, weights.lambda3));
}

double total_loss(double ce, double pl, double consist, double reg, const LossWeights& weights) {
  return ce + weights.lambda1 * pl + weights.lambda2 * consist + weights.lambda3 * reg;
}

void write_loss_csv_header(std::ostream& os) {
  os << "step,ce,pl,consist,reg,total,mask_fraction\n";
}

void write_loss_csv_row(std::ostream& os, const LossBreakdown& row) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << std::setprecision(17) << row.step << ',' << row.ce << ',' << row.pl << ',' << row.consist
     << ',' << row.reg << ',' << row.total << ',' << row.mask_fraction << '\n';
  os.flags(flags);
  os.precision(precision);
}

}  // namespace weatherseg
