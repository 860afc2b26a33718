#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "weatherseg/errors.hpp"
#include "weatherseg/losses.hpp"

using namespace weatherseg;

namespace {

// −log softmax(z)[y] for one row, by hand.
double row_nll(const std::vector<double>& z, int y) {
  double hi = z[0];
  for (double v : z) hi = std::max(hi, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - hi);
  return -(z[static_cast<std::size_t>(y)] - hi - std::log(s));
}

// Mean masked cross-entropy over [B×H×W×C] logits modulated per image.
double ce_oracle(const Tensor& logits, const std::vector<double>* w, const std::vector<int>& y,
                 int ignore) {
  const std::size_t B = logits.dim(0), P = logits.dim(1) * logits.dim(2), C = logits.dim(3);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t r = b * P + p;
      if (y[r] == ignore) continue;
      std::vector<double> z(C);
      for (std::size_t c = 0; c < C; ++c) z[c] = logits[r * C + c] * (w ? (*w)[b * C + c] : 1.0);
      total += row_nll(z, y[r]);
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

PseudoLabelBatch labels_with_mask(std::vector<int> labels, int classes) {
  PseudoLabelBatch plb;
  plb.ignore_label = classes;
  plb.labels = std::move(labels);
  for (int y : plb.labels) plb.mask.push_back(y == classes ? 0 : 1);
  return plb;
}

}  // namespace

TEST(Losses, ConsistencyIsSquaredGapPerImage) {
  const Tensor t1({2, 1, 1, 2}, {1, 2, 3, 4});
  const Tensor t2({2, 1, 1, 2}, {0, 2, 3, 1});
  const LossTerm l = consistency_loss(t1, t2, 2);
  EXPECT_FALSE(l.empty);
  EXPECT_DOUBLE_EQ(l.value.item(), (1.0 + 9.0) / 2.0);
}

TEST(Losses, ConsistencyWithoutUnlabeledIsZero) {
  const Tensor t = Tensor::zeros({0, 2, 2, 2});
  const LossTerm l = consistency_loss(t, t, 0);
  EXPECT_TRUE(l.empty);
  EXPECT_EQ(l.value.item(), 0.0);
}

TEST(Losses, ConsistencyVanishesForIdenticalTeachers) {
  std::mt19937_64 rng(1);
  const Tensor t = wst::random_tensor(rng, {2, 2, 2, 3});
  Tape tape;
  const LossTerm l = consistency_loss(t, t, 2);
  tape.backward(l.value);
  EXPECT_EQ(l.value.item(), 0.0);
  for (double g : t.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Losses, ModulationScalesEachImageRow) {
  const Tensor logits({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor w({2, 2}, {10, 0, 1, -1});
  EXPECT_EQ(wst::to_vec(modulate_logits(logits, w)),
            (std::vector<double>{10, 0, 30, 0, 5, -6, 7, -8}));
  EXPECT_EQ(modulate_logits(logits, std::nullopt).shape(), (Shape{4, 2}));
  EXPECT_THROW(modulate_logits(logits, Tensor::zeros({2, 3})), ShapeError);
}

TEST(Losses, SupervisedCeMatchesOracle) {
  std::mt19937_64 rng(2);
  const Tensor logits = wst::random_tensor(rng, {2, 2, 3, 4}, -3, 3, false);
  const Tensor w = wst::random_tensor(rng, {2, 4}, 0.5, 1.5, false);
  const std::vector<int> y{0, 1, 2, 3, 3, 2, 1, 0, 0, 0, 2, 1};
  const std::vector<double> wv = wst::to_vec(w);
  EXPECT_NEAR(supervised_ce(logits, std::nullopt, y).item(), ce_oracle(logits, nullptr, y, -1), 1e-14);
  EXPECT_NEAR(supervised_ce(logits, w, y).item(), ce_oracle(logits, &wv, y, -1), 1e-14);
}

TEST(Losses, SupervisedCeRejectsBadLabels) {
  const Tensor logits = Tensor::zeros({1, 1, 2, 3});
  EXPECT_THROW(supervised_ce(logits, std::nullopt, std::vector<int>{0, 3}), ContractError);
  EXPECT_THROW(supervised_ce(logits, std::nullopt, std::vector<int>{0}), ShapeError);
}

TEST(Losses, UniformLogitsGiveLogC) {
  const Tensor logits = Tensor::zeros({1, 2, 2, 4});
  EXPECT_NEAR(supervised_ce(logits, std::nullopt, std::vector<int>{0, 1, 2, 3}).item(),
              std::log(4.0), 1e-15);
}

TEST(Losses, PseudoLabelAveragesOnlyConfidentPixels) {
  std::mt19937_64 rng(3);
  const Tensor logits = wst::random_tensor(rng, {1, 2, 2, 3}, -2, 2, false);
  const Tensor w = wst::random_tensor(rng, {1, 3}, 0.5, 1.5, false);
  const std::vector<double> wv = wst::to_vec(w);
  const PseudoLabelBatch plb = labels_with_mask({3, 1, 3, 0}, 3);
  const LossTerm l = pseudo_label_loss(logits, w, plb);
  EXPECT_FALSE(l.empty);
  EXPECT_NEAR(l.value.item(), ce_oracle(logits, &wv, plb.labels, 3), 1e-14);
}

TEST(Losses, EmptyPseudoLabelMaskIsZeroWithNoGradient) {
  std::mt19937_64 rng(4);
  const Tensor logits = wst::random_tensor(rng, {1, 2, 2, 3});
  Tape tape;
  const LossTerm l = pseudo_label_loss(logits, std::nullopt, labels_with_mask({3, 3, 3, 3}, 3));
  EXPECT_TRUE(l.empty);
  EXPECT_EQ(l.value.item(), 0.0);
  EXPECT_FALSE(l.value.requires_grad());
}

TEST(Losses, RegularizerIsSquaredDistanceFromOne) {
  const Tensor w({2, 2}, {1, 2, 0, 1.5});
  EXPECT_DOUBLE_EQ(weight_regularizer(w).item(), 1.0 + 1.0 + 0.25);
  EXPECT_EQ(weight_regularizer(Tensor::full({3, 4}, 1.0)).item(), 0.0);
}

TEST(Losses, TotalIsWeightedSum) {
  const LossTerms parts{Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(3.0),
                        Tensor::scalar(4.0)};
  const LossWeights w{.lambda1 = 0.3, .lambda2 = 0.1, .lambda3 = 0.01};
  EXPECT_NEAR(total_loss(parts, w).item(), 1.0 + 0.6 + 0.3 + 0.04, 1e-15);
  EXPECT_EQ(total_loss(parts, w).item(), total_loss(1.0, 2.0, 3.0, 4.0, w));
}

TEST(Losses, DefaultWeights) {
  const LossWeights w;
  EXPECT_EQ(w.lambda1, 0.3);
  EXPECT_EQ(w.lambda2, 0.1);
  EXPECT_EQ(w.lambda3, 0.01);
  EXPECT_THROW((LossWeights{.lambda1 = -1.0}).validate(), ConfigError);
}

TEST(Losses, GradientsOfModulatedLossesMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const Tensor logits = wst::random_tensor(rng, {2, 1, 2, 3}, -2, 2);
  const Tensor w = wst::random_tensor(rng, {2, 3}, 0.5, 1.5);
  const std::vector<int> y{0, 2, 1, 1};
  const PseudoLabelBatch plb = labels_with_mask({3, 2, 0, 3}, 3);
  auto loss = [&] {
    return add(add(supervised_ce(logits, w, y), pseudo_label_loss(logits, w, plb).value),
               weight_regularizer(w));
  };
  {
    Tape tape;
    tape.backward(loss());
  }
  for (const Tensor* t : {&logits, &w}) {
    const std::vector<double> analytic(t->grad().begin(), t->grad().end());
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double fd = wst::central_difference(*t, i, [&] { return loss().item(); });
      EXPECT_LT(wst::rel_error(analytic[i], fd), 1e-6) << i;
    }
  }
}

TEST(Losses, LossCsvRow) {
  std::ostringstream os;
  write_loss_csv_header(os);
  write_loss_csv_row(os, {.step = 3, .ce = 0.5, .total = 0.5});
  EXPECT_EQ(os.str(), "step,ce,pl,consist,reg,total,mask_fraction\n3,0.5,0,0,0,0.5,0\n");
}
