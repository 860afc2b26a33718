#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "helpers.hpp"
#include "weatherseg/errors.hpp"
#include "weatherseg/gradcheck.hpp"
#include "weatherseg/trainer.hpp"

using namespace weatherseg;

namespace {

// ---------------------------------------------------------------------------
// Plain-double re-implementation of one forward pass, written from the model
// description rather than from the tape ops.

using Vec = std::vector<double>;
using Params = std::map<std::string, Vec>;

struct Dims {
  std::size_t in, D, C, H, W;
};

Vec linear(const Vec& x, std::size_t rows, std::size_t in, const Vec& w, std::size_t out,
           const Vec* b) {
  Vec y(rows * out, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b ? (*b)[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w[i * out + o];
      y[r * out + o] = acc;
    }
  }
  return y;
}

void relu_inplace(Vec& v) {
  for (double& x : v) x = std::max(x, 0.0);
}

Vec softmax_row(const double* z, std::size_t n) {
  double hi = z[0];
  for (std::size_t i = 1; i < n; ++i) hi = std::max(hi, z[i]);
  Vec p(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (p[i] = std::exp(z[i] - hi));
  for (double& x : p) x /= s;
  return p;
}

double nll_row(const double* z, std::size_t n, int y) {
  return -std::log(softmax_row(z, n)[static_cast<std::size_t>(y)]);
}

struct Features {
  Vec map;     // [B·H·W × D]
  Vec pooled;  // [B × D]
};

Features encode_oracle(const Params& p, const Vec& images, std::size_t B, const Dims& d) {
  const std::size_t P = d.H * d.W;
  Vec h = linear(images, B * P, d.in, p.at("encoder.w1"), d.D, &p.at("encoder.b1"));
  relu_inplace(h);
  h = linear(h, B * P, d.D, p.at("encoder.w2"), d.D, &p.at("encoder.b2"));
  relu_inplace(h);
  const Vec& k = p.at("encoder.mix");
  Features f{Vec(h.size(), 0.0), Vec(B * d.D, 0.0)};
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < d.H; ++i) {
      for (std::size_t j = 0; j < d.W; ++j) {
        for (std::size_t ch = 0; ch < d.D; ++ch) {
          double acc = 0.0;
          for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
              const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj;
              if (ii < 0 || jj < 0 || ii >= static_cast<long>(d.H) || jj >= static_cast<long>(d.W)) continue;
              const std::size_t src = (b * P + static_cast<std::size_t>(ii) * d.W + static_cast<std::size_t>(jj)) * d.D + ch;
              acc += k[ch * 9 + static_cast<std::size_t>((di + 1) * 3 + (dj + 1))] * h[src];
            }
          }
          f.map[(b * P + i * d.W + j) * d.D + ch] = acc;
          f.pooled[b * d.D + ch] += acc / static_cast<double>(P);
        }
      }
    }
  }
  return f;
}

Vec head_oracle(const Params& p, const std::string& head, const Features& f, std::size_t rows,
                const Dims& d) {
  return linear(f.map, rows, d.D, p.at(head + ".weight"), d.C, &p.at(head + ".bias"));
}

// Class weights for rows of pooled features, single attention head.
Vec cwt_oracle(const Params& p, const Vec& hs, std::size_t B, const Dims& d) {
  Vec ht(B * 2 * d.D);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < d.D; ++c) ht[b * 2 * d.D + c] = ht[b * 2 * d.D + d.D + c] = hs[b * d.D + c];
  }
  const Vec q = linear(hs, B, d.D, p.at("cwt.w_q"), d.D, nullptr);
  const Vec k = linear(ht, B, 2 * d.D, p.at("cwt.w_k"), d.D, nullptr);
  const Vec v = linear(ht, B, 2 * d.D, p.at("cwt.w_v"), d.D, nullptr);
  Vec att(B * d.D, 0.0);
  for (std::size_t i = 0; i < B; ++i) {
    Vec s(B);
    for (std::size_t j = 0; j < B; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d.D; ++c) dot += q[i * d.D + c] * k[j * d.D + c];
      s[j] = dot / std::sqrt(static_cast<double>(d.D));
    }
    const Vec a = softmax_row(s.data(), B);
    for (std::size_t j = 0; j < B; ++j) {
      for (std::size_t c = 0; c < d.D; ++c) att[i * d.D + c] += a[j] * v[j * d.D + c];
    }
  }
  const Vec& gain = p.at("cwt.ln_gain");
  const Vec& bias = p.at("cwt.ln_bias");
  for (std::size_t i = 0; i < B; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < d.D; ++c) mu += att[i * d.D + c] / static_cast<double>(d.D);
    for (std::size_t c = 0; c < d.D; ++c) var += std::pow(att[i * d.D + c] - mu, 2) / static_cast<double>(d.D);
    for (std::size_t c = 0; c < d.D; ++c) {
      att[i * d.D + c] = gain[c] * (att[i * d.D + c] - mu) / std::sqrt(var + 1e-5) + bias[c];
    }
  }
  Vec hidden = linear(att, B, d.D, p.at("cwt.mlp_w1"), d.D, &p.at("cwt.mlp_b1"));
  relu_inplace(hidden);
  return linear(hidden, B, d.D, p.at("cwt.mlp_w2"), d.C, &p.at("cwt.mlp_b2"));
}

struct OracleInputs {
  Dims d;
  Vec labeled_images, unlabeled_images;
  std::vector<int> truth;
  double tau, l1, l2, l3;
};

struct OracleTerms {
  double ce = 0, pl = 0, consist = 0, reg = 0, total = 0;
  std::vector<int> pseudo;  // per unlabeled pixel, C where unconfident
};

// Pseudo-labels are taken from `fixed` when given, so finite differences see
// them as constants exactly as the tape does.
OracleTerms oracle_forward(const Params& p, const OracleInputs& in,
                           const std::vector<int>* fixed = nullptr) {
  const Dims& d = in.d;
  const std::size_t P = d.H * d.W;
  const Features fl = encode_oracle(p, in.labeled_images, 1, d);
  const Features fu = encode_oracle(p, in.unlabeled_images, 1, d);
  const Vec sl = head_oracle(p, "student", fl, P, d);
  const Vec su = head_oracle(p, "student", fu, P, d);
  const Vec t1 = head_oracle(p, "teacher1", fu, P, d);
  const Vec t2 = head_oracle(p, "teacher2", fu, P, d);
  Vec hs = fl.pooled;
  hs.insert(hs.end(), fu.pooled.begin(), fu.pooled.end());
  const Vec w = cwt_oracle(p, hs, 2, d);

  OracleTerms o;
  for (std::size_t px = 0; px < P; ++px) {
    Vec z(d.C);
    for (std::size_t c = 0; c < d.C; ++c) z[c] = sl[px * d.C + c] * w[c];
    o.ce += nll_row(z.data(), d.C, in.truth[px]) / static_cast<double>(P);
  }

  if (fixed) {
    o.pseudo = *fixed;
  } else {
    for (std::size_t px = 0; px < P; ++px) {
      const Vec p1 = softmax_row(&t1[px * d.C], d.C), p2 = softmax_row(&t2[px * d.C], d.C);
      int best = 0;
      double best_p = -1.0;
      for (std::size_t c = 0; c < d.C; ++c) {
        const double avg = 0.5 * (p1[c] + p2[c]);
        if (avg > best_p) best_p = avg, best = static_cast<int>(c);
      }
      o.pseudo.push_back(best_p > in.tau ? best : static_cast<int>(d.C));
    }
  }
  std::size_t confident = 0;
  for (std::size_t px = 0; px < P; ++px) {
    if (o.pseudo[px] == static_cast<int>(d.C)) continue;
    Vec z(d.C);
    for (std::size_t c = 0; c < d.C; ++c) z[c] = su[px * d.C + c] * w[d.C + c];
    o.pl += nll_row(z.data(), d.C, o.pseudo[px]);
    ++confident;
  }
  if (confident) o.pl /= static_cast<double>(confident);

  for (std::size_t i = 0; i < t1.size(); ++i) o.consist += (t1[i] - t2[i]) * (t1[i] - t2[i]);
  for (double x : w) o.reg += (x - 1.0) * (x - 1.0);
  o.total = o.ce + in.l1 * o.pl + in.l2 * o.consist + in.l3 * o.reg;
  return o;
}

void put(Params& p, const std::string& name, const Tensor& t) { p[name] = wst::to_vec(t); }

Params params_of(const TrainState& s) {
  Params p;
  for (const auto& [name, t] : s.encoder.trainable()) put(p, name, t);
  put(p, "encoder.mix", s.encoder.mix);
  for (const auto& [name, t] : s.student.trainable()) put(p, "student." + name, t);
  for (const auto& [name, t] : s.cwt.trainable()) put(p, name, t);
  put(p, "teacher1.weight", s.teachers.first().weight);
  put(p, "teacher1.bias", s.teachers.first().bias);
  put(p, "teacher2.weight", s.teachers.second().weight);
  put(p, "teacher2.bias", s.teachers.second().bias);
  return p;
}

OracleInputs inputs_of(const MicroInstance& m) {
  const auto& dims = m.cfg.dims;
  return {{dims.in_channels, dims.features, dims.classes, dims.height, dims.width},
          wst::to_vec(m.labeled.images()),
          wst::to_vec(m.unlabeled.images()),
          {m.labeled.training_masks().begin(), m.labeled.training_masks().end()},
          m.cfg.tau,
          m.cfg.weights.lambda1,
          m.cfg.weights.lambda2,
          m.cfg.weights.lambda3};
}

bool trainable_name(const std::string& name) {
  return name.rfind("teacher", 0) != 0 && name != "encoder.mix";
}

std::vector<double> flat_grad(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

// ---------------------------------------------------------------------------

TEST(SingleStepOracle, ForwardMatchesIndependentImplementation) {
  const MicroInstance m = make_micro_instance(0);
  const OracleInputs in = inputs_of(m);
  const OracleTerms o = oracle_forward(params_of(m.state), in);
  const ForwardResult fwd = forward_pass(m.state, m.labeled, m.unlabeled, m.cfg);
  EXPECT_NEAR(fwd.breakdown.ce, o.ce, 1e-12);
  EXPECT_NEAR(fwd.breakdown.pl, o.pl, 1e-12);
  EXPECT_NEAR(fwd.breakdown.consist, o.consist, 1e-12);
  EXPECT_NEAR(fwd.breakdown.reg, o.reg, 1e-12);
  EXPECT_NEAR(fwd.breakdown.total, o.total, 1e-12);
  const auto confident = static_cast<std::size_t>(
      std::count_if(o.pseudo.begin(), o.pseudo.end(), [&](int y) { return y != int(in.d.C); }));
  EXPECT_EQ(fwd.breakdown.confident, confident);
  EXPECT_GT(confident, 0u);
  EXPECT_LT(confident, in.d.H * in.d.W);
}

TEST(SingleStepOracle, PostStepParametersMatch) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    MicroInstance m = make_micro_instance(seed);
    const OracleInputs in = inputs_of(m);
    Params p = params_of(m.state);
    const std::vector<int> pseudo = oracle_forward(p, in).pseudo;

    // Central differences of the oracle loss; first momentum step is v = g.
    Params expected = p;
    const double eps = 1e-6;
    for (auto& [name, values] : p) {
      if (!trainable_name(name)) continue;
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double orig = values[i];
        values[i] = orig + eps;
        const double up = oracle_forward(p, in, &pseudo).total;
        values[i] = orig - eps;
        const double down = oracle_forward(p, in, &pseudo).total;
        values[i] = orig;
        expected[name][i] = orig - m.cfg.lr * (up - down) / (2.0 * eps);
      }
    }
    const double a = m.cfg.ema.alpha;
    for (const char* part : {"weight", "bias"}) {
      const std::string t1 = std::string("teacher1.") + part, s = std::string("student.") + part;
      for (std::size_t i = 0; i < expected[t1].size(); ++i) {
        expected[t1][i] = a * p[t1][i] + (1.0 - a) * expected[s][i];
      }
    }

    const LossBreakdown b = train_step(m.state, m.labeled, m.unlabeled, m.cfg);
    EXPECT_NEAR(b.total, oracle_forward(p, in).total, 1e-12);
    const Params got = params_of(m.state);
    for (const auto& [name, want] : expected) {
      for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_NEAR(got.at(name)[i], want[i], 1e-9) << "seed " << seed << ' ' << name << '[' << i << ']';
      }
    }
    EXPECT_EQ(got.at("teacher2.weight"), p.at("teacher2.weight"));
  }
}

// ---------------------------------------------------------------------------

TEST(Routing, TeachersCarryNoGradient) {
  MicroInstance m = make_micro_instance(3);
  train_step(m.state, m.labeled, m.unlabeled, m.cfg);
  EXPECT_TRUE(m.state.teachers.first().weight.grad().empty());
  EXPECT_TRUE(m.state.teachers.second().bias.grad().empty());
  for (const auto& [name, t] : optimizer_parameters(m.state, Variant::kComplete)) {
    EXPECT_EQ(name.find("teacher"), std::string::npos) << name;
  }
}

TEST(Routing, IdenticalTeachersGiveNoConsistencyGradient) {
  MicroInstance m = make_micro_instance(4);
  m.state.teachers = TeacherPair(m.state.teachers.first().copy(false), m.state.teachers.first().copy(false));
  Tape tape;
  const ForwardResult fwd = forward_pass(m.state, m.labeled, m.unlabeled, m.cfg);
  EXPECT_EQ(fwd.breakdown.consist, 0.0);
  tape.backward(fwd.terms.consist);
  for (const auto& [name, t] : m.state.encoder.trainable()) {
    for (double g : t.grad()) EXPECT_EQ(g, 0.0) << name;
  }
}

TEST(Routing, ZeroingLambda1RemovesExactlyThePseudoLabelGradient) {
  MicroInstance m = make_micro_instance(5);
  auto grads = [&](const TrainConfig& cfg, bool pl_only) {
    Tape tape;
    const ForwardResult fwd = forward_pass(m.state, m.labeled, m.unlabeled, cfg);
    const NamedTensors params = optimizer_parameters(m.state, cfg.variant);
    for (auto [n, t] : params) t.zero_grad();
    tape.backward(pl_only ? fwd.terms.pl : total_loss(fwd.terms, cfg.weights));
    std::vector<double> out;
    for (const auto& [n, t] : params) {
      const auto g = flat_grad(t);
      out.insert(out.end(), g.begin(), g.end());
    }
    return out;
  };
  TrainConfig without = m.cfg;
  without.weights.lambda1 = 0.0;
  const auto g_with = grads(m.cfg, false);
  const auto g_without = grads(without, false);
  const auto g_pl = grads(m.cfg, true);
  double pl_norm = 0.0;
  for (std::size_t i = 0; i < g_with.size(); ++i) {
    EXPECT_NEAR(g_with[i] - g_without[i], m.cfg.weights.lambda1 * g_pl[i], 1e-10) << i;
    pl_norm += g_pl[i] * g_pl[i];
  }
  EXPECT_GT(pl_norm, 0.0);
}

TEST(Routing, SupervisedBaselineLeavesClassWeightsAlone) {
  MicroInstance m = make_micro_instance(6);
  m.cfg.variant = Variant::kSupervisedBaseline;
  const Params before = params_of(m.state);
  train_step(m.state, m.labeled, SceneBatch{}, m.cfg);
  const Params after = params_of(m.state);
  for (const auto& [name, t] : m.state.cwt.trainable()) {
    EXPECT_EQ(after.at(name), before.at(name)) << name;
    double norm = 0.0;
    for (double g : t.grad()) norm += g * g;
    EXPECT_EQ(norm, 0.0) << name;
  }
  EXPECT_EQ(after.at("teacher1.weight"), before.at("teacher1.weight"));
  EXPECT_EQ(m.state.teachers.last_update_step(), -1);
}

// ---------------------------------------------------------------------------

TEST(Variants, WiringLadder) {
  EXPECT_FALSE(make_variant(Variant::kSupervisedBaseline).uses_unlabeled);
  const auto stfw = make_variant(Variant::kSingleTeacher);
  EXPECT_TRUE(stfw.uses_unlabeled);
  EXPECT_FALSE(stfw.dual_teachers || stfw.consistency || stfw.class_weights);
  const auto complete = make_variant(Variant::kComplete);
  EXPECT_TRUE(complete.dual_teachers && complete.consensus_labels && complete.consistency &&
              complete.class_weights);
  EXPECT_THROW(parse_variant("BOGUS"), ConfigError);
  for (Variant v : all_variants()) EXPECT_EQ(parse_variant(variant_name(v)), v);
}

TEST(Variants, ConsensusToggleOnlyChangesPseudoLabelSource) {
  const MicroInstance m = make_micro_instance(7);
  auto trace_of = [&](Variant v) {
    TrainConfig cfg = m.cfg;
    cfg.variant = v;
    StepTrace trace;
    forward_pass(m.state, m.labeled, m.unlabeled, cfg, &trace);
    return trace;
  };
  const StepTrace dtfw = trace_of(Variant::kDualTeacher);
  const StepTrace dtc = trace_of(Variant::kDualConsensus);
  ASSERT_EQ(dtfw.size(), dtc.size());
  std::vector<std::pair<std::string, std::string>> diff;
  for (std::size_t i = 0; i < dtc.size(); ++i) {
    if (dtfw[i] != dtc[i]) diff.emplace_back(dtfw[i], dtc[i]);
  }
  ASSERT_EQ(diff.size(), 1u);
  EXPECT_EQ(diff[0].first, "pseudo_labels:teacher1");
  EXPECT_EQ(diff[0].second, "pseudo_labels:consensus");

  const StepTrace stfw = trace_of(Variant::kSingleTeacher);
  EXPECT_EQ(std::count(stfw.begin(), stfw.end(), "teacher2:unlabeled"), 0);
  EXPECT_EQ(std::count(stfw.begin(), stfw.end(), "loss:consist"), 0);
  const StepTrace stb = trace_of(Variant::kSupervisedBaseline);
  EXPECT_EQ(stb, (StepTrace{"encode:labeled", "student:labeled", "loss:ce:unit"}));
}

TEST(Variants, DegenerateConfigIsPlainSupervised) {
  MicroInstance m = make_micro_instance(8);
  m.cfg.weights = {.lambda1 = 0.0, .lambda2 = 0.0, .lambda3 = 0.0};
  m.cfg.variant = Variant::kSingleTeacher;
  const ForwardResult fwd = forward_pass(m.state, m.labeled, SceneBatch{}, m.cfg);
  EXPECT_EQ(fwd.breakdown.total, fwd.breakdown.ce);
  EXPECT_EQ(fwd.breakdown.ce, supervised_ce(head_forward(m.state.student, encode(m.state.encoder, m.labeled.images())),
                                            std::nullopt, m.labeled.training_masks())
                                  .item());
  EXPECT_TRUE(fwd.breakdown.empty_unlabeled);
}

// ---------------------------------------------------------------------------

TEST(TrainStep, ZeroLearningRateFreezesStudentOnly) {
  MicroInstance m = make_micro_instance(9);
  m.cfg.lr = 0.0;
  const Params before = params_of(m.state);
  train_step(m.state, m.labeled, m.unlabeled, m.cfg);
  const Params after = params_of(m.state);
  for (const auto& [name, v] : before) {
    if (name.rfind("teacher1", 0) == 0) {
      EXPECT_NE(after.at(name), v) << name;
    } else {
      EXPECT_EQ(after.at(name), v) << name;
    }
  }
}

TEST(TrainStep, RejectsMismatchedBatches) {
  MicroInstance m = make_micro_instance(10);
  EXPECT_THROW(train_step(m.state, m.unlabeled, SceneBatch{}, [&] {
                 TrainConfig c = m.cfg;
                 c.batch.labeled = 2;
                 return c;
               }()),
               ContractError);
}

TEST(TrainStep, NonFiniteLossAbortsWithComponent) {
  MicroInstance m = make_micro_instance(11);
  m.state.student.bias.mutable_values()[0] = std::numeric_limits<double>::infinity();
  try {
    train_step(m.state, m.labeled, m.unlabeled, m.cfg);
    FAIL() << "expected a numeric abort";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.component(), "ce");
    EXPECT_NE(std::string(e.what()).find("ce="), std::string::npos);
  }
}

TEST(TrainStep, MomentumAccumulates) {
  MicroInstance m = make_micro_instance(12);
  m.cfg.lr = 0.0;  // keep the gradient fixed between the two steps
  m.cfg.variant = Variant::kSupervisedBaseline;
  train_step(m.state, m.labeled, SceneBatch{}, m.cfg);
  const auto g = flat_grad(m.state.student.weight);
  train_step(m.state, m.labeled, SceneBatch{}, m.cfg);
  const auto& v = m.state.velocity.at("student.weight");
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(v[i], (1.0 + m.cfg.momentum) * g[i], 1e-15);
  EXPECT_EQ(m.state.step, 2);
}

// ---------------------------------------------------------------------------

namespace {

TrainConfig small_config(Variant v = Variant::kComplete) {
  TrainConfig cfg;
  cfg.dims.height = cfg.dims.width = 8;
  cfg.epochs = 3;
  cfg.steps_per_epoch = 4;
  cfg.data.train_scenes = 24;
  cfg.data.labeled_ratio = 0.25;
  cfg.data.eval_scenes = 6;
  cfg.variant = v;
  return cfg;
}

}  // namespace

TEST(Run, DeterministicHistory) {
  const TrainConfig cfg = small_config();
  const MetricsHistory a = run(cfg), b = run(cfg);
  ASSERT_EQ(a.rows.size(), 3u);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].miou, b.rows[i].miou);
    EXPECT_EQ(a.rows[i].total, b.rows[i].total);
    EXPECT_EQ(a.rows[i].weight_deviation, b.rows[i].weight_deviation);
    EXPECT_EQ(a.rows[i].epoch, static_cast<std::int64_t>(i + 1));
  }
}

TEST(Run, OneEpochGivesOneRowAndZeroEpochsIsRejected) {
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  EXPECT_EQ(run(cfg).rows.size(), 1u);
  cfg.epochs = 0;
  EXPECT_THROW(run(cfg), ConfigError);
}

TEST(Run, NeverReadsHiddenMasks) {
  const std::size_t before = hidden_mask_reads();
  run(small_config());
  run(small_config(Variant::kSingleTeacher));
  EXPECT_EQ(hidden_mask_reads(), before);
}

TEST(Run, GradientSharesAreADistribution) {
  const MetricsHistory h = run(small_config());
  for (const auto& r : h.rows) {
    ASSERT_TRUE(r.shares.defined);
    EXPECT_NEAR(r.shares.ce + r.shares.pl + r.shares.consist + r.shares.reg, 1.0, 1e-12);
    EXPECT_GT(r.shares.ce, 0.0);
    EXPECT_GE(r.miou, 0.0);
    EXPECT_LE(r.miou, 1.0);
  }
}

TEST(Run, BatchesArePureFunctionsOfStep) {
  const Trainer a(small_config()), b(small_config());
  for (std::int64_t s : {0, 5, 11}) {
    const auto [la, ua] = a.batches_for_step(s);
    const auto [lb, ub] = b.batches_for_step(s);
    EXPECT_EQ(la.seeds(), lb.seeds());
    EXPECT_EQ(ua.seeds(), ub.seeds());
    EXPECT_EQ(la.size(), 4u);
    for (auto f : la.labeled_flags()) EXPECT_EQ(f, 1);
    for (auto f : ua.labeled_flags()) EXPECT_EQ(f, 0);
  }
}

TEST(Run, EvaluationScenesAreDisjointFromTraining) {
  const Trainer t(small_config());
  for (const auto& e : t.eval_set().samples) {
    for (const auto& s : t.train_set().samples) EXPECT_NE(e.seed, s.seed);
  }
}

TEST(Run, StrongRegulariserPullsWeightsToUnity) {
  TrainConfig weak = small_config(), strong = small_config();
  weak.lr = strong.lr = 0.01;
  weak.weights.lambda3 = 0.0;
  strong.weights.lambda3 = 1.0;
  EXPECT_LT(run(strong).rows.back().weight_deviation, run(weak).rows.back().weight_deviation);
}
