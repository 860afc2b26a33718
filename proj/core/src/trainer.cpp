#include "weatherseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "weatherseg/errors.hpp"
#include "weatherseg/pseudo_label.hpp"
#include "weatherseg/rng.hpp"

namespace weatherseg {

namespace {

constexpr std::uint64_t kInitDomain = 0x696e6974ULL;
constexpr std::uint64_t kTeacherDomain = 0x74636872ULL;
constexpr std::uint64_t kDataDomain = 0x64617461ULL;
constexpr std::uint64_t kEvalDomain = 0x6576616cULL;
constexpr std::uint64_t kBatchDomain = 0x62617463ULL;

Tensor take_rows(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t cols = x.dim(1);
  return reshape(slice_last(reshape(x, {1, x.size()}), start * cols, count * cols), {count, cols});
}

// Teacher heads sit on the shared encoder, so both teacher feature views are
// the encoder output itself.
Tensor teacher_context(const Tensor& pooled) { return concat_last({pooled, pooled}); }

std::vector<int> argmax_rows(const Tensor& flat) {
  const std::size_t C = flat.dim(1), rows = flat.dim(0);
  std::vector<int> out(rows);
  const auto v = flat.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (v[r * C + c] > v[r * C + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

void note(StepTrace* trace, std::string entry) {
  if (trace) trace->push_back(std::move(entry));
}

std::vector<std::size_t> draw(std::mt19937_64& rng, const std::vector<std::size_t>& pool,
                              std::size_t count) {
  std::vector<std::size_t> out;
  if (pool.empty() || count == 0) return out;
  if (pool.size() >= count) {
    std::vector<std::size_t> work = pool;
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, work.size() - 1);
      std::swap(work[i], work[pick(rng)]);
    }
    out.assign(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t i = 0; i < count; ++i) out.push_back(pool[pick(rng)]);
  }
  return out;
}

struct ChunkOutput {
  std::vector<int> labels;
  std::vector<double> weight_norms;  // ‖w_b − 1‖ per image, empty without class weights
};

ChunkOutput infer(const TrainState& state, const Tensor& images, const TrainConfig& cfg) {
  NoGradGuard no_grad;
  const VariantWiring wiring = make_variant(cfg.variant);
  const std::size_t B = images.dim(0);
  const std::size_t chunk = std::max<std::size_t>(1, cfg.batch.total());
  const std::size_t per_image = images.size() / std::max<std::size_t>(B, 1);
  ChunkOutput out;
  for (std::size_t start = 0; start < B; start += chunk) {
    const std::size_t n = std::min(chunk, B - start);
    const Tensor part(
        {n, images.dim(1), images.dim(2), images.dim(3)},
        std::vector<double>(images.values().begin() + static_cast<std::ptrdiff_t>(start * per_image),
                            images.values().begin() +
                                static_cast<std::ptrdiff_t>((start + n) * per_image)));
    const FeatureBatch f = encode(state.encoder, part);
    const Tensor logits = head_forward(state.student, f);
    std::optional<Tensor> w;
    if (wiring.class_weights) {
      w = cwt_forward(state.cwt, f.pooled, teacher_context(f.pooled), cfg.dims.heads);
      const std::size_t C = w->dim(1);
      for (std::size_t b = 0; b < n; ++b) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += ((*w)[b * C + c] - 1.0) * ((*w)[b * C + c] - 1.0);
        out.weight_norms.push_back(std::sqrt(acc));
      }
    }
    const auto labels = argmax_rows(modulate_logits(logits, w));
    out.labels.insert(out.labels.end(), labels.begin(), labels.end());
  }
  return out;
}

void require_finite(const LossBreakdown& b) {
  const std::pair<const char*, double> parts[] = {
      {"ce", b.ce}, {"pl", b.pl}, {"consist", b.consist}, {"reg", b.reg}, {"total", b.total}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "non-finite loss component '" << name << "' at step " << b.step << " (ce=" << b.ce
          << " pl=" << b.pl << " consist=" << b.consist << " reg=" << b.reg << " total=" << b.total
          << " confident=" << b.confident << ")";
      throw NumericError(name, msg.str());
    }
  }
}

}  // namespace

VariantWiring make_variant(Variant variant) {
  switch (variant) {
    case Variant::kSupervisedBaseline:
      return {};
    case Variant::kSingleTeacher:
      return {.uses_unlabeled = true};
    case Variant::kDualTeacher:
      return {.uses_unlabeled = true, .dual_teachers = true, .consistency = true};
    case Variant::kDualConsensus:
      return {.uses_unlabeled = true,
              .dual_teachers = true,
              .consensus_labels = true,
              .consistency = true};
    case Variant::kComplete:
      return {.uses_unlabeled = true,
              .dual_teachers = true,
              .consensus_labels = true,
              .consistency = true,
              .class_weights = true};
  }
  throw ConfigError("unknown variant");
}

TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  ModelParams params = init_params(cfg.dims, derive_seed(cfg.seed, kInitDomain));
  TrainState state;
  state.encoder = params.encoder;
  state.student = params.student;
  state.cwt = params.cwt;
  const double spread =
      cfg.teacher_perturbation * glorot_bound(cfg.dims.features, cfg.dims.classes);
  state.teachers =
      TeacherPair::from_student(state.student, spread, derive_seed(cfg.seed, kTeacherDomain));
  return state;
}

NamedTensors optimizer_parameters(const TrainState& state, Variant variant) {
  NamedTensors out = state.encoder.trainable();
  for (auto& [name, t] : state.student.trainable()) out.emplace_back("student." + name, t);
  if (make_variant(variant).class_weights) {
    for (auto& entry : state.cwt.trainable()) out.push_back(entry);
  }
  return out;
}

ForwardResult forward_pass(const TrainState& state, const SceneBatch& labeled,
                           const SceneBatch& unlabeled, const TrainConfig& cfg, StepTrace* trace) {
  const VariantWiring wiring = make_variant(cfg.variant);
  const std::size_t BL = labeled.size();
  const bool with_unlabeled = wiring.uses_unlabeled && !unlabeled.empty();
  const std::size_t BU = with_unlabeled ? unlabeled.size() : 0;

  ForwardResult out;
  out.breakdown.batch_labeled = BL;
  out.breakdown.batch_unlabeled = BU;

  const FeatureBatch feat_l = encode(state.encoder, labeled.images());
  const Tensor logits_l = head_forward(state.student, feat_l);
  note(trace, "encode:labeled");
  note(trace, "student:labeled");

  FeatureBatch feat_u;
  Tensor logits_u;
  if (with_unlabeled) {
    feat_u = encode(state.encoder, unlabeled.images());
    logits_u = head_forward(state.student, feat_u);
    note(trace, "encode:unlabeled");
    note(trace, "student:unlabeled");
  }

  std::optional<Tensor> w_l, w_u;
  if (wiring.class_weights) {
    const Tensor h_s = with_unlabeled ? concat_rows({feat_l.pooled, feat_u.pooled}) : feat_l.pooled;
    out.w_class = cwt_forward(state.cwt, h_s, teacher_context(h_s), cfg.dims.heads);
    w_l = take_rows(*out.w_class, 0, BL);
    if (with_unlabeled) w_u = take_rows(*out.w_class, BL, BU);
    note(trace, "cwt:class_weights");
  }

  out.terms.ce = supervised_ce(logits_l, w_l, labeled.training_masks());
  note(trace, wiring.class_weights ? "loss:ce:weighted" : "loss:ce:unit");

  out.terms.pl = Tensor::scalar(0.0);
  out.terms.consist = Tensor::scalar(0.0);
  out.breakdown.empty_unlabeled = !with_unlabeled;
  if (with_unlabeled) {
    const Tensor t1 = head_forward(state.teachers.first(), feat_u);
    note(trace, "teacher1:unlabeled");
    std::optional<Tensor> t2;
    if (wiring.dual_teachers) {
      t2 = head_forward(state.teachers.second(), feat_u);
      note(trace, "teacher2:unlabeled");
    }

    PseudoLabelBatch plb;
    {
      NoGradGuard no_grad;
      const std::size_t C = cfg.dims.classes;
      const Tensor p1 = softmax(reshape(t1.detach(), {t1.size() / C, C}));
      if (wiring.consensus_labels) {
        const Tensor p2 = softmax(reshape(t2->detach(), {t2->size() / C, C}));
        plb = threshold_labels(consensus(p1, p2), cfg.tau);
        note(trace, "pseudo_labels:consensus");
      } else {
        plb = threshold_labels(p1, cfg.tau);
        note(trace, "pseudo_labels:teacher1");
      }
    }
    LossTerm pl = pseudo_label_loss(logits_u, w_u, plb);
    out.terms.pl = pl.value;
    out.breakdown.empty_mask = pl.empty;
    out.breakdown.confident = plb.confident();
    out.breakdown.mask_fraction = plb.mask_fraction();
    note(trace, wiring.class_weights ? "loss:pl:weighted" : "loss:pl:unit");

    if (wiring.consistency) {
      out.terms.consist = consistency_loss(t1, *t2, BU).value;
      note(trace, "loss:consist");
    }
  }

  out.terms.reg = wiring.class_weights ? weight_regularizer(*out.w_class) : Tensor::scalar(0.0);
  if (wiring.class_weights) note(trace, "loss:reg");

  out.breakdown.ce = out.terms.ce.item();
  out.breakdown.pl = out.terms.pl.item();
  out.breakdown.consist = out.terms.consist.item();
  out.breakdown.reg = out.terms.reg.item();
  out.breakdown.total = total_loss(out.breakdown.ce, out.breakdown.pl, out.breakdown.consist,
                                   out.breakdown.reg, cfg.weights);
  return out;
}

LossBreakdown train_step(TrainState& state, const SceneBatch& labeled, const SceneBatch& unlabeled,
                         const TrainConfig& cfg, StepTrace* trace) {
  if (labeled.size() != cfg.batch.labeled) {
    throw ContractError("labeled batch has " + std::to_string(labeled.size()) +
                        " samples, config expects " + std::to_string(cfg.batch.labeled));
  }
  if (!unlabeled.empty() && unlabeled.size() != cfg.batch.unlabeled) {
    throw ContractError("unlabeled batch has " + std::to_string(unlabeled.size()) +
                        " samples, config expects " + std::to_string(cfg.batch.unlabeled));
  }
  const VariantWiring wiring = make_variant(cfg.variant);

  Tape tape;
  ForwardResult fwd = forward_pass(state, labeled, unlabeled, cfg, trace);
  fwd.breakdown.step = state.step;
  require_finite(fwd.breakdown);

  const Tensor total = total_loss(fwd.terms, cfg.weights);
  const NamedTensors params = optimizer_parameters(state, cfg.variant);
  for (auto [name, p] : params) p.zero_grad();
  if (total.requires_grad()) tape.backward(total);
  note(trace, "backward:total");

  for (const Tensor* teacher :
       {&state.teachers.first().weight, &state.teachers.first().bias,
        &state.teachers.second().weight, &state.teachers.second().bias}) {
    if (teacher->requires_grad()) throw ContractError("teacher parameters must not carry gradients");
    for (const auto& [name, p] : params) {
      if (p.shares_storage_with(*teacher)) {
        throw ContractError("teacher parameter '" + name + "' is in the optimiser update set");
      }
    }
  }

  for (auto [name, p] : params) {
    auto& v = state.velocity[name];
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    const auto g = p.grad();
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i];
      values[i] -= cfg.lr * v[i];
    }
  }
  note(trace, "sgd:update");

  if (wiring.uses_unlabeled) {
    state.teachers.update(state.student, state.step, cfg.ema, wiring.dual_teachers);
    note(trace, "ema:update");
  }
  ++state.step;
  state.losses.push_back(fwd.breakdown);
  return fwd.breakdown;
}

GradShares grad_share_report(const TrainState& state, const SceneBatch& labeled,
                             const SceneBatch& unlabeled, const TrainConfig& cfg) {
  Tape tape;
  const ForwardResult fwd = forward_pass(state, labeled, unlabeled, cfg);
  const NamedTensors encoder = state.encoder.trainable();
  const std::pair<Tensor, double> parts[] = {{fwd.terms.ce, 1.0},
                                             {fwd.terms.pl, cfg.weights.lambda1},
                                             {fwd.terms.consist, cfg.weights.lambda2},
                                             {fwd.terms.reg, cfg.weights.lambda3}};
  double norms[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& [term, weight] = parts[k];
    if (!term.requires_grad() || weight == 0.0) continue;
    for (auto [name, p] : encoder) p.zero_grad();
    tape.backward(scale(term, weight));
    double acc = 0.0;
    for (const auto& [name, p] : encoder) {
      for (double g : p.grad()) acc += g * g;
    }
    norms[k] = std::sqrt(acc);
  }
  for (auto [name, p] : optimizer_parameters(state, cfg.variant)) p.zero_grad();

  GradShares shares;
  const double total = norms[0] + norms[1] + norms[2] + norms[3];
  if (total > 0.0) {
    shares.defined = true;
    shares.ce = norms[0] / total;
    shares.pl = norms[1] / total;
    shares.consist = norms[2] / total;
    shares.reg = norms[3] / total;
  }
  return shares;
}

std::optional<Tensor> class_weights_for(const TrainState& state, const Tensor& images,
                                        const TrainConfig& cfg) {
  if (!make_variant(cfg.variant).class_weights) return std::nullopt;
  NoGradGuard no_grad;
  const FeatureBatch f = encode(state.encoder, images);
  return cwt_forward(state.cwt, f.pooled, teacher_context(f.pooled), cfg.dims.heads);
}

std::vector<int> predict(const TrainState& state, const Tensor& images, const TrainConfig& cfg) {
  return infer(state, images, cfg).labels;
}

EvalResult evaluate(const TrainState& state, const SceneBatch& batch, const TrainConfig& cfg) {
  const ChunkOutput out = infer(state, batch.images(), cfg);
  const auto truth = batch.evaluation_masks();
  EvalResult r;
  r.miou = miou(out.labels, truth, cfg.dims.classes);
  r.pixel_acc = pixel_accuracy(out.labels, truth);
  if (!out.weight_norms.empty()) {
    r.weight_deviation = std::accumulate(out.weight_norms.begin(), out.weight_norms.end(), 0.0) /
                         static_cast<double>(out.weight_norms.size());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig cfg) : Trainer(cfg, init_state(cfg)) {}

Trainer::Trainer(TrainConfig cfg, TrainState state) : cfg_(std::move(cfg)), state_(std::move(state)) {
  cfg_.validate();
  std::vector<WeatherConfig> modes;
  for (double b : cfg_.data.betas) modes.push_back(WeatherConfig::from_beta(b));
  train_ = make_split(cfg_.dims, cfg_.data.train_scenes, cfg_.data.labeled_ratio, modes,
                      derive_seed(cfg_.seed, kDataDomain));
  eval_ = make_split(cfg_.dims, cfg_.data.eval_scenes, 1.0, modes,
                     derive_seed(cfg_.seed, kEvalDomain));
  labeled_pool_ = train_.labeled_indices();
  unlabeled_pool_ = train_.unlabeled_indices();
}

std::pair<SceneBatch, SceneBatch> Trainer::batches_for_step(std::int64_t step) const {
  std::mt19937_64 rng(derive_seed(cfg_.seed, kBatchDomain, static_cast<std::uint64_t>(step)));
  const auto l = draw(rng, labeled_pool_, cfg_.batch.labeled);
  std::vector<std::size_t> u;
  if (make_variant(cfg_.variant).uses_unlabeled) u = draw(rng, unlabeled_pool_, cfg_.batch.unlabeled);
  return {train_.batch(l), train_.batch(u)};
}

LossBreakdown Trainer::step() {
  if (finished()) throw ContractError("training run already complete");
  auto [labeled, unlabeled] = batches_for_step(state_.step);
  LossBreakdown b = train_step(state_, labeled, unlabeled, cfg_);
  if (state_.step % static_cast<std::int64_t>(cfg_.steps_per_epoch) == 0) {
    end_of_epoch(labeled, unlabeled);
  }
  return b;
}

void Trainer::run_until(std::int64_t step) {
  while (state_.step < std::min(step, total_steps())) this->step();
}

MetricsHistory Trainer::run() {
  run_until(total_steps());
  return history();
}

MetricsHistory Trainer::history() const {
  return summarize(state_.metrics, cfg_.convergence_threshold);
}

void Trainer::end_of_epoch(const SceneBatch& labeled, const SceneBatch& unlabeled) {
  const std::size_t spe = cfg_.steps_per_epoch;
  MetricsRow row;
  row.epoch = state_.step / static_cast<std::int64_t>(spe);
  const auto first = state_.losses.end() - static_cast<std::ptrdiff_t>(spe);
  for (auto it = first; it != state_.losses.end(); ++it) {
    row.ce += it->ce;
    row.pl += it->pl;
    row.consist += it->consist;
    row.reg += it->reg;
    row.total += it->total;
    row.mask_fraction += it->mask_fraction;
  }
  const double n = static_cast<double>(spe);
  row.ce /= n;
  row.pl /= n;
  row.consist /= n;
  row.reg /= n;
  row.total /= n;
  row.mask_fraction /= n;

  const SceneBatch all = eval_.batch([&] {
    std::vector<std::size_t> idx(eval_.samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }());
  const EvalResult eval = evaluate(state_, all, cfg_);
  row.miou = eval.miou;
  row.pixel_acc = eval.pixel_acc;
  row.weight_deviation = eval.weight_deviation;
  row.shares = grad_share_report(state_, labeled, unlabeled, cfg_);
  state_.metrics.push_back(row);
}

MetricsHistory run(const TrainConfig& cfg) { return Trainer(cfg).run(); }

}  // namespace weatherseg
