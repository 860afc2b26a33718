#include "weatherseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>

#include "weatherseg/errors.hpp"
#include "weatherseg/losses.hpp"
#include "weatherseg/nets.hpp"
#include "weatherseg/pseudo_label.hpp"
#include "weatherseg/rng.hpp"

namespace weatherseg {

namespace {

constexpr std::uint64_t kMicroDomain = 0x6d696372ULL;
constexpr std::uint64_t kSweepDomain = 0x73776570ULL;
constexpr double kKinkMargin = 1e-3;

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi,
                     bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(element_count(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero, for relu inputs.
Tensor signed_tensor(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(element_count(shape));
  for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// Reduces any output to a scalar with fixed random coefficients, so every
// output coordinate contributes.
struct Projector {
  explicit Projector(std::uint64_t seed) : rng(seed) {}
  Tensor operator()(const Tensor& out) {
    auto it = coeffs.find(out.shape());
    if (it == coeffs.end()) {
      it = coeffs.emplace(out.shape(), random_tensor(rng, out.shape(), -1.0, 1.0, false)).first;
    }
    return sum(mul(out, it->second));
  }
  std::mt19937_64 rng;
  std::map<Shape, Tensor> coeffs;
};

double min_abs(std::span<const double> values) {
  double m = INFINITY;
  for (double v : values) m = std::min(m, std::abs(v));
  return m;
}

// Smallest distance of any relu input or consensus probability from its kink.
double kink_margin(const MicroInstance& mi) {
  NoGradGuard no_grad;
  const auto& enc = mi.state.encoder;
  double margin = INFINITY;
  for (const SceneBatch* batch : {&mi.labeled, &mi.unlabeled}) {
    const Tensor& img = batch->images();
    const Tensor x = reshape(img, {img.size() / img.dim(3), img.dim(3)});
    const Tensor pre1 = add_bias(matmul(x, enc.w1), enc.b1);
    const Tensor pre2 = add_bias(matmul(relu(pre1), enc.w2), enc.b2);
    margin = std::min({margin, min_abs(pre1.values()), min_abs(pre2.values())});
  }
  const FeatureBatch fl = encode(enc, mi.labeled.images());
  const FeatureBatch fu = encode(enc, mi.unlabeled.images());
  const Tensor h_s = concat_rows({fl.pooled, fu.pooled});
  const Tensor h_t = concat_last({h_s, h_s});
  const auto& cwt = mi.state.cwt;
  const Tensor normed =
      layer_norm(attention(matmul(h_s, cwt.w_q), matmul(h_t, cwt.w_k), matmul(h_t, cwt.w_v),
                           mi.cfg.dims.heads),
                 cwt.ln_gain, cwt.ln_bias, kLayerNormEps);
  margin = std::min(margin, min_abs(add_bias(matmul(normed, cwt.mlp_w1), cwt.mlp_b1).values()));

  const std::size_t C = mi.cfg.dims.classes;
  const Tensor t1 = head_forward(mi.state.teachers.first(), fu);
  const Tensor t2 = head_forward(mi.state.teachers.second(), fu);
  const Tensor p = consensus(softmax(reshape(t1, {t1.size() / C, C})),
                             softmax(reshape(t2, {t2.size() / C, C})));
  std::size_t confident = 0;
  for (std::size_t r = 0; r < p.dim(0); ++r) {
    double best = 0.0;
    for (std::size_t c = 0; c < C; ++c) best = std::max(best, p[r * C + c]);
    margin = std::min(margin, std::abs(best - mi.cfg.tau));
    confident += best > mi.cfg.tau ? 1 : 0;
  }
  // Both branches of the threshold must be exercised.
  if (confident == 0 || confident == p.dim(0)) return 0.0;
  return margin;
}

MicroInstance build_micro(std::uint64_t seed) {
  MicroInstance mi;
  mi.cfg.dims = ModelDims{.in_channels = 3, .features = 2, .classes = 2, .height = 2, .width = 2,
                          .heads = 1};
  mi.cfg.batch = BatchSpec{.labeled = 1, .unlabeled = 1};
  mi.cfg.data.train_scenes = 2;
  mi.cfg.data.labeled_ratio = 0.5;
  mi.cfg.data.eval_scenes = 1;
  mi.cfg.variant = Variant::kComplete;
  mi.cfg.seed = seed;
  mi.state = init_state(mi.cfg);

  // Sharpened, slightly different teachers.
  auto sharpen = [](const HeadParams& h, double factor, double shift) {
    HeadParams out = h.copy(false);
    for (double& v : out.weight.mutable_values()) v *= factor;
    auto b = out.bias.mutable_values();
    b[0] += shift;
    return out;
  };
  mi.state.teachers = TeacherPair(sharpen(mi.state.teachers.first(), 12.0, 0.5),
                                  sharpen(mi.state.teachers.second(), 11.0, -0.3));

  std::vector<SceneSample> samples(2);
  for (std::size_t i = 0; i < 2; ++i) {
    const Scene s = generate_scene(mi.cfg.dims, WeatherConfig::from_beta(0.2 + 0.3 * static_cast<double>(i)),
                                   derive_seed(seed, kMicroDomain, i));
    samples[i].image = s.image;
    samples[i].mask = s.mask;
    samples[i].labeled = i == 0;
    samples[i].weather = WeatherConfig::from_beta(0.2 + 0.3 * static_cast<double>(i));
    samples[i].seed = derive_seed(seed, kMicroDomain, i);
  }
  mi.labeled = SceneBatch(mi.cfg.dims, {&samples[0]});
  mi.unlabeled = SceneBatch(mi.cfg.dims, {&samples[1]});
  return mi;
}

}  // namespace

GradCheckResult check_gradients(std::string name, const std::vector<Tensor>& inputs,
                                const std::function<Tensor()>& loss, const GradCheckOptions& opts) {
  GradCheckResult r;
  r.name = std::move(name);
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    for (Tensor t : inputs) {
      if (!t.requires_grad()) throw ContractError("gradcheck input of '" + r.name + "' has no grad");
      t.zero_grad();
    }
    const Tensor l = loss();
    if (l.size() != 1) throw ContractError("gradcheck loss of '" + r.name + "' is not a scalar");
    if (l.requires_grad()) tape.backward(l);
    for (const Tensor& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  }

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i];
    auto values = t.mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double orig = values[j];
      values[j] = orig + opts.eps;
      const double up = loss().item();
      values[j] = orig - opts.eps;
      const double down = loss().item();
      values[j] = orig;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[i][j];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), opts.floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      r.max_rel_error = std::max(r.max_rel_error, rel_err);
      ++r.coordinates;
    }
  }
  r.passed = r.max_rel_error < opts.tolerance;
  return r;
}

MicroInstance make_micro_instance(std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    MicroInstance mi = build_micro(derive_seed(seed, kMicroDomain, attempt));
    if (kink_margin(mi) > kKinkMargin) return mi;
  }
  throw NumericError("gradcheck", "no kink-free micro instance found");
}

std::vector<GradCheckResult> gradcheck_sweep(std::uint64_t seed, const GradCheckOptions& opts) {
  std::mt19937_64 rng(derive_seed(seed, kSweepDomain));
  Projector project(derive_seed(seed, kSweepDomain, 1));
  std::vector<GradCheckResult> out;
  auto run = [&](std::string name, std::vector<Tensor> inputs, std::function<Tensor()> f) {
    out.push_back(check_gradients(std::move(name), inputs, f, opts));
  };

  {
    Tensor a = random_tensor(rng, {3, 4}, -1, 1), b = random_tensor(rng, {3, 4}, -1, 1);
    run("add", {a, b}, [&, a, b] { return project(add(a, b)); });
    run("sub", {a, b}, [&, a, b] { return project(sub(a, b)); });
    run("mul", {a, b}, [&, a, b] { return project(mul(a, b)); });
    run("scale", {a}, [&, a] { return project(scale(a, -1.7)); });
    run("add_scalar", {a}, [&, a] { return project(add_scalar(a, 0.3)); });
    run("transpose", {a}, [&, a] { return project(transpose(a)); });
    run("reshape", {a}, [&, a] { return project(reshape(a, {2, 6})); });
    run("softmax", {a}, [&, a] { return project(softmax(a)); });
    run("log_softmax", {a}, [&, a] { return project(log_softmax(a)); });
    run("sum", {a}, [a] { return sum(a); });
    run("mean", {a}, [a] { return mean(a); });
    run("slice_last", {a}, [&, a] { return project(slice_last(a, 1, 2)); });
    run("concat_last", {a, b}, [&, a, b] { return project(concat_last({a, b})); });
    run("concat_rows", {a, b}, [&, a, b] { return project(concat_rows({a, b})); });
    run("repeat_rows", {a}, [&, a] { return project(repeat_rows(a, 3)); });
    run("segment_mean", {a}, [&, a] { return project(segment_mean(a, 3)); });
  }
  {
    Tensor a = random_tensor(rng, {3, 4}, -1, 1), b = random_tensor(rng, {4, 2}, -1, 1);
    run("matmul", {a, b}, [&, a, b] { return project(matmul(a, b)); });
    Tensor bias = random_tensor(rng, {4}, -1, 1);
    run("add_bias", {a, bias}, [&, a, bias] { return project(add_bias(a, bias)); });
  }
  {
    Tensor x = signed_tensor(rng, {3, 4});
    run("relu", {x}, [&, x] { return project(relu(x)); });
    Tensor pos = random_tensor(rng, {3, 4}, 0.5, 2.0);
    run("log", {pos}, [&, pos] { return project(log(pos)); });
  }
  {
    Tensor x = random_tensor(rng, {3, 5}, -2, 2), g = random_tensor(rng, {5}, 0.5, 1.5),
           b = random_tensor(rng, {5}, -0.5, 0.5);
    run("layer_norm", {x, g, b}, [&, x, g, b] { return project(layer_norm(x, g, b, kLayerNormEps)); });
  }
  {
    Tensor map = random_tensor(rng, {2, 3, 3, 4}, -1, 1);
    const Tensor kernel = neighbourhood_kernel(4);
    run("spatial_mix", {map}, [&, map, kernel] { return project(spatial_mix(map, kernel)); });
  }
  {
    Tensor x = random_tensor(rng, {5, 3}, -2, 2);
    const std::vector<int> labels{0, 2, 3, 1, 2};
    run("masked_nll", {x}, [x, labels] { return masked_nll(log_softmax(x), labels, 3); });
  }

  // Network pieces.
  const ModelDims dims{.in_channels = 3, .features = 4, .classes = 3, .height = 3, .width = 3,
                       .heads = 2};
  const ModelParams params = init_params(dims, derive_seed(seed, kSweepDomain, 2));
  {
    const Tensor images = random_tensor(rng, {2, 3, 3, 3}, 0.0, 1.0, false);
    std::vector<Tensor> inputs;
    for (const auto& [n, t] : params.encoder.trainable()) inputs.push_back(t);
    const EncoderParams enc = params.encoder;
    run("encode", inputs, [&, enc, images] {
      const FeatureBatch f = encode(enc, images);
      return add(project(f.map), project(f.pooled));
    });
  }
  {
    Tensor map = random_tensor(rng, {2, 3, 3, 4}, -1, 1);
    const HeadParams head = params.student;
    run("head_forward", {head.weight, head.bias, map}, [&, head, map] {
      return project(head_forward(head, FeatureBatch{map, segment_mean(reshape(map, {18, 4}), 9)}));
    });
  }
  {
    Tensor q = random_tensor(rng, {3, 4}, -1, 1), k = random_tensor(rng, {3, 4}, -1, 1),
           v = random_tensor(rng, {3, 4}, -1, 1);
    run("attention", {q, k, v}, [&, q, k, v] { return project(attention(q, k, v, 2)); });
  }
  {
    Tensor h_s = random_tensor(rng, {3, 4}, -1, 1), h_t = random_tensor(rng, {3, 8}, -1, 1);
    std::vector<Tensor> inputs{h_s, h_t};
    for (const auto& [n, t] : params.cwt.trainable()) inputs.push_back(t);
    const CwtParams cwt = params.cwt;
    run("cwt_forward", inputs, [&, cwt, h_s, h_t] { return project(cwt_forward(cwt, h_s, h_t, 2)); });
  }

  // Losses.
  {
    Tensor t1 = random_tensor(rng, {2, 2, 2, 3}, -2, 2), t2 = random_tensor(rng, {2, 2, 2, 3}, -2, 2);
    run("consistency_loss", {t1, t2}, [t1, t2] { return consistency_loss(t1, t2, 2).value; });
  }
  {
    Tensor logits = random_tensor(rng, {2, 2, 2, 3}, -2, 2), w = random_tensor(rng, {2, 3}, 0.5, 1.5);
    const std::vector<int> truth{0, 1, 2, 0, 2, 2, 1, 0};
    run("supervised_ce", {logits, w},
        [logits, w, truth] { return supervised_ce(logits, w, truth); });
    const Tensor probs(
        {8, 3}, {0.97, 0.02, 0.01, 0.4, 0.3, 0.3, 0.01, 0.98, 0.01, 0.2, 0.2, 0.6,
                 0.01, 0.01, 0.98, 0.5, 0.49, 0.01, 0.96, 0.03, 0.01, 0.3, 0.3, 0.4});
    const PseudoLabelBatch plb = threshold_labels(probs, 0.95);
    run("pseudo_label_loss", {logits, w},
        [logits, w, plb] { return pseudo_label_loss(logits, w, plb).value; });
    run("weight_regularizer", {w}, [w] { return weight_regularizer(w); });
  }

  // Weighted total on the micro instance.
  {
    const MicroInstance mi = make_micro_instance(seed);
    std::vector<Tensor> inputs;
    for (const auto& [n, t] : optimizer_parameters(mi.state, mi.cfg.variant)) inputs.push_back(t);
    run("total_loss_micro", inputs, [&mi] {
      return total_loss(forward_pass(mi.state, mi.labeled, mi.unlabeled, mi.cfg).terms,
                        mi.cfg.weights);
    });
  }
  return out;
}

void write_gradcheck_csv(std::ostream& os, const std::vector<GradCheckResult>& rows) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << "name,coordinates,max_rel_error,max_abs_error,passed\n" << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.name << ',' << r.coordinates << ',' << r.max_rel_error << ',' << r.max_abs_error << ','
       << (r.passed ? 1 : 0) << '\n';
  }
  os.flags(flags);
  os.precision(precision);
}

}  // namespace weatherseg
