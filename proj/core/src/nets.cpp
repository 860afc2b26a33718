#include "weatherseg/nets.hpp"

#include <cmath>
#include <random>

#include "weatherseg/errors.hpp"

namespace weatherseg {

namespace {

Tensor uniform_weight(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = glorot_bound(fan_in, fan_out);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(fan_in * fan_out);
  for (auto& v : values) v = dist(rng);
  return Tensor({fan_in, fan_out}, std::move(values), true);
}

Tensor zero_bias(std::size_t n) { return Tensor::zeros({n}, true); }

}  // namespace

void ModelDims::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (features == 0) throw ConfigError("feature width D must be positive");
  if (classes < 2) throw ConfigError("class count C must be at least 2");
  if (height == 0 || width == 0) throw ConfigError("patch height and width must be positive");
  if (heads == 0 || features % heads != 0) {
    throw ConfigError("attention heads (" + std::to_string(heads) + ") must divide D (" +
                      std::to_string(features) + ")");
  }
}

NamedTensors EncoderParams::trainable() const {
  return {{"encoder.w1", w1}, {"encoder.b1", b1}, {"encoder.w2", w2}, {"encoder.b2", b2}};
}

NamedTensors HeadParams::trainable() const { return {{"weight", weight}, {"bias", bias}}; }

HeadParams HeadParams::copy(bool requires_grad) const {
  return {Tensor(weight.shape(), {weight.values().begin(), weight.values().end()}, requires_grad),
          Tensor(bias.shape(), {bias.values().begin(), bias.values().end()}, requires_grad)};
}

NamedTensors CwtParams::trainable() const {
  return {{"cwt.w_q", w_q},         {"cwt.w_k", w_k},         {"cwt.w_v", w_v},
          {"cwt.ln_gain", ln_gain}, {"cwt.ln_bias", ln_bias}, {"cwt.mlp_w1", mlp_w1},
          {"cwt.mlp_b1", mlp_b1},   {"cwt.mlp_w2", mlp_w2},   {"cwt.mlp_b2", mlp_b2}};
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor neighbourhood_kernel(std::size_t features) {
  static constexpr double kBlur[9] = {1, 2, 1, 2, 4, 2, 1, 2, 1};
  std::vector<double> taps(features * 9);
  for (std::size_t d = 0; d < features; ++d) {
    // Feature 0 stays local; the last feature gets the widest blend.
    const double s = features > 1 ? 0.75 * static_cast<double>(d) / static_cast<double>(features - 1)
                                  : 0.0;
    for (std::size_t t = 0; t < 9; ++t) {
      taps[d * 9 + t] = s * kBlur[t] / 16.0 + (t == 4 ? 1.0 - s : 0.0);
    }
  }
  return Tensor({features, 9}, std::move(taps), false);
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  std::mt19937_64 rng(seed);
  const std::size_t D = dims.features, C = dims.classes;

  ModelParams p;
  p.encoder.w1 = uniform_weight(rng, dims.in_channels, D);
  p.encoder.b1 = zero_bias(D);
  p.encoder.w2 = uniform_weight(rng, D, D);
  p.encoder.b2 = zero_bias(D);
  p.encoder.mix = neighbourhood_kernel(D);

  p.student.weight = uniform_weight(rng, D, C);
  p.student.bias = zero_bias(C);
  p.teacher1 = p.student.copy(false);
  p.teacher2 = p.student.copy(false);

  p.cwt.w_q = uniform_weight(rng, D, D);
  p.cwt.w_k = uniform_weight(rng, 2 * D, D);
  p.cwt.w_v = uniform_weight(rng, 2 * D, D);
  p.cwt.ln_gain = Tensor::full({D}, 1.0, true);
  p.cwt.ln_bias = zero_bias(D);
  p.cwt.mlp_w1 = uniform_weight(rng, D, D);
  p.cwt.mlp_b1 = zero_bias(D);
  p.cwt.mlp_w2 = uniform_weight(rng, D, C);
  p.cwt.mlp_b2 = Tensor::full({C}, 1.0, true);  // w_class ≈ 1 at step 0
  return p;
}

FeatureBatch encode(const EncoderParams& params, const Tensor& images) {
  if (images.rank() != 4 || images.dim(3) != params.w1.dim(0)) {
    throw ShapeError("encode: images " + to_string(images.shape()) +
                     " do not match encoder input width " + std::to_string(params.w1.dim(0)));
  }
  const std::size_t B = images.dim(0), H = images.dim(1), W = images.dim(2);
  const std::size_t D = params.w1.dim(1);
  const Tensor x = reshape(images, {B * H * W, images.dim(3)});
  const Tensor h1 = relu(add_bias(matmul(x, params.w1), params.b1));
  const Tensor h2 = relu(add_bias(matmul(h1, params.w2), params.b2));
  Tensor map = spatial_mix(reshape(h2, {B, H, W, D}), params.mix);
  Tensor pooled = segment_mean(reshape(map, {B * H * W, D}), H * W);
  return {std::move(map), std::move(pooled)};
}

Tensor head_forward(const HeadParams& params, const FeatureBatch& features) {
  const Tensor& map = features.map;
  if (map.rank() != 4 || map.dim(3) != params.weight.dim(0)) {
    throw ShapeError("head_forward: features " + to_string(map.shape()) +
                     " do not match head weight " + to_string(params.weight.shape()));
  }
  const std::size_t B = map.dim(0), H = map.dim(1), W = map.dim(2), D = map.dim(3);
  const std::size_t C = params.weight.dim(1);
  const Tensor flat = reshape(map, {B * H * W, D});
  return reshape(add_bias(matmul(flat, params.weight), params.bias), {B, H, W, C});
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.shape() != v.shape()) {
    throw ShapeError("attention: incompatible q " + to_string(q.shape()) + ", k " +
                     to_string(k.shape()) + ", v " + to_string(v.shape()));
  }
  const std::size_t width = q.dim(1);
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide width " +
                      std::to_string(width));
  }
  const std::size_t dk = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_last(q, h * dk, dk);
    const Tensor kh = slice_last(k, h * dk, dk);
    const Tensor vh = slice_last(v, h * dk, dk);
    const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
    outputs.push_back(matmul(weights, vh));
  }
  return heads == 1 ? outputs.front() : concat_last(outputs);
}

Tensor cwt_forward(const CwtParams& params, const Tensor& student_features,
                   const Tensor& teacher_features, std::size_t heads) {
  const std::size_t D = params.w_q.dim(0);
  if (student_features.rank() != 2 || student_features.dim(1) != D ||
      teacher_features.rank() != 2 || teacher_features.dim(1) != 2 * D ||
      teacher_features.dim(0) != student_features.dim(0)) {
    throw ShapeError("cwt_forward: expected h_s [Bx" + std::to_string(D) + "] and H_t [Bx" +
                     std::to_string(2 * D) + "], got " + to_string(student_features.shape()) +
                     " and " + to_string(teacher_features.shape()));
  }
  if (heads == 0 || D % heads != 0) {
    throw ConfigError("cwt_forward: " + std::to_string(heads) + " heads do not divide D=" +
                      std::to_string(D));
  }
  const Tensor q = matmul(student_features, params.w_q);
  const Tensor k = matmul(teacher_features, params.w_k);
  const Tensor v = matmul(teacher_features, params.w_v);
  const Tensor normed = layer_norm(attention(q, k, v, heads), params.ln_gain, params.ln_bias,
                                   kLayerNormEps);
  const Tensor hidden = relu(add_bias(matmul(normed, params.mlp_w1), params.mlp_b1));
  return add_bias(matmul(hidden, params.mlp_w2), params.mlp_b2);
}

}  // namespace weatherseg
