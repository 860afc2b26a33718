#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "weatherseg/tensor.hpp"

namespace weatherseg {

struct ModelDims {
  std::size_t in_channels = 3;
  std::size_t features = 8;  // D
  std::size_t classes = 4;   // C
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t heads = 2;

  std::size_t head_width() const { return features / heads; }  // d_k
  std::size_t pixels() const { return height * width; }

  // Throws ConfigError on an unusable combination.
  void validate() const;

  bool operator==(const ModelDims&) const = default;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct EncoderParams {
  Tensor w1;  // [in_channels×D]
  Tensor b1;  // [D]
  Tensor w2;  // [D×D]
  Tensor b2;  // [D]
  Tensor mix;  // [D×9], fixed neighbourhood kernel; not trained

  NamedTensors trainable() const;
};

struct HeadParams {
  Tensor weight;  // [D×C]
  Tensor bias;    // [C]

  NamedTensors trainable() const;
  // Deep copy with the requested gradient flag.
  HeadParams copy(bool requires_grad) const;
};

// Class-weight generator: attention of student queries over concatenated
// teacher keys/values, then LayerNorm and a two-layer MLP.
struct CwtParams {
  Tensor w_q;      // [D×D]
  Tensor w_k;      // [2D×D]
  Tensor w_v;      // [2D×D]
  Tensor ln_gain;  // [D]
  Tensor ln_bias;  // [D]
  Tensor mlp_w1;   // [D×D]
  Tensor mlp_b1;   // [D]
  Tensor mlp_w2;   // [D×C]
  Tensor mlp_b2;   // [C]

  NamedTensors trainable() const;
};

struct ModelParams {
  EncoderParams encoder;
  HeadParams student;
  HeadParams teacher1;
  HeadParams teacher2;
  CwtParams cwt;
};

struct FeatureBatch {
  Tensor map;     // [B×H×W×D]
  Tensor pooled;  // [B×D], spatial mean of `map`

  std::size_t batch() const { return map.dim(0); }
};

inline constexpr double kLayerNormEps = 1e-5;

// Deterministic in `seed`. Weights are uniform in ±sqrt(6/(fan_in+fan_out)),
// biases zero except the class-weight generator's output bias, which is one so
// that w_class starts near unity. Both teacher heads are exact gradient-free
// copies of the student head.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

// Half-width of the uniform initialisation range for a fan_in×fan_out weight.
double glorot_bound(std::size_t fan_in, std::size_t fan_out);

// Per-feature blend between identity and a 3×3 binomial blur; fixed for a
// given feature width.
Tensor neighbourhood_kernel(std::size_t features);

FeatureBatch encode(const EncoderParams& params, const Tensor& images);

Tensor head_forward(const HeadParams& params, const FeatureBatch& features);

// Multi-head scaled dot-product attention with the batch as the sequence:
// q, k, v are [B×D]; each head attends over all B keys.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

// w_class [B×C] from student features h_s [B×D] and teacher features
// H_t [B×2D].
Tensor cwt_forward(const CwtParams& params, const Tensor& student_features,
                   const Tensor& teacher_features, std::size_t heads);

}  // namespace weatherseg
