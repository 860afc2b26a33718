#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "weatherseg/config.hpp"
#include "weatherseg/synthdata.hpp"
#include "weatherseg/tensor.hpp"
#include "weatherseg/trainer.hpp"

namespace weatherseg {

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so coordinates whose true
  // gradient is zero are compared on an absolute scale.
  double floor = 1e-6;
};

struct GradCheckResult {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
};

// Compares tape gradients of `loss` with central differences over every
// coordinate of every tensor in `inputs`. `loss` must build a scalar from the
// inputs and may be called many times.
GradCheckResult check_gradients(std::string name, const std::vector<Tensor>& inputs,
                                const std::function<Tensor()>& loss,
                                const GradCheckOptions& opts = {});

// Tiny training problem: B_L = B_U = 1, H = W = 2, D = 2, C = 2, one head.
// Teacher heads are sharpened so that part of the unlabeled image clears the
// confidence threshold, and the instance is chosen so no relu input and no
// consensus probability sits near a kink.
struct MicroInstance {
  TrainConfig cfg;
  TrainState state;
  SceneBatch labeled;
  SceneBatch unlabeled;
};

MicroInstance make_micro_instance(std::uint64_t seed);

// Every differentiable op on random inputs, the network pieces, the four
// losses, and the weighted total on a micro instance.
std::vector<GradCheckResult> gradcheck_sweep(std::uint64_t seed, const GradCheckOptions& opts = {});

// Columns: name,coordinates,max_rel_error,max_abs_error,passed.
void write_gradcheck_csv(std::ostream& os, const std::vector<GradCheckResult>& rows);

}  // namespace weatherseg
