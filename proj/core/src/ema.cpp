#include "weatherseg/ema.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "weatherseg/errors.hpp"

namespace weatherseg {

namespace {

Tensor blend(const Tensor& teacher, const Tensor& student, double alpha) {
  if (teacher.shape() != student.shape()) {
    throw ShapeError("ema_update: teacher " + to_string(teacher.shape()) + " vs student " +
                     to_string(student.shape()));
  }
  std::vector<double> out(teacher.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = alpha * teacher[i] + (1.0 - alpha) * student[i];
  }
  return Tensor(teacher.shape(), std::move(out), false);
}

double distance(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

}  // namespace

void EmaConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("EMA alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

HeadParams ema_update(const HeadParams& teacher, const HeadParams& student, const EmaConfig& cfg) {
  cfg.validate();
  return {blend(teacher.weight, student.weight, cfg.alpha),
          blend(teacher.bias, student.bias, cfg.alpha)};
}

double verify_ema_bound(const HeadParams& before, const HeadParams& after,
                        const HeadParams& student, const EmaConfig& cfg) {
  auto residual = [&](const Tensor& b, const Tensor& a, const Tensor& s) {
    return std::abs(distance(a, b) - (1.0 - cfg.alpha) * distance(s, b));
  };
  return std::max(residual(before.weight, after.weight, student.weight),
                  residual(before.bias, after.bias, student.bias));
}

double head_distance(const HeadParams& a, const HeadParams& b) {
  const double w = distance(a.weight, b.weight);
  const double c = distance(a.bias, b.bias);
  return std::sqrt(w * w + c * c);
}

TeacherPair::TeacherPair(HeadParams first, HeadParams second)
    : first_(std::move(first)), second_(std::move(second)) {}

TeacherPair TeacherPair::from_student(const HeadParams& student, double perturbation,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto jitter = [&](const HeadParams& src) {
    HeadParams out = src.copy(false);
    if (perturbation > 0.0) {
      std::uniform_real_distribution<double> dist(-perturbation, perturbation);
      for (auto& v : out.weight.mutable_values()) v += dist(rng);
      for (auto& v : out.bias.mutable_values()) v += dist(rng);
    }
    return out;
  };
  HeadParams first = jitter(student);
  HeadParams second = jitter(student);
  return TeacherPair(std::move(first), std::move(second));
}

void TeacherPair::update(const HeadParams& student, std::int64_t step, const EmaConfig& cfg,
                         bool dual) {
  if (!dual || step % 2 == 0) {
    first_ = ema_update(first_, student, cfg);
  } else {
    second_ = ema_update(second_, student, cfg);
  }
  last_update_step_ = step;
}

}  // namespace weatherseg
