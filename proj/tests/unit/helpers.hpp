#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "weatherseg/tensor.hpp"

namespace wst {

using weatherseg::Shape;
using weatherseg::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(weatherseg::element_count(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Central difference of f with respect to one coordinate of t.
inline double central_difference(Tensor t, std::size_t i, const std::function<double()>& f,
                                 double eps = 1e-5) {
  auto v = t.mutable_values();
  const double orig = v[i];
  v[i] = orig + eps;
  const double up = f();
  v[i] = orig - eps;
  const double down = f();
  v[i] = orig;
  return (up - down) / (2.0 * eps);
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Fresh directory under the test working directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::current_path() / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace wst
