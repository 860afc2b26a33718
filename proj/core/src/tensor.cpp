#include "weatherseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "weatherseg/errors.hpp"

namespace weatherseg {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values,
                                        bool requires_grad) {
  if (element_count(shape) != values.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " holds " +
                     std::to_string(element_count(shape)) + " elements but " +
                     std::to_string(values.size()) + " values were given");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->value.size(), 0.0);
  return node;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(x.shape()));
  }
}

struct RowView {
  std::size_t rows;
  std::size_t cols;
};

RowView last_axis_rows(const Tensor& x, const char* op) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw ShapeError(std::string(op) + ": empty last axis in " + to_string(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  return {x.size() / cols, cols};
}

// Parent gradient buffer, or nullptr when the parent takes no gradient.
double* grad_of(detail::Node& self, std::size_t parent) {
  auto& p = *self.parents[parent];
  return p.requires_grad ? p.grad.data() : nullptr;
}

const std::vector<double>& value_of(detail::Node& self, std::size_t parent) {
  return self.parents[parent]->value;
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : node_(make_node({}, {0.0}, false)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(make_node(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const std::shared_ptr<detail::Node>& node) {
  node->tape = this;
  nodes_.push_back(node);
  for (const auto& parent : node->parents) {
    if (parent->is_leaf() && parent->requires_grad &&
        std::find(leaves_.begin(), leaves_.end(), parent) == leaves_.end()) {
      leaves_.push_back(parent);
    }
  }
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward expects a scalar loss, got shape " + to_string(loss.shape()));
  }
  const auto& root = loss.node();
  if (root->tape != this) {
    throw ContractError("backward: loss was not recorded on this tape");
  }
  const auto end = std::find(nodes_.begin(), nodes_.end(), root);
  if (end == nodes_.end()) throw ContractError("backward: loss is no longer on the tape");
  for (auto it = nodes_.begin(); it != end + 1; ++it) {
    std::fill((*it)->grad.begin(), (*it)->grad.end(), 0.0);
  }
  root->grad[0] = 1.0;
  for (auto it = std::make_reverse_iterator(end + 1); it != nodes_.rend(); ++it) {
    (*it)->backward(**it);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  for (auto& n : leaves_) std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

void Tape::clear() {
  nodes_.clear();
  leaves_.clear();
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward) {
  Tape* tape = g_active_tape;
  const bool tracked =
      tape != nullptr &&
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  auto node = make_node(std::move(shape), std::move(values), tracked);
  if (tracked) {
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
    tape->record(node);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

Tensor add_scalar(const Tensor& x, double offset) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + offset;
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    const auto& xv = value_of(self, 0);
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > 0.0) g[i] += self.grad[i];
      }
    }
  });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    const auto& xv = value_of(self, 0);
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / xv[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto [rows, cols] = last_axis_rows(x, "add_bias");
  if (bias.size() != cols) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match last axis of " +
                     to_string(x.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + bias[c];
  }
  return make_result(x.shape(), std::move(out), {x, bias}, [rows, cols](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    const auto& g = self.grad;
    if (double* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (double* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  }
  return make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  const Shape& ref = parts.front().shape();
  if (ref.empty()) throw ShapeError("concat_last: scalar input");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size() || !std::equal(s.begin(), s.end() - 1, ref.begin())) {
      throw ShapeError("concat_last: leading dims differ between " + to_string(ref) + " and " +
                       to_string(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = parts.front().size() / std::max<std::size_t>(ref.back(), 1);
  Shape shape = ref;
  shape.back() = total;
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < widths[k]; ++c) {
        out[r * total + offset + c] = parts[k][r * widths[k] + c];
      }
    }
    offset += widths[k];
  }
  return make_result(std::move(shape), std::move(out), parts,
                     [rows, total, widths](detail::Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (double* g = grad_of(self, k)) {
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < widths[k]; ++c) {
                               g[r * widths[k] + c] += self.grad[r * total + off + c];
                             }
                           }
                         }
                         off += widths[k];
                       }
                     });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t width) {
  const auto [rows, cols] = last_axis_rows(x, "slice_last");
  if (width == 0 || start + width > cols) {
    throw ShapeError("slice_last: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + width) + ") out of range for " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape.back() = width;
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = x[r * cols + start + c];
  }
  return make_result(std::move(shape), std::move(out), {x},
                     [rows = rows, cols = cols, start, width](detail::Node& self) {
                       if (double* g = grad_of(self, 0)) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < width; ++c) {
                             g[r * cols + start + c] += self.grad[r * width + c];
                           }
                         }
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().rank() == 2 ? parts.front().dim(1) : 0;
  std::vector<std::size_t> sizes;
  std::vector<double> out;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols) {
      throw ShapeError("concat_rows: incompatible " + to_string(parts.front().shape()) + " and " +
                       to_string(p.shape()));
    }
    rows += p.dim(0);
    sizes.push_back(p.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_result({rows, cols}, std::move(out), parts, [sizes](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (double* g = grad_of(self, k)) {
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisations

Tensor softmax(const Tensor& x) {
  const auto [rows, cols] = last_axis_rows(x, "softmax");
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows = rows, cols = cols](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const auto [rows, cols] = last_axis_rows(x, "log_softmax");
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows = rows, cols = cols](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* ly = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += gy[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gy[c] - std::exp(ly[c]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto [rows, cols] = last_axis_rows(x, "layer_norm");
  if (gain.size() != cols || bias.size() != cols) {
    throw ShapeError("layer_norm: gain " + to_string(gain.shape()) + " / bias " +
                     to_string(bias.shape()) + " do not match " + to_string(x.shape()));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  std::vector<double> out(x.size());
  // Saved for backward: normalised activations and per-row inverse std.
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (in[c] - mu) * inv;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gain[c] + bias[c];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows = rows, cols = cols, xhat, inv_std](detail::Node& self) {
        const auto& gv = value_of(self, 1);
        const auto& g = self.grad;
        const double n = static_cast<double>(cols);
        if (double* gx = grad_of(self, 0)) {
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_d = 0.0, sum_dh = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = g[r * cols + c] * gv[c];
              sum_d += d;
              sum_dh += d * (*xhat)[r * cols + c];
            }
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = g[r * cols + c] * gv[c];
              gx[r * cols + c] +=
                  (*inv_std)[r] / n * (n * d - sum_d - (*xhat)[r * cols + c] * sum_dh);
            }
          }
        }
        if (double* gg = grad_of(self, 1)) {
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % cols] += g[i] * (*xhat)[i];
        }
        if (double* gb = grad_of(self, 2)) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and grouping

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({}, {total}, {x}, [](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
  require_rank(x, 2, "repeat_rows");
  if (times == 0) throw ShapeError("repeat_rows: times must be positive");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(rows * times * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < times; ++t) {
      std::copy_n(x.values().begin() + r * cols, cols, out.begin() + (r * times + t) * cols);
    }
  }
  return make_result({rows * times, cols}, std::move(out), {x},
                     [rows, cols, times](detail::Node& self) {
                       if (double* g = grad_of(self, 0)) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t t = 0; t < times; ++t) {
                             for (std::size_t c = 0; c < cols; ++c) {
                               g[r * cols + c] += self.grad[(r * times + t) * cols + c];
                             }
                           }
                         }
                       }
                     });
}

Tensor segment_mean(const Tensor& x, std::size_t group) {
  require_rank(x, 2, "segment_mean");
  if (group == 0 || x.dim(0) % group != 0) {
    throw ShapeError("segment_mean: group " + std::to_string(group) + " does not divide rows of " +
                     to_string(x.shape()));
  }
  const std::size_t segments = x.dim(0) / group, cols = x.dim(1);
  const double inv = 1.0 / static_cast<double>(group);
  std::vector<double> out(segments * cols, 0.0);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t r = 0; r < group; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] += x[(s * group + r) * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] *= inv;
  }
  return make_result({segments, cols}, std::move(out), {x},
                     [segments, group, cols, inv](detail::Node& self) {
                       if (double* g = grad_of(self, 0)) {
                         for (std::size_t s = 0; s < segments; ++s) {
                           for (std::size_t r = 0; r < group; ++r) {
                             for (std::size_t c = 0; c < cols; ++c) {
                               g[(s * group + r) * cols + c] += self.grad[s * cols + c] * inv;
                             }
                           }
                         }
                       }
                     });
}

Tensor spatial_mix(const Tensor& map, const Tensor& kernel) {
  require_rank(map, 4, "spatial_mix");
  const std::size_t B = map.dim(0), H = map.dim(1), W = map.dim(2), D = map.dim(3);
  if (kernel.rank() != 2 || kernel.dim(0) != D || kernel.dim(1) != 9) {
    throw ShapeError("spatial_mix: kernel " + to_string(kernel.shape()) + " does not fit map " +
                     to_string(map.shape()));
  }
  auto taps = std::make_shared<std::vector<double>>(kernel.values().begin(), kernel.values().end());
  auto at = [H, W, D](std::size_t b, std::size_t i, std::size_t j, std::size_t d) {
    return ((b * H + i) * W + j) * D + d;
  };
  // Calls fn(out_index, in_index, tap) for every in-bounds neighbour pair.
  auto for_each_tap = [B, H, W, D, at](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          for (int di = -1; di <= 1; ++di) {
            const auto ii = static_cast<std::ptrdiff_t>(i) + di;
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
            for (int dj = -1; dj <= 1; ++dj) {
              const auto jj = static_cast<std::ptrdiff_t>(j) + dj;
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t tap = static_cast<std::size_t>((di + 1) * 3 + (dj + 1));
              for (std::size_t d = 0; d < D; ++d) {
                fn(at(b, i, j, d), at(b, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj), d),
                   d * 9 + tap);
              }
            }
          }
        }
      }
    }
  };
  std::vector<double> out(map.size(), 0.0);
  const auto in = map.values();
  for_each_tap([&](std::size_t o, std::size_t s, std::size_t k) { out[o] += (*taps)[k] * in[s]; });
  return make_result(map.shape(), std::move(out), {map}, [taps, for_each_tap](detail::Node& self) {
    if (double* g = grad_of(self, 0)) {
      for_each_tap(
          [&](std::size_t o, std::size_t s, std::size_t k) { g[s] += (*taps)[k] * self.grad[o]; });
    }
  });
}

Tensor masked_nll(const Tensor& logp, std::span<const int> labels, int ignore_label) {
  require_rank(logp, 2, "masked_nll");
  const std::size_t rows = logp.dim(0), cols = logp.dim(1);
  if (labels.size() != rows) {
    throw ShapeError("masked_nll: " + std::to_string(labels.size()) + " labels for " +
                     to_string(logp.shape()));
  }
  auto picks = std::make_shared<std::vector<std::size_t>>();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y == ignore_label) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= cols) {
      throw ContractError("label " + std::to_string(y) + " outside [0, " + std::to_string(cols - 1) +
                          "]");
    }
    picks->push_back(r * cols + static_cast<std::size_t>(y));
    total -= logp[picks->back()];
  }
  const double count = static_cast<double>(picks->size());
  const double value = picks->empty() ? 0.0 : total / count;
  return make_result({}, {value}, {logp}, [picks, count](detail::Node& self) {
    double* g = grad_of(self, 0);
    if (!g || picks->empty()) return;
    for (std::size_t idx : *picks) g[idx] -= self.grad[0] / count;
  });
}

}  // namespace weatherseg
