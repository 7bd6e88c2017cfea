#include "shapelab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace shapelab {

namespace {

thread_local Tape* t_active_tape = nullptr;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void check_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) fail(std::string(op) + ": expected a 2-D tensor, got shape " + shape_str(t.shape()));
}

// Broadcast rule for the binary elementwise family: identical shapes, or one
// side is a scalar.
enum class Bcast { kSame, kLeftScalar, kRightScalar };

Bcast bcast_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (a.is_scalar()) return Bcast::kLeftScalar;
  if (b.is_scalar()) return Bcast::kRightScalar;
  fail(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
       " are neither identical nor scalar-vs-tensor");
}

void ensure_grad(TensorNode& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

bool track(const Tensor& out) {
  return out.requires_grad() && Tape::active() != nullptr;
}

using NodePtr = std::shared_ptr<TensorNode>;

void record(std::vector<NodePtr> involved, std::function<void()> step) {
  Tape::active()->record(std::move(involved), std::move(step));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

int shape_size(const Shape& s) {
  int n = 1;
  for (int e : s) {
    if (e <= 0) fail("shape " + shape_str(s) + " has a non-positive extent");
    n *= e;
  }
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> value, bool requires_grad) {
  const int n = shape_size(shape);
  if (n != static_cast<int>(value.size()))
    fail("tensor shape " + shape_str(shape) + " wants " + std::to_string(n) + " values, got " +
         std::to_string(value.size()));
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const int n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const int n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

Tensor Tensor::row(std::vector<double> v, bool requires_grad) {
  const int d = static_cast<int>(v.size());
  return Tensor(Shape{1, d}, std::move(v), requires_grad);
}

Tensor Tensor::column(std::vector<double> v, bool requires_grad) {
  const int d = static_cast<int>(v.size());
  return Tensor(Shape{d, 1}, std::move(v), requires_grad);
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v, bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(v), requires_grad);
}

Tensor Tensor::identity(int n) {
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
  return Tensor(Shape{n, n}, std::move(v));
}

int Tensor::rows() const {
  check_2d(*this, "rows");
  return node_->shape[0];
}

int Tensor::cols() const {
  check_2d(*this, "cols");
  return node_->shape[1];
}

double Tensor::item() const {
  if (!is_scalar()) fail("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

double Tensor::operator()(int r, int c) const {
  check_2d(*this, "operator()");
  return node_->value[static_cast<std::size_t>(r) * node_->shape[1] + c];
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) fail("grad: no gradient present (run backward first)");
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->value.size(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : node_->value)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->value, node_->requires_grad);
  t.node_->grad = node_->grad;
  return t;
}

Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  const int n = shape_size(shape);
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// ---- Tape ----

Tape::Tape() {
  prev_ = t_active_tape;
  t_active_tape = this;
}

Tape::~Tape() { t_active_tape = prev_; }

Tape* Tape::active() { return t_active_tape; }

void Tape::record(std::vector<NodePtr> involved, std::function<void()> step) {
  for (auto& n : involved) involved_.push_back(std::move(n));
  steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.is_scalar())
    fail("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    fail("backward: loss is not on the tape (no input required gradients)");
  for (auto& n : involved_) n->grad.assign(n->value.size(), 0.0);
  ensure_grad(*loss.node());
  loss.node()->grad[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

NoGradGuard::NoGradGuard() : saved_(t_active_tape) { t_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { t_active_tape = saved_; }

void backward(const Tensor& loss) {
  if (!Tape::active()) fail("backward: no active tape");
  Tape::active()->backward(loss);
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    fail("matmul: inner extents disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<std::size_t>(i) * k + p];
      const double* brow = &bv[static_cast<std::size_t>(p) * n];
      double* orow = &out[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  Tensor y(Shape{m, n}, std::move(out), a.requires_grad() || b.requires_grad());
  if (track(y)) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    record({an, bn, yn}, [an, bn, yn, m, k, n]() {
      const auto& g = yn->grad;
      if (an->requires_grad) {
        ensure_grad(*an);
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = &g[static_cast<std::size_t>(i) * n];
            const double* brow = &bn->value[static_cast<std::size_t>(p) * n];
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            an->grad[static_cast<std::size_t>(i) * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        // i-outer keeps A and the output gradient row-sequential while the
        // k x n gradient of B stays cache resident.
        for (int i = 0; i < m; ++i) {
          const double* arow = &an->value[static_cast<std::size_t>(i) * k];
          const double* grow = &g[static_cast<std::size_t>(i) * n];
          for (int p = 0; p < k; ++p) {
            const double aip = arow[p];
            double* brow = &bn->grad[static_cast<std::size_t>(p) * n];
            for (int j = 0; j < n; ++j) brow[j] += aip * grow[j];
          }
        }
      }
    });
  }
  return y;
}

namespace {

// Shared skeleton for add/sub/mul/div.
template <typename Fwd, typename Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  const Bcast mode = bcast_mode(a, b, name);
  const Shape& shape = (mode == Bcast::kLeftScalar) ? b.shape() : a.shape();
  const int n = (mode == Bcast::kLeftScalar) ? b.size() : a.size();
  std::vector<double> out(n);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int i = 0; i < n; ++i) {
    const double x = (mode == Bcast::kLeftScalar) ? av[0] : av[i];
    const double y = (mode == Bcast::kRightScalar) ? bv[0] : bv[i];
    out[i] = fwd(x, y);
  }
  Tensor r(shape, std::move(out), a.requires_grad() || b.requires_grad());
  if (track(r)) {
    auto an = a.node(), bn = b.node(), rn = r.node();
    record({an, bn, rn}, [an, bn, rn, mode, n, bwd]() {
      const bool ga = an->requires_grad, gb = bn->requires_grad;
      if (ga) ensure_grad(*an);
      if (gb) ensure_grad(*bn);
      for (int i = 0; i < n; ++i) {
        const double x = (mode == Bcast::kLeftScalar) ? an->value[0] : an->value[i];
        const double y = (mode == Bcast::kRightScalar) ? bn->value[0] : bn->value[i];
        const double g = rn->grad[i];
        const auto [gx, gy] = bwd(x, y, g);
        if (ga) an->grad[(mode == Bcast::kLeftScalar) ? 0 : i] += gx;
        if (gb) bn->grad[(mode == Bcast::kRightScalar) ? 0 : i] += gy;
      }
    });
  }
  return r;
}

struct GradPair {
  double first, second;
};

// Shared skeleton for unary elementwise ops.
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  const int n = a.size();
  std::vector<double> out(n);
  const auto& av = a.value();
  for (int i = 0; i < n; ++i) out[i] = fwd(av[i]);
  Tensor r(a.shape(), std::move(out), a.requires_grad());
  if (track(r)) {
    auto an = a.node(), rn = r.node();
    record({an, rn}, [an, rn, n, bwd]() {
      ensure_grad(*an);
      for (int i = 0; i < n; ++i)
        an->grad[i] += bwd(an->value[i], rn->value[i]) * rn->grad[i];
    });
  }
  return r;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double, double g) { return GradPair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double, double g) { return GradPair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double x, double y, double g) { return GradPair{g * y, g * x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                   [](double x, double y, double g) {
                     return GradPair{g / y, -g * x / (y * y)};
                   });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_const(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.value())
    if (!(v > 0.0)) fail("log: non-positive entry " + std::to_string(v));
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor pow_const(const Tensor& a, double p) {
  if (p == 0.0) {
    return unary_op(a, [](double) { return 1.0; }, [](double, double) { return 0.0; });
  }
  return unary_op(a, [p](double x) { return std::pow(x, p); },
                  [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, [](double x) { return stable_sigmoid(x); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                  [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) fail("clamp: lo " + std::to_string(lo) + " > hi " + std::to_string(hi));
  return unary_op(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                  [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  Tensor r(Shape{1}, {acc}, a.requires_grad());
  if (track(r)) {
    auto an = a.node(), rn = r.node();
    record({an, rn}, [an, rn]() {
      ensure_grad(*an);
      const double g = rn->grad[0];
      for (auto& gv : an->grad) gv += g;
    });
  }
  return r;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / a.size()); }

Tensor sum_axis(const Tensor& a, int axis) {
  check_2d(a, "sum_axis");
  if (axis != 0 && axis != 1) fail("sum_axis: axis must be 0 or 1");
  const int r = a.shape()[0], c = a.shape()[1];
  const auto& av = a.value();
  Shape oshape = (axis == 0) ? Shape{1, c} : Shape{r, 1};
  std::vector<double> out(axis == 0 ? c : r, 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[axis == 0 ? j : i] += av[static_cast<std::size_t>(i) * c + j];
  Tensor y(std::move(oshape), std::move(out), a.requires_grad());
  if (track(y)) {
    auto an = a.node(), yn = y.node();
    record({an, yn}, [an, yn, r, c, axis]() {
      ensure_grad(*an);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          an->grad[static_cast<std::size_t>(i) * c + j] += yn->grad[axis == 0 ? j : i];
    });
  }
  return y;
}

namespace {

// Shared min/max reduction; gradient flows to the first extremal index.
Tensor extremum_axis(const Tensor& a, int axis, bool is_min, const char* name) {
  check_2d(a, name);
  if (axis != 0 && axis != 1) fail(std::string(name) + ": axis must be 0 or 1");
  const int r = a.shape()[0], c = a.shape()[1];
  const auto& av = a.value();
  const int out_n = (axis == 0) ? c : r;
  std::vector<double> out(out_n);
  auto witness = std::make_shared<std::vector<int>>(out_n);
  for (int o = 0; o < out_n; ++o) {
    const int count = (axis == 0) ? r : c;
    int best_k = 0;
    double best = (axis == 0) ? av[o] : av[static_cast<std::size_t>(o) * c];
    for (int k = 1; k < count; ++k) {
      const double v = (axis == 0) ? av[static_cast<std::size_t>(k) * c + o]
                                   : av[static_cast<std::size_t>(o) * c + k];
      if (is_min ? (v < best) : (v > best)) {
        best = v;
        best_k = k;
      }
    }
    out[o] = best;
    (*witness)[o] = best_k;
  }
  Shape oshape = (axis == 0) ? Shape{1, c} : Shape{r, 1};
  Tensor y(std::move(oshape), std::move(out), a.requires_grad());
  if (track(y)) {
    auto an = a.node(), yn = y.node();
    record({an, yn}, [an, yn, witness, c, axis, out_n]() {
      ensure_grad(*an);
      for (int o = 0; o < out_n; ++o) {
        const int k = (*witness)[o];
        const std::size_t idx = (axis == 0) ? static_cast<std::size_t>(k) * c + o
                                            : static_cast<std::size_t>(o) * c + k;
        an->grad[idx] += yn->grad[o];
      }
    });
  }
  return y;
}

}  // namespace

Tensor min_axis(const Tensor& a, int axis) { return extremum_axis(a, axis, true, "min_axis"); }

Tensor max_axis(const Tensor& a, int axis) { return extremum_axis(a, axis, false, "max_axis"); }

Tensor softmax_over_set(const Tensor& a) {
  check_2d(a, "softmax_over_set");
  const int r = a.shape()[0], c = a.shape()[1];
  if (r < 1) fail("softmax_over_set: empty set");
  if (!a.all_finite()) fail("softmax_over_set: non-finite entry");
  const auto& av = a.value();
  std::vector<double> out(a.size());
  // Per-column max subtraction keeps exp() in range.
  for (int j = 0; j < c; ++j) {
    double mx = av[j];
    for (int i = 1; i < r; ++i) mx = std::max(mx, av[static_cast<std::size_t>(i) * c + j]);
    double z = 0.0;
    for (int i = 0; i < r; ++i) {
      const double e = std::exp(av[static_cast<std::size_t>(i) * c + j] - mx);
      out[static_cast<std::size_t>(i) * c + j] = e;
      z += e;
    }
    for (int i = 0; i < r; ++i) out[static_cast<std::size_t>(i) * c + j] /= z;
  }
  Tensor y(a.shape(), std::move(out), a.requires_grad());
  if (track(y)) {
    auto an = a.node(), yn = y.node();
    record({an, yn}, [an, yn, r, c]() {
      ensure_grad(*an);
      // d/dc of columnwise softmax: s .* (g - sum(g .* s)).
      for (int j = 0; j < c; ++j) {
        double dot = 0.0;
        for (int i = 0; i < r; ++i) {
          const std::size_t idx = static_cast<std::size_t>(i) * c + j;
          dot += yn->grad[idx] * yn->value[idx];
        }
        for (int i = 0; i < r; ++i) {
          const std::size_t idx = static_cast<std::size_t>(i) * c + j;
          an->grad[idx] += yn->value[idx] * (yn->grad[idx] - dot);
        }
      }
    });
  }
  return y;
}

Tensor softmax_rows(const Tensor& a) {
  check_2d(a, "softmax_rows");
  const int r = a.shape()[0], c = a.shape()[1];
  const auto& av = a.value();
  std::vector<double> out(a.size());
  for (int i = 0; i < r; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * c;
    double mx = av[off];
    for (int j = 1; j < c; ++j) mx = std::max(mx, av[off + j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      const double e = std::exp(av[off + j] - mx);
      out[off + j] = e;
      z += e;
    }
    for (int j = 0; j < c; ++j) out[off + j] /= z;
  }
  Tensor y(a.shape(), std::move(out), a.requires_grad());
  if (track(y)) {
    auto an = a.node(), yn = y.node();
    record({an, yn}, [an, yn, r, c]() {
      ensure_grad(*an);
      for (int i = 0; i < r; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += yn->grad[off + j] * yn->value[off + j];
        for (int j = 0; j < c; ++j)
          an->grad[off + j] += yn->value[off + j] * (yn->grad[off + j] - dot);
      }
    });
  }
  return y;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_2d(a, "concat_cols");
  check_2d(b, "concat_cols");
  if (a.shape()[0] != b.shape()[0])
    fail("concat_cols: row counts disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(r) * (ca + cb));
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ca; ++j)
      out[static_cast<std::size_t>(i) * (ca + cb) + j] = a.value()[static_cast<std::size_t>(i) * ca + j];
    for (int j = 0; j < cb; ++j)
      out[static_cast<std::size_t>(i) * (ca + cb) + ca + j] =
          b.value()[static_cast<std::size_t>(i) * cb + j];
  }
  Tensor y(Shape{r, ca + cb}, std::move(out), a.requires_grad() || b.requires_grad());
  if (track(y)) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    record({an, bn, yn}, [an, bn, yn, r, ca, cb]() {
      for (int i = 0; i < r; ++i) {
        if (an->requires_grad) {
          ensure_grad(*an);
          for (int j = 0; j < ca; ++j)
            an->grad[static_cast<std::size_t>(i) * ca + j] +=
                yn->grad[static_cast<std::size_t>(i) * (ca + cb) + j];
        }
        if (bn->requires_grad) {
          ensure_grad(*bn);
          for (int j = 0; j < cb; ++j)
            bn->grad[static_cast<std::size_t>(i) * cb + j] +=
                yn->grad[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
        }
      }
    });
  }
  return y;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check_2d(a, "concat_rows");
  check_2d(b, "concat_rows");
  if (a.shape()[1] != b.shape()[1])
    fail("concat_rows: column counts disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int ra = a.shape()[0], rb = b.shape()[0], c = a.shape()[1];
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(ra + rb) * c);
  out.insert(out.end(), a.value().begin(), a.value().end());
  out.insert(out.end(), b.value().begin(), b.value().end());
  Tensor y(Shape{ra + rb, c}, std::move(out), a.requires_grad() || b.requires_grad());
  if (track(y)) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    record({an, bn, yn}, [an, bn, yn, ra, rb, c]() {
      if (an->requires_grad) {
        ensure_grad(*an);
        for (std::size_t i = 0; i < static_cast<std::size_t>(ra) * c; ++i) an->grad[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        ensure_grad(*bn);
        const std::size_t off = static_cast<std::size_t>(ra) * c;
        for (std::size_t i = 0; i < static_cast<std::size_t>(rb) * c; ++i)
          bn->grad[i] += yn->grad[off + i];
      }
    });
  }
  return y;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  check_2d(a, "slice_rows");
  const int r = a.shape()[0], c = a.shape()[1];
  if (r0 < 0 || r1 > r || r0 >= r1)
    fail("slice_rows: bad range [" + std::to_string(r0) + ", " + std::to_string(r1) + ") for " +
         shape_str(a.shape()));
  std::vector<double> out(a.value().begin() + static_cast<std::size_t>(r0) * c,
                          a.value().begin() + static_cast<std::size_t>(r1) * c);
  Tensor y(Shape{r1 - r0, c}, std::move(out), a.requires_grad());
  if (track(y)) {
    auto an = a.node(), yn = y.node();
    record({an, yn}, [an, yn, r0, r1, c]() {
      ensure_grad(*an);
      const std::size_t off = static_cast<std::size_t>(r0) * c;
      for (std::size_t i = 0; i < static_cast<std::size_t>(r1 - r0) * c; ++i)
        an->grad[off + i] += yn->grad[i];
    });
  }
  return y;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  check_2d(a, "slice_cols");
  const int r = a.shape()[0], c = a.shape()[1];
  if (c0 < 0 || c1 > c || c0 >= c1)
    fail("slice_cols: bad range [" + std::to_string(c0) + ", " + std::to_string(c1) + ") for " +
         shape_str(a.shape()));
  const int w = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(r) * w);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<std::size_t>(i) * w + j] = a.value()[static_cast<std::size_t>(i) * c + c0 + j];
  Tensor y(Shape{r, w}, std::move(out), a.requires_grad());
  if (track(y)) {
    auto an = a.node(), yn = y.node();
    record({an, yn}, [an, yn, r, c, c0, w]() {
      ensure_grad(*an);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j)
          an->grad[static_cast<std::size_t>(i) * c + c0 + j] +=
              yn->grad[static_cast<std::size_t>(i) * w + j];
    });
  }
  return y;
}

Tensor tile_rows(const Tensor& row, int n) {
  check_2d(row, "tile_rows");
  if (row.shape()[0] != 1) fail("tile_rows: expected a 1-row tensor, got " + shape_str(row.shape()));
  if (n < 1) fail("tile_rows: n must be >= 1");
  const int c = row.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  for (int i = 0; i < n; ++i)
    std::copy(row.value().begin(), row.value().end(), out.begin() + static_cast<std::size_t>(i) * c);
  Tensor y(Shape{n, c}, std::move(out), row.requires_grad());
  if (track(y)) {
    auto rn = row.node(), yn = y.node();
    record({rn, yn}, [rn, yn, n, c]() {
      ensure_grad(*rn);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) rn->grad[j] += yn->grad[static_cast<std::size_t>(i) * c + j];
    });
  }
  return y;
}

Tensor mul_colvec(const Tensor& m, const Tensor& col) {
  check_2d(m, "mul_colvec");
  check_2d(col, "mul_colvec");
  if (col.shape()[1] != 1 || col.shape()[0] != m.shape()[0])
    fail("mul_colvec: column vector shape " + shape_str(col.shape()) + " does not match " +
         shape_str(m.shape()));
  const int r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(m.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] = m.value()[static_cast<std::size_t>(i) * c + j] * col[i];
  Tensor y(m.shape(), std::move(out), m.requires_grad() || col.requires_grad());
  if (track(y)) {
    auto mn = m.node(), cn = col.node(), yn = y.node();
    record({mn, cn, yn}, [mn, cn, yn, r, c]() {
      for (int i = 0; i < r; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * c;
        if (mn->requires_grad) {
          ensure_grad(*mn);
          for (int j = 0; j < c; ++j) mn->grad[off + j] += yn->grad[off + j] * cn->value[i];
        }
        if (cn->requires_grad) {
          ensure_grad(*cn);
          double acc = 0.0;
          for (int j = 0; j < c; ++j) acc += yn->grad[off + j] * mn->value[off + j];
          cn->grad[i] += acc;
        }
      }
    });
  }
  return y;
}

Tensor add_rowvec(const Tensor& m, const Tensor& row) {
  check_2d(m, "add_rowvec");
  check_2d(row, "add_rowvec");
  if (row.shape()[0] != 1 || row.shape()[1] != m.shape()[1])
    fail("add_rowvec: row vector shape " + shape_str(row.shape()) + " does not match " +
         shape_str(m.shape()));
  const int r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(m.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] = m.value()[static_cast<std::size_t>(i) * c + j] + row[j];
  Tensor y(m.shape(), std::move(out), m.requires_grad() || row.requires_grad());
  if (track(y)) {
    auto mn = m.node(), rn = row.node(), yn = y.node();
    record({mn, rn, yn}, [mn, rn, yn, r, c]() {
      if (mn->requires_grad) {
        ensure_grad(*mn);
        for (std::size_t i = 0; i < static_cast<std::size_t>(r) * c; ++i) mn->grad[i] += yn->grad[i];
      }
      if (rn->requires_grad) {
        ensure_grad(*rn);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) rn->grad[j] += yn->grad[static_cast<std::size_t>(i) * c + j];
      }
    });
  }
  return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    fail("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  Tensor y(std::move(shape), a.value(), a.requires_grad());
  if (track(y)) {
    auto an = a.node(), yn = y.node();
    record({an, yn}, [an, yn]() {
      ensure_grad(*an);
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += yn->grad[i];
    });
  }
  return y;
}

Tensor detach(const Tensor& a) { return Tensor(a.shape(), a.value(), false); }

// ---- Adam ----

AdamState::AdamState(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamState::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto& node = *params_[pi].node();
    auto& m = m_[pi];
    auto& v = v_[pi];
    const bool has_grad = node.grad.size() == node.value.size();
    for (std::size_t i = 0; i < node.value.size(); ++i) {
      const double g = has_grad ? node.grad[i] : 0.0;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      node.value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

void AdamState::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- gradient checking ----

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double step, double tol) {
  if (!(step > 0.0)) fail("grad_check: step must be positive");
  const auto eval = [&f]() {
    NoGradGuard guard;
    Tensor out = f();
    if (!out.is_scalar()) fail("grad_check: f must return a scalar");
    return out.item();
  };

  const double v1 = eval();
  const double v2 = eval();
  if (v1 != v2) throw std::runtime_error("grad_check: f is not deterministic (two forward passes disagree)");

  std::vector<std::vector<double>> analytic;
  {
    // Stale buffers from earlier passes must not leak into the report.
    for (Tensor p : params) p.zero_grad();
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
    analytic.reserve(params.size());
    for (const auto& p : params)
      analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0));
  }

  GradCheckReport report;
  report.tolerance = tol;
  report.per_param_err.assign(params.size(), 0.0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    auto& values = p.mutable_value();
    for (int i = 0; i < p.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = eval();
      values[i] = saved - step;
      const double down = eval();
      values[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = analytic[pi][i];
      // Relative error with a unit floor so tiny gradients compare absolutely.
      const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      report.per_param_err[pi] = std::max(report.per_param_err[pi], err);
      report.max_rel_err = std::max(report.max_rel_err, err);
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace shapelab
