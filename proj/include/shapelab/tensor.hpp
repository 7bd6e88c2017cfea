#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "shapelab/rng.hpp"

namespace shapelab {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_size(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, empty until a backward pass
  bool requires_grad = false;
};

// Dense row-major tensor of 64-bit floats. A Tensor is a handle: copies share
// the underlying node, so parameters can be held by models, tapes, and
// optimizers at once. Values are only mutated through optimizer steps or
// explicit mutable access.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> value, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor row(std::vector<double> v, bool requires_grad = false);
  static Tensor column(std::vector<double> v, bool requires_grad = false);
  static Tensor matrix(int rows, int cols, std::vector<double> v,
                       bool requires_grad = false);
  static Tensor identity(int n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int size() const { return static_cast<int>(node_->value.size()); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int rows() const;
  int cols() const;
  bool is_scalar() const { return size() == 1; }
  bool requires_grad() const { return node_->requires_grad; }

  double item() const;
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  double operator[](int i) const { return node_->value[i]; }
  double operator()(int r, int c) const;

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  bool all_finite() const;

  // Deep copy; the clone shares nothing with the source.
  Tensor clone() const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng,
                      bool requires_grad = false);

// Records the differentiable ops of one forward pass, in execution order.
// Constructing a Tape makes it the active tape for the current thread;
// destruction restores the previous one. backward() zeroes the gradients of
// every recorded tensor, seeds d(loss)/d(loss) = 1 and replays the recorded
// steps exactly once each, in reverse execution order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::vector<std::shared_ptr<TensorNode>> involved,
              std::function<void()> step);

  void backward(const Tensor& loss);

  std::size_t recorded_ops() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
  std::vector<std::shared_ptr<TensorNode>> involved_;
  Tape* prev_ = nullptr;
};

// Suspends recording on the current thread for forward-only evaluation.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

void backward(const Tensor& loss);

// ---- elementwise / reduction op family ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // rejects non-positive entries
Tensor sqrt(const Tensor& a);
Tensor pow_const(const Tensor& a, double p);
Tensor sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.1);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);
Tensor min_axis(const Tensor& a, int axis);
Tensor max_axis(const Tensor& a, int axis);
// Normalizes across the N rows per feature column; each column sums to 1.
Tensor softmax_over_set(const Tensor& a);
// Normalizes each row; rows sum to 1.
Tensor softmax_rows(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor tile_rows(const Tensor& row, int n);
Tensor mul_colvec(const Tensor& m, const Tensor& col);
Tensor add_rowvec(const Tensor& m, const Tensor& row);
Tensor reshape(const Tensor& a, Shape shape);
Tensor detach(const Tensor& a);

// ---- optimizer ----

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Standard Adam with bias correction over an explicit parameter subset.
// Tensors not handed to the optimizer are never touched, which is how
// parameter freezing is done throughout this project.
class AdamState {
 public:
  explicit AdamState(std::vector<Tensor> params, AdamConfig cfg = {});

  void step();
  void zero_grad();
  int steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig cfg_;
  int t_ = 0;
};

// ---- gradient checking ----

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::vector<double> per_param_err;
};

// Compares tape gradients of f() against central finite differences over
// every coordinate of every parameter. f must be deterministic; two
// disagreeing forward passes are rejected.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& params,
                           double step = 1e-5, double tol = 1e-4);

}  // namespace shapelab
