#pragma once

// Tape-based reverse-mode differentiation over dense double matrices.
//
// Every value lives on a Tape. Operations append a node holding the forward
// value and a closure that pushes the node's gradient to its inputs. A tape is
// single-threaded; run one tape per batch element and merge parameter
// gradients with Tape::flush_gradients() in a fixed order.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace unimatch::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Learnable weight with its accumulated gradient.
struct Parameter {
  Parameter(std::string name, Matrix value);

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }

  std::string name;
  Matrix value;
  Matrix grad;
  /// Set when the parameter was reached by a flushed tape since the last
  /// zero_grad(); the optimizer only advances moments of touched parameters.
  bool touched = false;
};

/// Ordered, address-stable parameter registry.
class ParameterStore {
 public:
  Parameter& add(std::string name, Matrix value);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  Tensor constant_scalar(double value);
  Tensor param(Parameter& p);

  /// Records an operation node. `inputs` determine whether the node needs a
  /// gradient; `backward` is dropped when none of them does.
  Tensor record(Matrix value, std::span<const Tensor> inputs, BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  /// Adds `g` into the gradient slot of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Matrix& g);

  /// Reverse sweep from a scalar loss, seeded with `seed` (usually 1).
  void backward(const Tensor& loss, double seed = 1.0);

  /// Adds leaf gradients into their Parameters.
  void flush_gradients();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Uᵀ(UUᵀ)⁻¹ for a 4×d matrix of full row rank.
Tensor right_pseudo_inverse(const Tensor& u, double condition_cap = 1e8);

// Pointwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Structure.
/// axis 0 stacks rows, axis 1 stacks columns.
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
/// x (f×n) plus column bias b (f×1) on every column.
Tensor add_bias(const Tensor& x, const Tensor& b);
/// f×1 → f×n.
Tensor broadcast_cols(const Tensor& x, Index n);
/// Columns of x at `index`, in order.
Tensor gather_cols(const Tensor& x, std::span<const int> index);
/// Mean of the columns of x grouped by `target` (size x.cols()) into `n`
/// output columns; groups with no members are zero.
Tensor scatter_mean_cols(const Tensor& x, std::span<const int> target, Index n);
/// relu(x + a[:, ia] + b[:, ib] + bias) as one node; ia and ib have x.cols() entries.
Tensor gather_add_relu(const Tensor& x, const Tensor& a, std::span<const int> ia, const Tensor& b,
                       std::span<const int> ib, const Tensor& bias);
/// Column-major flattening to (rows·cols)×1.
Tensor vec(const Tensor& x);
/// Reshape a vector of length rows·cols read in row-major order.
Tensor unflatten_rowmajor(const Tensor& x, Index rows, Index cols);

// Reductions.
/// Columnwise maximum over points: f×m → f×1. Gradient goes to the argmax,
/// the lowest point index on ties.
Tensor max_pool_over_points(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor frobenius_sq(const Tensor& x);
/// Mean of squared entrywise differences.
Tensor mse(const Tensor& a, const Tensor& b);

/// Max over parameters of |analytic − central difference| / max(1, |central difference|).
/// `f` must record its computation on the given tape and return a scalar.
double gradient_check(const std::function<Tensor(Tape&)>& f, std::span<Parameter* const> params,
                      double eps = 1e-5);

}  // namespace unimatch::ad
