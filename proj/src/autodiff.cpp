#include "unimatch/autodiff.hpp"

#include "unimatch/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace unimatch::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw Error(ErrorKind::Shape,
              std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

Tape& same_tape(const Tensor& a, const Tensor& b) {
  if (!a.valid() || !b.valid()) throw Error(ErrorKind::Usage, "tensor is not on a tape");
  if (a.tape() != b.tape()) throw Error(ErrorKind::Usage, "tensors recorded on different tapes");
  return *a.tape();
}

// x·0 is NaN exactly for non-finite x; the sum stays vectorized, unlike allFinite().
bool all_finite(const Matrix& m) { return (m.array() * 0.0).sum() == 0.0; }

Tape& tape_of(const Tensor& a) {
  if (!a.valid()) throw Error(ErrorKind::Usage, "tensor is not on a tape");
  return *a.tape();
}

}  // namespace

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

Parameter& ParameterStore::add(std::string name, Matrix value) {
  if (find(name) != nullptr) throw Error(ErrorKind::Usage, "duplicate parameter name " + name);
  return params_.emplace_back(std::move(name), std::move(value));
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    p.zero_grad();
    p.touched = false;
  }
}

const Matrix& Tensor::value() const {
  if (tape_ == nullptr) throw Error(ErrorKind::Usage, "tensor is not on a tape");
  return tape_->value(id_);
}

double Tensor::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw Error(ErrorKind::Shape, "expected scalar, got " + shape_str(v));
  return v(0, 0);
}

Tensor Tape::constant(Matrix value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant_scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Tensor Tape::param(Parameter& p) {
  Node& n = nodes_.emplace_back();
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::record(Matrix value, std::span<const Tensor> inputs, BackwardFn backward) {
  for (const Tensor& t : inputs) {
    if (t.tape() != this) throw Error(ErrorKind::Usage, "input recorded on a different tape");
  }
  if (!all_finite(value)) throw Error(ErrorKind::Numerical, "non-finite value produced");
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad =
      std::any_of(inputs.begin(), inputs.end(), [this](const Tensor& t) { return requires_grad(t.id()); });
  if (n.requires_grad) n.backward = std::move(backward);
  return Tensor(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(const Tensor& loss, double seed) {
  if (loss.tape() != this) throw Error(ErrorKind::Usage, "backward without an active record");
  const Matrix& lv = value(loss.id());
  if (lv.size() != 1) throw Error(ErrorKind::Shape, "backward needs a scalar loss, got " + shape_str(lv));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(loss.id(), Matrix::Constant(1, 1, seed));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
  backward_done_ = true;
}

void Tape::flush_gradients() {
  if (!backward_done_) return;
  for (auto& n : nodes_) {
    if (n.param == nullptr) continue;
    n.param->touched = true;
    if (n.grad.size() == 0) continue;
    n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  const std::size_t ia = a.id(), ib = b.id();
  Tensor inputs[] = {a, b};
  return t.record(av * bv, inputs, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Tensor transpose(const Tensor& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Tensor inputs[] = {a};
  return t.record(a.value().transpose(), inputs, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self).transpose());
  });
}

Tensor right_pseudo_inverse(const Tensor& u, double condition_cap) {
  Tape& t = tape_of(u);
  const Matrix& uv = u.value();
  if (uv.rows() != 4) throw Error(ErrorKind::Shape, "right_pseudo_inverse expects 4 rows, got " + shape_str(uv));
  if (uv.cols() < 4)
    throw Error(ErrorKind::Shape, "right_pseudo_inverse needs at least 4 columns, got " + shape_str(uv));

  const Eigen::Matrix4d gram = uv * uv.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  const double condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(condition <= condition_cap)) {
    std::ostringstream os;
    os << "right_pseudo_inverse: U·Uᵀ is singular or ill-conditioned (condition " << condition << ", cap "
       << condition_cap << ")";
    throw SingularError(os.str(), condition);
  }
  const Eigen::Matrix4d gram_inv = gram.inverse();
  Matrix pinv = uv.transpose() * gram_inv;

  const std::size_t iu = u.id();
  Tensor inputs[] = {u};
  return t.record(std::move(pinv), inputs, [iu, gram_inv](Tape& tp, std::size_t self) {
    // P = Uᵀ M⁻¹ with M = U Uᵀ:
    // dU = M⁻¹ Gᵀ − Pᵀ G Pᵀ − M⁻¹ Gᵀ P U
    const Matrix& g = tp.grad(self);
    const Matrix& uval = tp.value(iu);
    const Matrix& p = tp.value(self);
    const Matrix minv_gt = gram_inv * g.transpose();
    const Matrix pt = p.transpose();
    Matrix du = minv_gt - pt * g * pt - minv_gt * (p * uval);
    tp.accumulate(iu, du);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  if (a.shape() != b.shape()) shape_error("add", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  Tensor inputs[] = {a, b};
  return t.record(a.value() + b.value(), inputs, [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  if (a.shape() != b.shape()) shape_error("subtract", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  Tensor inputs[] = {a, b};
  return t.record(a.value() - b.value(), inputs, [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    if (tp.requires_grad(ib)) tp.accumulate(ib, -tp.grad(self));
  });
}

Tensor scale(const Tensor& a, double s) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Tensor inputs[] = {a};
  return t.record(a.value() * s, inputs, [ia, s](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self) * s);
  });
}

Tensor relu(const Tensor& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Tensor inputs[] = {a};
  return t.record(a.value().cwiseMax(0.0), inputs, [ia](Tape& tp, std::size_t self) {
    const Matrix& x = tp.value(ia);
    tp.accumulate(ia, (x.array() > 0.0).select(tp.grad(self), 0.0));
  });
}

Tensor sigmoid(const Tensor& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Matrix y = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  Tensor inputs[] = {a};
  return t.record(std::move(y), inputs, [ia](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    tp.accumulate(ia, tp.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw Error(ErrorKind::Shape, "concat of zero tensors");
  if (axis != 0 && axis != 1) throw Error(ErrorKind::Shape, "concat axis must be 0 or 1");
  Tape& t = tape_of(parts[0]);
  Index rows = 0, cols = 0;
  for (const Tensor& p : parts) {
    if (p.tape() != &t) throw Error(ErrorKind::Usage, "tensors recorded on different tapes");
    const Matrix& v = p.value();
    if (axis == 0) {
      if (v.cols() != parts[0].cols()) shape_error("concat", parts[0].value(), v);
      rows += v.rows();
      cols = v.cols();
    } else {
      if (v.rows() != parts[0].rows()) shape_error("concat", parts[0].value(), v);
      cols += v.cols();
      rows = v.rows();
    }
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> pieces;  // (node, offset)
  std::vector<Index> extents;
  Index offset = 0;
  for (const Tensor& p : parts) {
    const Matrix& v = p.value();
    if (axis == 0) {
      out.middleRows(offset, v.rows()) = v;
      extents.push_back(v.rows());
    } else {
      out.middleCols(offset, v.cols()) = v;
      extents.push_back(v.cols());
    }
    pieces.emplace_back(p.id(), offset);
    offset += extents.back();
  }
  return t.record(std::move(out), parts, [pieces, extents, axis](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const auto [id, off] = pieces[i];
      if (!tp.requires_grad(id)) continue;
      if (axis == 0)
        tp.accumulate(id, g.middleRows(off, extents[i]));
      else
        tp.accumulate(id, g.middleCols(off, extents[i]));
    }
  });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  Tape& t = same_tape(x, b);
  const Matrix& xv = x.value();
  const Matrix& bv = b.value();
  if (bv.cols() != 1 || bv.rows() != xv.rows()) shape_error("add_bias", xv, bv);
  const std::size_t ix = x.id(), ib = b.id();
  Matrix out = xv.colwise() + bv.col(0);
  Tensor inputs[] = {x, b};
  return t.record(std::move(out), inputs, [ix, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(ix, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.rowwise().sum());
  });
}

Tensor broadcast_cols(const Tensor& x, Index n) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  if (xv.cols() != 1) throw Error(ErrorKind::Shape, "broadcast_cols expects a column, got " + shape_str(xv));
  const std::size_t ix = x.id();
  Matrix out = xv.replicate(1, n);
  Tensor inputs[] = {x};
  return t.record(std::move(out), inputs, [ix](Tape& tp, std::size_t self) {
    tp.accumulate(ix, tp.grad(self).rowwise().sum());
  });
}

Tensor gather_cols(const Tensor& x, std::span<const int> index) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), static_cast<Index>(index.size()));
  for (Index c = 0; c < out.cols(); ++c) {
    const int src = index[static_cast<std::size_t>(c)];
    if (src < 0 || src >= xv.cols())
      throw Error(ErrorKind::Shape, "gather_cols: index " + std::to_string(src) + " out of range for " + shape_str(xv));
    out.col(c) = xv.col(src);
  }
  const std::size_t ix = x.id();
  std::vector<int> idx(index.begin(), index.end());
  const Index src_cols = xv.cols();
  Tensor inputs[] = {x};
  return t.record(std::move(out), inputs, [ix, idx = std::move(idx), src_cols](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix gx = Matrix::Zero(g.rows(), src_cols);
    for (std::size_t c = 0; c < idx.size(); ++c) gx.col(idx[c]) += g.col(static_cast<Index>(c));
    tp.accumulate(ix, gx);
  });
}

Tensor gather_add_relu(const Tensor& x, const Tensor& a, std::span<const int> ia, const Tensor& b,
                       std::span<const int> ib, const Tensor& bias) {
  Tape& t = same_tape(x, a);
  same_tape(x, b);
  same_tape(x, bias);
  const Matrix& xv = x.value();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Matrix& cv = bias.value();
  const Index n = xv.cols();
  if (av.rows() != xv.rows() || bv.rows() != xv.rows() || cv.rows() != xv.rows() || cv.cols() != 1 ||
      static_cast<Index>(ia.size()) != n || static_cast<Index>(ib.size()) != n)
    throw Error(ErrorKind::Shape, "gather_add_relu: operand shapes do not agree with " + shape_str(xv));
  for (std::size_t c = 0; c < ia.size(); ++c) {
    if (ia[c] < 0 || ia[c] >= av.cols() || ib[c] < 0 || ib[c] >= bv.cols())
      throw Error(ErrorKind::Shape, "gather_add_relu: index out of range");
  }
  Matrix out(xv.rows(), n);
  for (Index c = 0; c < n; ++c)
    out.col(c) = (xv.col(c) + av.col(ia[static_cast<std::size_t>(c)]) + bv.col(ib[static_cast<std::size_t>(c)]) + cv)
                     .cwiseMax(0.0);
  const std::size_t jx = x.id(), ja = a.id(), jb = b.id(), jc = bias.id();
  std::vector<int> sa(ia.begin(), ia.end()), sb(ib.begin(), ib.end());
  Tensor inputs[] = {x, a, b, bias};
  return t.record(std::move(out), inputs,
                  [jx, ja, jb, jc, sa = std::move(sa), sb = std::move(sb)](Tape& tp, std::size_t self) {
                    const Matrix& y = tp.value(self);
                    const Matrix g = (y.array() > 0.0).select(tp.grad(self), 0.0);
                    if (tp.requires_grad(ja)) {
                      Matrix ga = Matrix::Zero(g.rows(), tp.value(ja).cols());
                      for (std::size_t c = 0; c < sa.size(); ++c) ga.col(sa[c]) += g.col(static_cast<Index>(c));
                      tp.accumulate(ja, ga);
                    }
                    if (tp.requires_grad(jb)) {
                      Matrix gb = Matrix::Zero(g.rows(), tp.value(jb).cols());
                      for (std::size_t c = 0; c < sb.size(); ++c) gb.col(sb[c]) += g.col(static_cast<Index>(c));
                      tp.accumulate(jb, gb);
                    }
                    if (tp.requires_grad(jc)) tp.accumulate(jc, g.rowwise().sum());
                    tp.accumulate(jx, g);
                  });
}

Tensor scatter_mean_cols(const Tensor& x, std::span<const int> target, Index n) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  if (static_cast<Index>(target.size()) != xv.cols())
    throw Error(ErrorKind::Shape, "scatter_mean_cols: target size does not match column count");
  std::vector<double> inv_count(static_cast<std::size_t>(n), 0.0);
  for (int tg : target) {
    if (tg < 0 || tg >= n) throw Error(ErrorKind::Shape, "scatter_mean_cols: target out of range");
    inv_count[static_cast<std::size_t>(tg)] += 1.0;
  }
  for (double& c : inv_count) c = c > 0.0 ? 1.0 / c : 0.0;
  Matrix out = Matrix::Zero(xv.rows(), n);
  for (Index c = 0; c < xv.cols(); ++c) out.col(target[static_cast<std::size_t>(c)]) += xv.col(c);
  for (Index c = 0; c < n; ++c) out.col(c) *= inv_count[static_cast<std::size_t>(c)];
  const std::size_t ix = x.id();
  std::vector<int> tg(target.begin(), target.end());
  Tensor inputs[] = {x};
  return t.record(std::move(out), inputs,
                  [ix, tg = std::move(tg), inv_count = std::move(inv_count)](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    Matrix gx(g.rows(), static_cast<Index>(tg.size()));
                    for (std::size_t c = 0; c < tg.size(); ++c)
                      gx.col(static_cast<Index>(c)) = g.col(tg[c]) * inv_count[static_cast<std::size_t>(tg[c])];
                    tp.accumulate(ix, gx);
                  });
}

Tensor vec(const Tensor& x) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  const Index r = xv.rows(), c = xv.cols();
  Matrix out = Eigen::Map<const Matrix>(xv.data(), r * c, 1);
  const std::size_t ix = x.id();
  Tensor inputs[] = {x};
  return t.record(std::move(out), inputs, [ix, r, c](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(ix, Eigen::Map<const Matrix>(g.data(), r, c));
  });
}

Tensor unflatten_rowmajor(const Tensor& x, Index rows, Index cols) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  if (xv.size() != rows * cols || (xv.rows() != 1 && xv.cols() != 1))
    throw Error(ErrorKind::Shape, "unflatten_rowmajor: cannot view " + shape_str(xv) + " as " +
                                      std::to_string(rows) + "x" + std::to_string(cols));
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < cols; ++k) out(i, k) = xv(i * cols + k);
  const std::size_t ix = x.id();
  const Index xr = xv.rows(), xc = xv.cols();
  Tensor inputs[] = {x};
  return t.record(std::move(out), inputs, [ix, rows, cols, xr, xc](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix gx(xr, xc);
    for (Index i = 0; i < rows; ++i)
      for (Index k = 0; k < cols; ++k) gx(i * cols + k) = g(i, k);
    tp.accumulate(ix, gx);
  });
}

Tensor max_pool_over_points(const Tensor& x) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  if (xv.cols() == 0) throw Error(ErrorKind::Shape, "max_pool_over_points: empty point set");
  Matrix out(xv.rows(), 1);
  std::vector<Index> arg(static_cast<std::size_t>(xv.rows()));
  for (Index r = 0; r < xv.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < xv.cols(); ++c)
      if (xv(r, c) > xv(r, best)) best = c;
    arg[static_cast<std::size_t>(r)] = best;
    out(r, 0) = xv(r, best);
  }
  const std::size_t ix = x.id();
  const Index cols = xv.cols();
  Tensor inputs[] = {x};
  return t.record(std::move(out), inputs, [ix, arg = std::move(arg), cols](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix gx = Matrix::Zero(g.rows(), cols);
    for (Index r = 0; r < g.rows(); ++r) gx(r, arg[static_cast<std::size_t>(r)]) = g(r, 0);
    tp.accumulate(ix, gx);
  });
}

Tensor sum(const Tensor& x) {
  Tape& t = tape_of(x);
  const std::size_t ix = x.id();
  const Index r = x.rows(), c = x.cols();
  Tensor inputs[] = {x};
  return t.record(Matrix::Constant(1, 1, x.value().sum()), inputs, [ix, r, c](Tape& tp, std::size_t self) {
    tp.accumulate(ix, Matrix::Constant(r, c, tp.grad(self)(0, 0)));
  });
}

Tensor frobenius_sq(const Tensor& x) {
  Tape& t = tape_of(x);
  const std::size_t ix = x.id();
  Tensor inputs[] = {x};
  return t.record(Matrix::Constant(1, 1, x.value().squaredNorm()), inputs, [ix](Tape& tp, std::size_t self) {
    tp.accumulate(ix, tp.value(ix) * (2.0 * tp.grad(self)(0, 0)));
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mse", a.value(), b.value());
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error(ErrorKind::Shape, "mse of empty tensors");
  return scale(frobenius_sq(subtract(a, b)), 1.0 / n);
}

double gradient_check(const std::function<Tensor(Tape&)>& f, std::span<Parameter* const> params, double eps) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
    tape.flush_gradients();
  }
  auto evaluate = [&f]() {
    Tape tape;
    return f(tape).scalar();
  };
  double worst = 0.0;
  for (Parameter* p : params) {
    for (Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value(i);
      p->value(i) = saved + eps;
      const double up = evaluate();
      p->value(i) = saved - eps;
      const double down = evaluate();
      p->value(i) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad(i);
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      if (std::isnan(err)) return std::numeric_limits<double>::quiet_NaN();
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace unimatch::ad
