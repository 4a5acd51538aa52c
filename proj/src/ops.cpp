#include "luvit/ops.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace luvit {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

template <typename S>
using Backward = std::function<void(const Node<S>&)>;

template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;

template <typename S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

// Wraps a freshly computed value; records it on the active tape when any input needs a gradient.
template <typename S>
Tensor<S> make_result(Shape shape, Buffer<S> value, std::vector<NodePtr<S>> inputs, Backward<S> backward) {
  Tensor<S> out(std::move(shape), std::move(value));
  Tape<S>* tape = active_tape<S>();
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in && in->requires_grad);
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs = std::move(inputs);
  node.backward = std::move(backward);
  tape->record(out.node());
  return out;
}

// Grad slot of an input, or nullptr when that input is frozen / a constant.
template <typename S>
Buffer<S>* grad_of(const NodePtr<S>& node) {
  return node && node->requires_grad ? &node->grad_slot() : nullptr;
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename S>
void require_rank(const Tensor<S>& x, Index rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(x.shape()));
  }
}

template <typename S>
Index last_extent(const Tensor<S>& x, const char* op) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": needs at least one axis");
  return x.shape().back();
}

template <typename S>
ConstMatMap<S> as_matrix(const Buffer<S>& b, Index rows, Index cols) {
  return ConstMatMap<S>(b.data(), rows, cols);
}

template <typename S>
MatMap<S> as_matrix(Buffer<S>& b, Index rows, Index cols) {
  return MatMap<S>(b.data(), rows, cols);
}

}  // namespace

// Linear algebra -------------------------------------------------------------

template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool transpose_a, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const Index groups = a.dim(0);
  if (b.dim(0) != groups) throw ShapeError("bmm: batch mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const Index ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const Index m = transpose_a ? ac : ar;
  const Index k = transpose_a ? ar : ac;
  const Index kb = transpose_b ? bc : br;
  const Index n = transpose_b ? br : bc;
  if (k != kb) throw ShapeError("bmm: inner extent mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));

  Buffer<S> out(groups * m * n);
  for (Index g = 0; g < groups; ++g) {
    ConstMatMap<S> A(a.value().data() + g * ar * ac, ar, ac);
    ConstMatMap<S> B(b.value().data() + g * br * bc, br, bc);
    MatMap<S> C(out.data() + g * m * n, m, n);
    if (!transpose_a && !transpose_b) C.noalias() = A * B;
    else if (!transpose_a) C.noalias() = A * B.transpose();
    else if (!transpose_b) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();
  }

  return make_result<S>({groups, m, n}, std::move(out), {a.node(), b.node()},
      [=](const Node<S>& self) {
        const auto& an = self.inputs[0];
        const auto& bn = self.inputs[1];
        Buffer<S>* ga = grad_of(an);
        Buffer<S>* gb = grad_of(bn);
        for (Index g = 0; g < groups; ++g) {
          ConstMatMap<S> dC(self.grad.data() + g * m * n, m, n);
          ConstMatMap<S> A(an->value.data() + g * ar * ac, ar, ac);
          ConstMatMap<S> B(bn->value.data() + g * br * bc, br, bc);
          if (ga) {
            MatMap<S> dA(ga->data() + g * ar * ac, ar, ac);
            // d op(A) = dC op(B)^T
            if (!transpose_a && !transpose_b) dA.noalias() += dC * B.transpose();
            else if (!transpose_a) dA.noalias() += dC * B;
            else if (!transpose_b) dA.noalias() += B * dC.transpose();
            else dA.noalias() += B.transpose() * dC.transpose();
          }
          if (gb) {
            MatMap<S> dB(gb->data() + g * br * bc, br, bc);
            // d op(B) = op(A)^T dC
            if (!transpose_a && !transpose_b) dB.noalias() += A.transpose() * dC;
            else if (!transpose_a) dB.noalias() += dC.transpose() * A;
            else if (!transpose_b) dB.noalias() += A * dC;
            else dB.noalias() += dC.transpose() * A.transpose();
          }
        }
      });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Tensor<S> out = bmm(reshape(a, {1, a.dim(0), a.dim(1)}), reshape(b, {1, b.dim(0), b.dim(1)}));
  return reshape(out, {a.dim(0), b.dim(1)});
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  require_rank(weight, 2, "linear");
  const Index in = weight.dim(1), outf = weight.dim(0);
  if (last_extent(x, "linear") != in) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " vs weight " + to_string(weight.shape()));
  }
  const Index rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = outf;

  Buffer<S> out(rows * outf);
  {
    MatMap<S> Y(out.data(), rows, outf);
    Y.noalias() = x.matrix() * weight.matrix().transpose();
    if (bias.defined()) Y.rowwise() += bias.value().matrix().transpose();
  }

  return make_result<S>(std::move(shape), std::move(out), {x.node(), weight.node(), bias.node()},
      [=](const Node<S>& self) {
        ConstMatMap<S> dY(self.grad.data(), rows, outf);
        const auto& xn = self.inputs[0];
        const auto& wn = self.inputs[1];
        if (Buffer<S>* gx = grad_of(xn)) {
          as_matrix(*gx, rows, in).noalias() += dY * as_matrix(wn->value, outf, in);
        }
        if (Buffer<S>* gw = grad_of(wn)) {
          as_matrix(*gw, outf, in).noalias() += dY.transpose() * as_matrix(xn->value, rows, in);
        }
        if (Buffer<S>* gb = grad_of(self.inputs[2])) {
          gb->matrix() += dY.colwise().sum().transpose();
        }
      });
}

// Elementwise ----------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  return make_result<S>(a.shape(), a.value() + b.value(), {a.node(), b.node()}, [](const Node<S>& self) {
    if (Buffer<S>* ga = grad_of(self.inputs[0])) *ga += self.grad;
    if (Buffer<S>* gb = grad_of(self.inputs[1])) *gb += self.grad;
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "sub");
  return make_result<S>(a.shape(), a.value() - b.value(), {a.node(), b.node()}, [](const Node<S>& self) {
    if (Buffer<S>* ga = grad_of(self.inputs[0])) *ga += self.grad;
    if (Buffer<S>* gb = grad_of(self.inputs[1])) *gb -= self.grad;
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "mul");
  return make_result<S>(a.shape(), a.value() * b.value(), {a.node(), b.node()}, [](const Node<S>& self) {
    const auto& an = self.inputs[0];
    const auto& bn = self.inputs[1];
    if (Buffer<S>* ga = grad_of(an)) *ga += self.grad * bn->value;
    if (Buffer<S>* gb = grad_of(bn)) *gb += self.grad * an->value;
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, double factor) {
  const S f = static_cast<S>(factor);
  return make_result<S>(x.shape(), x.value() * f, {x.node()}, [f](const Node<S>& self) {
    if (Buffer<S>* gx = grad_of(self.inputs[0])) *gx += self.grad * f;
  });
}

template <typename S>
Tensor<S> add_broadcast(const Tensor<S>& x, const Tensor<S>& y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
    throw ShapeError("add_broadcast: " + to_string(ys) + " is not a suffix of " + to_string(xs));
  }
  const Index inner = y.numel();
  const Index outer = x.numel() / inner;
  Buffer<S> out = x.value();
  as_matrix(out, outer, inner).rowwise() += y.value().matrix().transpose();

  return make_result<S>(xs, std::move(out), {x.node(), y.node()}, [=](const Node<S>& self) {
    if (Buffer<S>* gx = grad_of(self.inputs[0])) *gx += self.grad;
    if (Buffer<S>* gy = grad_of(self.inputs[1])) {
      gy->matrix() += as_matrix(self.grad, outer, inner).colwise().sum().transpose();
    }
  });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  const Buffer<S> out = x.value().unaryExpr([](S v) {
    return static_cast<S>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  });
  return make_result<S>(x.shape(), out, {x.node()}, [](const Node<S>& self) {
    const auto& xn = self.inputs[0];
    if (Buffer<S>* gx = grad_of(xn)) {
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (Index i = 0; i < self.grad.size(); ++i) {
        const double v = xn->value[i];
        const double d = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        (*gx)[i] += static_cast<S>(self.grad[i] * d);
      }
    }
  });
}

template <typename S>
Tensor<S> silu(const Tensor<S>& x) {
  const Buffer<S> sig = (S(1) + (-x.value()).exp()).inverse();
  return make_result<S>(x.shape(), x.value() * sig, {x.node()}, [sig](const Node<S>& self) {
    const auto& xn = self.inputs[0];
    if (Buffer<S>* gx = grad_of(xn)) *gx += self.grad * sig * (S(1) + xn->value * (S(1) - sig));
  });
}

// Layout ---------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, const Shape& shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return make_result<S>(shape, x.value(), {x.node()}, [](const Node<S>& self) {
    if (Buffer<S>* gx = grad_of(self.inputs[0])) *gx += self.grad;
  });
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& axes) {
  const Index r = x.rank();
  if (static_cast<Index>(axes.size()) != r) throw ShapeError("permute: axis count mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[a]) throw ShapeError("permute: invalid axis list for " + to_string(x.shape()));
    seen[a] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<Index> in_stride(r, 1);
  for (Index i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  Shape out_shape(r);
  std::vector<Index> src_stride(r);
  for (Index i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_stride[i] = in_stride[axes[i]];
  }

  // source[i] = flat input index feeding flat output index i
  const Index n = x.numel();
  std::vector<Index> source(n);
  std::vector<Index> counter(r, 0);
  Index offset = 0;
  for (Index i = 0; i < n; ++i) {
    source[i] = offset;
    for (Index ax = r - 1; ax >= 0; --ax) {
      ++counter[ax];
      offset += src_stride[ax];
      if (counter[ax] < out_shape[ax]) break;
      offset -= src_stride[ax] * out_shape[ax];
      counter[ax] = 0;
    }
  }

  Buffer<S> out(n);
  for (Index i = 0; i < n; ++i) out[i] = x.value()[source[i]];
  return make_result<S>(std::move(out_shape), std::move(out), {x.node()},
      [source = std::move(source)](const Node<S>& self) {
        if (Buffer<S>* gx = grad_of(self.inputs[0])) {
          for (std::size_t i = 0; i < source.size(); ++i) (*gx)[source[i]] += self.grad[i];
        }
      });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  require_rank(x, 2, "transpose");
  return permute(x, {1, 0});
}

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<Index>& rows) {
  const Index cols = last_extent(x, "gather_rows");
  const Index nrows = x.numel() / cols;
  for (Index r : rows) {
    if (r < 0 || r >= nrows) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range " + to_string(x.shape()));
  }
  const Index n = static_cast<Index>(rows.size());
  if (n == 0) throw ShapeError("gather_rows: empty index list");
  Buffer<S> out(n * cols);
  const auto src = x.matrix();
  MatMap<S> dst(out.data(), n, cols);
  for (Index i = 0; i < n; ++i) dst.row(i) = src.row(rows[i]);

  return make_result<S>({n, cols}, std::move(out), {x.node()}, [rows, nrows, cols](const Node<S>& self) {
    if (Buffer<S>* gx = grad_of(self.inputs[0])) {
      MatMap<S> dx(gx->data(), nrows, cols);
      ConstMatMap<S> dy(self.grad.data(), static_cast<Index>(rows.size()), cols);
      for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += dy.row(static_cast<Index>(i));
    }
  });
}

template <typename S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  const Index cols = last_extent(a, "concat_rows");
  if (last_extent(b, "concat_rows") != cols) {
    throw ShapeError("concat_rows: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const Index na = a.numel(), nb = b.numel();
  Buffer<S> out(na + nb);
  out.head(na) = a.value();
  out.tail(nb) = b.value();
  return make_result<S>({(na + nb) / cols, cols}, std::move(out), {a.node(), b.node()}, [na, nb](const Node<S>& self) {
    if (Buffer<S>* ga = grad_of(self.inputs[0])) *ga += self.grad.head(na);
    if (Buffer<S>* gb = grad_of(self.inputs[1])) *gb += self.grad.tail(nb);
  });
}

// Reductions -----------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  const S total = static_cast<S>(x.value().template cast<double>().sum());
  return make_result<S>({}, Buffer<S>::Constant(1, total), {x.node()}, [](const Node<S>& self) {
    if (Buffer<S>* gx = grad_of(self.inputs[0])) *gx += self.grad[0];
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  const Index n = x.numel();
  const S avg = static_cast<S>(x.value().template cast<double>().sum() / static_cast<double>(n));
  return make_result<S>({}, Buffer<S>::Constant(1, avg), {x.node()}, [n](const Node<S>& self) {
    if (Buffer<S>* gx = grad_of(self.inputs[0])) *gx += static_cast<S>(self.grad[0] / static_cast<double>(n));
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x, int axis) {
  const Index r = x.rank();
  if (axis < 0) axis += static_cast<int>(r);
  if (axis < 0 || axis >= r) throw ShapeError("mean: axis out of range for " + to_string(x.shape()));
  const Shape& s = x.shape();
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[i];
  for (Index i = axis + 1; i < r; ++i) inner *= s[i];
  const Index n = s[axis];
  Shape out_shape;
  for (Index i = 0; i < r; ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }

  Buffer<S> out(outer * inner);
  const S* src = x.value().data();
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < inner; ++j) {
      double acc = 0.0;
      for (Index k = 0; k < n; ++k) acc += src[(o * n + k) * inner + j];
      out[o * inner + j] = static_cast<S>(acc / static_cast<double>(n));
    }
  }
  return make_result<S>(std::move(out_shape), std::move(out), {x.node()}, [=](const Node<S>& self) {
    if (Buffer<S>* gx = grad_of(self.inputs[0])) {
      const S inv = static_cast<S>(1.0 / static_cast<double>(n));
      for (Index o = 0; o < outer; ++o) {
        for (Index k = 0; k < n; ++k) {
          for (Index j = 0; j < inner; ++j) (*gx)[(o * n + k) * inner + j] += self.grad[o * inner + j] * inv;
        }
      }
    }
  });
}

// Normalisation and probabilities --------------------------------------------

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  const Index cols = last_extent(x, "softmax_rows");
  const Index rows = x.numel() / cols;
  Buffer<S> out(x.numel());
  const auto in = x.matrix();
  MatMap<S> y(out.data(), rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const S m = in.row(i).maxCoeff();
    y.row(i) = (in.row(i).array() - m).exp().matrix();
    const double total = y.row(i).template cast<double>().sum();
    y.row(i) = (y.row(i).template cast<double>() / total).template cast<S>();
  }
  return make_result<S>(x.shape(), std::move(out), {x.node()}, [rows, cols](const Node<S>& self) {
    if (Buffer<S>* gx = grad_of(self.inputs[0])) {
      ConstMatMap<S> y(self.value.data(), rows, cols);
      ConstMatMap<S> dy(self.grad.data(), rows, cols);
      MatMap<S> dx(gx->data(), rows, cols);
      for (Index i = 0; i < rows; ++i) {
        const double dot = (y.row(i).template cast<double>().array() * dy.row(i).template cast<double>().array()).sum();
        dx.row(i).array() += y.row(i).array() * (dy.row(i).array() - static_cast<S>(dot));
      }
    }
  });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, double eps) {
  const Index d = last_extent(x, "layer_norm");
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: affine params do not match " + to_string(x.shape()));
  }
  const Index rows = x.numel() / d;
  Buffer<S> xhat(x.numel());
  Buffer<S> rstd(rows);
  const auto in = x.matrix();
  MatMap<S> xh(xhat.data(), rows, d);
  for (Index i = 0; i < rows; ++i) {
    const Eigen::RowVectorXd r = in.row(i).template cast<double>();
    const double mu = r.mean();
    const double var = (r.array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[i] = static_cast<S>(inv);
    xh.row(i) = ((r.array() - mu) * inv).matrix().template cast<S>();
  }
  Buffer<S> out(x.numel());
  MatMap<S> y(out.data(), rows, d);
  y = (xh.array().rowwise() * gamma.value().transpose()).rowwise() + beta.value().transpose();

  return make_result<S>(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [xhat = std::move(xhat), rstd = std::move(rstd), rows, d](const Node<S>& self) {
        ConstMatMap<S> dy(self.grad.data(), rows, d);
        ConstMatMap<S> xh(xhat.data(), rows, d);
        const auto& g = self.inputs[1]->value;
        if (Buffer<S>* gx = grad_of(self.inputs[0])) {
          MatMap<S> dx(gx->data(), rows, d);
          for (Index i = 0; i < rows; ++i) {
            const Eigen::ArrayXd dxh = (dy.row(i).array() * g.transpose()).template cast<double>().transpose();
            const Eigen::ArrayXd xr = xh.row(i).template cast<double>().transpose();
            const double m1 = dxh.mean();
            const double m2 = (dxh * xr).mean();
            dx.row(i).array() += ((dxh - m1 - xr * m2) * static_cast<double>(rstd[i])).transpose().template cast<S>();
          }
        }
        if (Buffer<S>* gg = grad_of(self.inputs[1])) {
          gg->matrix() += (dy.array() * xh.array()).colwise().sum().matrix().transpose();
        }
        if (Buffer<S>* gb = grad_of(self.inputs[2])) gb->matrix() += dy.colwise().sum().transpose();
      });
}

template <typename S>
Tensor<S> rms_norm(const Tensor<S>& x, const Tensor<S>& gain, double eps) {
  const Index d = last_extent(x, "rms_norm");
  if (gain.numel() != d) throw ShapeError("rms_norm: gain does not match " + to_string(x.shape()));
  const Index rows = x.numel() / d;
  Buffer<S> rinv(rows);
  Buffer<S> out(x.numel());
  const auto in = x.matrix();
  MatMap<S> y(out.data(), rows, d);
  for (Index i = 0; i < rows; ++i) {
    const double ms = in.row(i).template cast<double>().squaredNorm() / static_cast<double>(d);
    const double r = 1.0 / std::sqrt(ms + eps);
    rinv[i] = static_cast<S>(r);
    y.row(i) = (in.row(i).template cast<double>().array() * r * gain.value().transpose().template cast<double>())
                   .matrix()
                   .template cast<S>();
  }
  return make_result<S>(x.shape(), std::move(out), {x.node(), gain.node()},
      [rinv = std::move(rinv), rows, d](const Node<S>& self) {
        ConstMatMap<S> dy(self.grad.data(), rows, d);
        const auto& xn = self.inputs[0];
        const auto& g = self.inputs[1]->value;
        ConstMatMap<S> xv(xn->value.data(), rows, d);
        if (Buffer<S>* gx = grad_of(xn)) {
          MatMap<S> dx(gx->data(), rows, d);
          for (Index i = 0; i < rows; ++i) {
            const Eigen::ArrayXd u = (dy.row(i).array() * g.transpose()).template cast<double>().transpose();
            const Eigen::ArrayXd xr = xv.row(i).template cast<double>().transpose();
            const double r = rinv[i];
            const double proj = (u * xr).sum() / static_cast<double>(d);
            dx.row(i).array() += (u * r - xr * (r * r * r * proj)).transpose().template cast<S>();
          }
        }
        if (Buffer<S>* gg = grad_of(self.inputs[1])) {
          for (Index i = 0; i < rows; ++i) gg->matrix() += (dy.row(i).array() * xv.row(i).array() * rinv[i]).matrix().transpose();
        }
      });
}

template <typename S>
Tensor<S> cross_entropy_with_label_smoothing(const Tensor<S>& logits, const std::vector<int>& labels,
                                             double smoothing) {
  require_rank(logits, 2, "cross_entropy");
  const Index rows = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != rows) throw ShapeError("cross_entropy: label count does not match logits");
  if (smoothing < 0.0 || smoothing >= 1.0) throw ContractError("cross_entropy: smoothing must lie in [0, 1)");
  const double off = smoothing / static_cast<double>(classes);
  const double on = 1.0 - smoothing + off;

  Eigen::MatrixXd probs(rows, classes);
  double total = 0.0;
  const auto z = logits.matrix();
  for (Index i = 0; i < rows; ++i) {
    const int label = labels[i];
    if (label < 0 || label >= classes) throw ContractError("cross_entropy: label out of range");
    const Eigen::RowVectorXd r = z.row(i).template cast<double>();
    const double m = r.maxCoeff();
    const double lse = m + std::log((r.array() - m).exp().sum());
    const Eigen::RowVectorXd logp = r.array() - lse;
    probs.row(i) = logp.array().exp();
    total += -(off * logp.sum() + (on - off) * logp[label]);
  }
  const S loss = static_cast<S>(total / static_cast<double>(rows));

  return make_result<S>({}, Buffer<S>::Constant(1, loss), {logits.node()},
      [probs = std::move(probs), labels, rows, classes, on, off](const Node<S>& self) {
        if (Buffer<S>* gx = grad_of(self.inputs[0])) {
          MatMap<S> dz(gx->data(), rows, classes);
          const double upstream = self.grad[0] / static_cast<double>(rows);
          for (Index i = 0; i < rows; ++i) {
            Eigen::RowVectorXd q = Eigen::RowVectorXd::Constant(classes, off);
            q[labels[i]] = on;
            dz.row(i) += ((probs.row(i) - q) * upstream).template cast<S>();
          }
        }
      });
}

template <typename S>
Tensor<S> rope(const Tensor<S>& x, double base) {
  require_rank(x, 3, "rope");
  const Index groups = x.dim(0), tokens = x.dim(1), d = x.dim(2);
  if (d % 2 != 0) throw ShapeError("rope: head dimension must be even");
  Eigen::ArrayXXd cosv(tokens, d / 2), sinv(tokens, d / 2);
  for (Index t = 0; t < tokens; ++t) {
    for (Index i = 0; i < d / 2; ++i) {
      const double theta = static_cast<double>(t) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      cosv(t, i) = std::cos(theta);
      sinv(t, i) = std::sin(theta);
    }
  }
  auto rotate = [=](const S* in, S* out, bool inverse) {
    for (Index g = 0; g < groups; ++g) {
      for (Index t = 0; t < tokens; ++t) {
        for (Index i = 0; i < d / 2; ++i) {
          const Index o = (g * tokens + t) * d + 2 * i;
          const double c = cosv(t, i), s = inverse ? -sinv(t, i) : sinv(t, i);
          const double a = in[o], b = in[o + 1];
          out[o] = static_cast<S>(a * c - b * s);
          out[o + 1] = static_cast<S>(a * s + b * c);
        }
      }
    }
  };
  Buffer<S> out(x.numel());
  rotate(x.value().data(), out.data(), false);
  return make_result<S>(x.shape(), std::move(out), {x.node()}, [rotate](const Node<S>& self) {
    if (Buffer<S>* gx = grad_of(self.inputs[0])) {
      Buffer<S> back(self.grad.size());
      rotate(self.grad.data(), back.data(), true);
      *gx += back;
    }
  });
}

#define LUVIT_INSTANTIATE_OPS(S)                                                                             \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                             \
  template Tensor<S> bmm(const Tensor<S>&, const Tensor<S>&, bool, bool);                                    \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                           \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> scale(const Tensor<S>&, double);                                                        \
  template Tensor<S> add_broadcast(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> gelu(const Tensor<S>&);                                                                 \
  template Tensor<S> silu(const Tensor<S>&);                                                                 \
  template Tensor<S> reshape(const Tensor<S>&, const Shape&);                                                \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<int>&);                                     \
  template Tensor<S> transpose(const Tensor<S>&);                                                            \
  template Tensor<S> gather_rows(const Tensor<S>&, const std::vector<Index>&);                               \
  template Tensor<S> concat_rows(const Tensor<S>&, const Tensor<S>&);                                        \
  template Tensor<S> sum(const Tensor<S>&);                                                                  \
  template Tensor<S> mean(const Tensor<S>&);                                                                 \
  template Tensor<S> mean(const Tensor<S>&, int);                                                            \
  template Tensor<S> softmax_rows(const Tensor<S>&);                                                         \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);               \
  template Tensor<S> rms_norm(const Tensor<S>&, const Tensor<S>&, double);                                   \
  template Tensor<S> cross_entropy_with_label_smoothing(const Tensor<S>&, const std::vector<int>&, double);   \
  template Tensor<S> rope(const Tensor<S>&, double);

LUVIT_INSTANTIATE_OPS(float)
LUVIT_INSTANTIATE_OPS(double)

}  // namespace luvit
