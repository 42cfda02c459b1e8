#include "rdnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rdnet/error.hpp"

namespace rdnet {
namespace {

template <typename Real>
using Node = detail::TensorNode<Real>;

template <typename Real>
using MatrixR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
using BackwardFn = std::function<void(Node<Real>&)>;

// Wraps freshly computed data into a tensor and, if needed, records the
// inputs and backward closure.
template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> data,
                         std::initializer_list<const Tensor<Real>*> inputs, const char* op,
                         BackwardFn<Real> fn) {
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (GradMode::enabled()) {
    for (const auto* in : inputs) track = track || (in->defined() && in->requires_grad());
  }
  if (track) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->parents.push_back(in->defined() ? in->node_ptr() : nullptr);
    // Undefined optional inputs are stored as null parents; the backward
    // closures skip them.
    std::erase(node->parents, nullptr);
    node->backward_fn = std::move(fn);
  }
  return Tensor<Real>(std::move(node));
}

void require_rank(const Shape& shape, std::size_t rank, const char* op, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + to_string(shape));
  }
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename Real, typename F, typename DF>
Tensor<Real> unary(const Tensor<Real>& a, const char* op, F f, DF df) {
  std::vector<Real> out(a.data().size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<Real>(a.shape(), std::move(out), {&a}, op, [df](Node<Real>& o) {
    auto& p = *o.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(p.data[i], o.data[i]);
  });
}

// out[i] = in[index[i]]; the adjoint scatters back with accumulation.
template <typename Real>
Tensor<Real> gather(const Tensor<Real>& a, Shape shape, std::vector<std::int64_t> index,
                    const char* op) {
  std::vector<Real> out(index.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = in[static_cast<std::size_t>(index[i])];
  return make_result<Real>(std::move(shape), std::move(out), {&a}, op,
                           [index = std::move(index)](Node<Real>& o) {
                             auto& g = o.parents[0]->ensure_grad();
                             for (std::size_t i = 0; i < index.size(); ++i) {
                               g[static_cast<std::size_t>(index[i])] += o.grad[i];
                             }
                           });
}

struct Dims4 {
  std::int64_t b, c, h, w;
};

Dims4 dims4(const Shape& s, const char* op, const char* what) {
  require_rank(s, 4, op, what);
  return {s[0], s[1], s[2], s[3]};
}

// Lays out the receptive fields of one batch item as a
// (C*K*K) x (H_out*W_out) matrix.
template <typename Real>
void im2col(const Real* x, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride,
            int pad, std::int64_t ho, std::int64_t wo, Real* col) {
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Real* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(ci * h + iy) * w + ix]
                                    : Real(0);
          }
        }
      }
    }
  }
}

template <typename Real>
void col2im(const Real* col, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride,
            int pad, std::int64_t ho, std::int64_t wo, Real* x) {
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Real* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) x[(ci * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

// Index of a mirrored coordinate for arbitrary overshoot.
std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result<Real>(a.shape(), std::move(out), {&a, &b}, "add", [](Node<Real>& o) {
    for (auto& p : o.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_result<Real>(a.shape(), std::move(out), {&a, &b}, "sub", [](Node<Real>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_result<Real>(a.shape(), std::move(out), {&a, &b}, "mul", [](Node<Real>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa.data[i];
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  return unary<Real>(
      a, "scale", [factor](Real x) { return x * factor; },
      [factor](Real, Real) { return factor; });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real value) {
  return unary<Real>(
      a, "add_scalar", [value](Real x) { return x + value; }, [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& a) {
  return unary<Real>(
      a, "square", [](Real x) { return x * x; }, [](Real x, Real) { return Real(2) * x; });
}

KinkProbe& kink_probe() {
  thread_local KinkProbe probe;
  return probe;
}

template <typename Real>
Tensor<Real> abs(const Tensor<Real>& a) {
  if (auto& probe = kink_probe(); probe.armed) {
    std::uint64_t h = probe.signature;
    for (Real x : a.data()) {
      h = (h ^ static_cast<std::uint64_t>(x > 0 ? 1 : (x < 0 ? 2 : 3))) * 0x100000001B3ull;
    }
    probe.signature = h;
  }
  return unary<Real>(
      a, "abs", [](Real x) { return std::abs(x); },
      [](Real x, Real) { return x > 0 ? Real(1) : (x < 0 ? Real(-1) : Real(0)); });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  return unary<Real>(
      a, "sigmoid", [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> swish(const Tensor<Real>& a) {
  return unary<Real>(
      a, "swish", [](Real x) { return x / (Real(1) + std::exp(-x)); },
      [](Real x, Real) {
        const Real s = Real(1) / (Real(1) + std::exp(-x));
        return s + x * s * (Real(1) - s);
      });
}

template <typename Real>
Tensor<Real> clamp(const Tensor<Real>& a, Real lo, Real hi) {
  return unary<Real>(
      a, "clamp", [lo, hi](Real x) { return std::clamp(x, lo, hi); },
      [lo, hi](Real x, Real) { return (x >= lo && x <= hi) ? Real(1) : Real(0); });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  return make_result<Real>({1}, {total}, {&a}, "sum", [](Node<Real>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (auto& v : g) v += o.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  const Real inv = Real(1) / static_cast<Real>(a.numel());
  Real total = 0;
  for (Real v : a.data()) total += v;
  return make_result<Real>({1}, {total * inv}, {&a}, "mean", [inv](Node<Real>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (auto& v : g) v += o.grad[0] * inv;
  });
}

template <typename Real>
Tensor<Real> dot(const Tensor<Real>& a, const Tensor<Real>& b) {
  return sum(mul(a, b));
}

namespace {

template <typename Real>
std::int64_t channel_scale_batch(const Tensor<Real>& x, const Tensor<Real>& s, const char* op) {
  const auto d = dims4(x.shape(), op, "input");
  if (s.numel() == d.c) return 1;
  if (s.numel() == d.b * d.c) return d.b;
  throw ShapeError(std::string(op) + ": scale of shape " + to_string(s.shape()) +
                   " does not match channels " + std::to_string(d.c) + " of input " +
                   to_string(x.shape()));
}

}  // namespace

template <typename Real>
Tensor<Real> scale_channels(const Tensor<Real>& x, const Tensor<Real>& s) {
  const std::int64_t sb = channel_scale_batch(x, s, "scale_channels");
  const auto d = dims4(x.shape(), "scale_channels", "input");
  const std::int64_t hw = d.h * d.w;
  std::vector<Real> out(x.data().begin(), x.data().end());
  const auto sd = s.data();
  for (std::int64_t b = 0; b < d.b; ++b) {
    for (std::int64_t c = 0; c < d.c; ++c) {
      const Real f = sd[static_cast<std::size_t>((sb == 1 ? 0 : b) * d.c + c)];
      Real* p = out.data() + (b * d.c + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] *= f;
    }
  }
  return make_result<Real>(x.shape(), std::move(out), {&x, &s}, "scale_channels",
                           [d, sb, hw](Node<Real>& o) {
                             auto& px = *o.parents[0];
                             auto& ps = *o.parents[1];
                             for (std::int64_t b = 0; b < d.b; ++b) {
                               for (std::int64_t c = 0; c < d.c; ++c) {
                                 const auto si = static_cast<std::size_t>((sb == 1 ? 0 : b) * d.c + c);
                                 const std::int64_t base = (b * d.c + c) * hw;
                                 if (px.requires_grad) {
                                   auto& g = px.ensure_grad();
                                   const Real f = ps.data[si];
                                   for (std::int64_t i = 0; i < hw; ++i) g[base + i] += o.grad[base + i] * f;
                                 }
                                 if (ps.requires_grad) {
                                   Real acc = 0;
                                   for (std::int64_t i = 0; i < hw; ++i) acc += o.grad[base + i] * px.data[base + i];
                                   ps.ensure_grad()[si] += acc;
                                 }
                               }
                             }
                           });
}

template <typename Real>
Tensor<Real> divide_channels(const Tensor<Real>& x, const Tensor<Real>& s) {
  const std::int64_t sb = channel_scale_batch(x, s, "divide_channels");
  const auto d = dims4(x.shape(), "divide_channels", "input");
  const std::int64_t hw = d.h * d.w;
  std::vector<Real> out(x.data().begin(), x.data().end());
  const auto sd = s.data();
  for (std::int64_t b = 0; b < d.b; ++b) {
    for (std::int64_t c = 0; c < d.c; ++c) {
      const Real f = sd[static_cast<std::size_t>((sb == 1 ? 0 : b) * d.c + c)];
      Real* p = out.data() + (b * d.c + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] /= f;
    }
  }
  return make_result<Real>(x.shape(), std::move(out), {&x, &s}, "divide_channels",
                           [d, sb, hw](Node<Real>& o) {
                             auto& px = *o.parents[0];
                             auto& ps = *o.parents[1];
                             for (std::int64_t b = 0; b < d.b; ++b) {
                               for (std::int64_t c = 0; c < d.c; ++c) {
                                 const auto si = static_cast<std::size_t>((sb == 1 ? 0 : b) * d.c + c);
                                 const std::int64_t base = (b * d.c + c) * hw;
                                 const Real f = ps.data[si];
                                 if (px.requires_grad) {
                                   auto& g = px.ensure_grad();
                                   for (std::int64_t i = 0; i < hw; ++i) g[base + i] += o.grad[base + i] / f;
                                 }
                                 if (ps.requires_grad) {
                                   Real acc = 0;
                                   for (std::int64_t i = 0; i < hw; ++i) acc += o.grad[base + i] * o.data[base + i];
                                   ps.ensure_grad()[si] -= acc / f;
                                 }
                               }
                             }
                           });
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    int stride, int padding) {
  const auto x = dims4(input.shape(), "conv2d", "input");
  const auto wd = dims4(weight.shape(), "conv2d", "weight");
  if (wd.c != x.c) {
    throw ShapeError("conv2d: input channels (axis 1) " + std::to_string(x.c) +
                     " != weight input channels (axis 1) " + std::to_string(wd.c) + "; input " +
                     to_string(input.shape()) + ", weight " + to_string(weight.shape()));
  }
  if (wd.h != wd.w) throw ShapeError("conv2d: kernel must be square, got " + to_string(weight.shape()));
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  if (bias.defined() && bias.numel() != wd.b) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.numel()) + " values for " +
                     std::to_string(wd.b) + " output channels");
  }
  const int k = static_cast<int>(wd.h);
  if (x.h + 2 * padding < k || x.w + 2 * padding < k) {
    throw ShapeError("conv2d: spatial axes (2, 3) of input " + to_string(input.shape()) +
                     " smaller than kernel " + std::to_string(k) + " with padding " +
                     std::to_string(padding));
  }
  const std::int64_t ho = (x.h + 2 * padding - k) / stride + 1;
  const std::int64_t wo = (x.w + 2 * padding - k) / stride + 1;
  const std::int64_t cout = wd.b;
  const std::int64_t kk = x.c * k * k;
  const std::int64_t p = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);

  std::vector<Real> out(static_cast<std::size_t>(x.b * cout * p));
  std::vector<Real> col(pointwise ? 0 : static_cast<std::size_t>(kk * p));
  Eigen::Map<const MatrixR<Real>> wmat(weight.data().data(), cout, kk);
  for (std::int64_t b = 0; b < x.b; ++b) {
    const Real* xb = input.data().data() + b * x.c * x.h * x.w;
    if (!pointwise) im2col(xb, x.c, x.h, x.w, k, stride, padding, ho, wo, col.data());
    Eigen::Map<const MatrixR<Real>> cmat(pointwise ? xb : col.data(), kk, p);
    Eigen::Map<MatrixR<Real>> omat(out.data() + b * cout * p, cout, p);
    omat.noalias() = wmat * cmat;
    if (bias.defined()) {
      for (std::int64_t c = 0; c < cout; ++c) omat.row(c).array() += bias.data()[c];
    }
  }

  const bool has_bias = bias.defined();
  const bool in_tracked = input.requires_grad();
  const bool w_tracked = weight.requires_grad();
  const bool b_tracked = has_bias && bias.requires_grad();
  return make_result<Real>(
      {x.b, cout, ho, wo}, std::move(out), {&input, &weight, &bias}, "conv2d",
      [=](Node<Real>& o) {
        auto& pin = *o.parents[0];
        auto& pw = *o.parents[1];
        std::vector<Real> colbuf(pointwise ? 0 : static_cast<std::size_t>(kk * p));
        std::vector<Real> dcol(pointwise ? 0 : static_cast<std::size_t>(kk * p));
        Eigen::Map<const MatrixR<Real>> wm(pw.data.data(), cout, kk);
        for (std::int64_t b = 0; b < x.b; ++b) {
          Eigen::Map<const MatrixR<Real>> dout(o.grad.data() + b * cout * p, cout, p);
          const Real* xb = pin.data.data() + b * x.c * x.h * x.w;
          if (w_tracked) {
            if (!pointwise) im2col(xb, x.c, x.h, x.w, k, stride, padding, ho, wo, colbuf.data());
            Eigen::Map<const MatrixR<Real>> cm(pointwise ? xb : colbuf.data(), kk, p);
            Eigen::Map<MatrixR<Real>> dw(pw.ensure_grad().data(), cout, kk);
            dw.noalias() += dout * cm.transpose();
          }
          if (in_tracked) {
            Real* dxb = pin.ensure_grad().data() + b * x.c * x.h * x.w;
            if (pointwise) {
              Eigen::Map<MatrixR<Real>> dx(dxb, kk, p);
              dx.noalias() += wm.transpose() * dout;
            } else {
              Eigen::Map<MatrixR<Real>> dc(dcol.data(), kk, p);
              dc.noalias() = wm.transpose() * dout;
              col2im(dcol.data(), x.c, x.h, x.w, k, stride, padding, ho, wo, dxb);
            }
          }
          if (b_tracked) {
            auto& pb = *o.parents[2];
            auto& gb = pb.ensure_grad();
            for (std::int64_t c = 0; c < cout; ++c) gb[c] += dout.row(c).sum();
          }
        }
      });
}

template <typename Real>
Tensor<Real> pixel_shuffle(const Tensor<Real>& input, int r) {
  const auto d = dims4(input.shape(), "pixel_shuffle", "input");
  if (r < 1) throw ShapeError("pixel_shuffle: factor must be >= 1");
  const std::int64_t rr = static_cast<std::int64_t>(r) * r;
  if (d.c % rr != 0) {
    throw ShapeError("pixel_shuffle: channels (axis 1) " + std::to_string(d.c) +
                     " not divisible by r^2 = " + std::to_string(rr));
  }
  const std::int64_t oc = d.c / rr, oh = d.h * r, ow = d.w * r;
  std::vector<std::int64_t> index(static_cast<std::size_t>(input.numel()));
  for (std::int64_t b = 0; b < d.b; ++b)
    for (std::int64_t c = 0; c < d.c; ++c)
      for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t x = 0; x < d.w; ++x) {
          const std::int64_t sub = c % rr;
          const std::int64_t out_idx =
              ((b * oc + c / rr) * oh + y * r + sub / r) * ow + x * r + sub % r;
          index[static_cast<std::size_t>(out_idx)] = ((b * d.c + c) * d.h + y) * d.w + x;
        }
  return gather(input, {d.b, oc, oh, ow}, std::move(index), "pixel_shuffle");
}

template <typename Real>
Tensor<Real> pixel_unshuffle(const Tensor<Real>& input, int r) {
  const auto d = dims4(input.shape(), "pixel_unshuffle", "input");
  if (r < 1) throw ShapeError("pixel_unshuffle: factor must be >= 1");
  if (d.h % r != 0 || d.w % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial axes (2, 3) of " + to_string(input.shape()) +
                     " not divisible by " + std::to_string(r));
  }
  const std::int64_t rr = static_cast<std::int64_t>(r) * r;
  const std::int64_t oc = d.c * rr, oh = d.h / r, ow = d.w / r;
  std::vector<std::int64_t> index(static_cast<std::size_t>(input.numel()));
  for (std::int64_t b = 0; b < d.b; ++b)
    for (std::int64_t c = 0; c < oc; ++c)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
          const std::int64_t sub = c % rr;
          const std::int64_t src =
              ((b * d.c + c / rr) * d.h + y * r + sub / r) * d.w + x * r + sub % r;
          index[static_cast<std::size_t>(((b * oc + c) * oh + y) * ow + x)] = src;
        }
  return gather(input, {d.b, oc, oh, ow}, std::move(index), "pixel_unshuffle");
}

template <typename Real>
Tensor<Real> resample(const Tensor<Real>& input, Rational scale) {
  const auto d = dims4(input.shape(), "resample", "input");
  const bool up = scale.num == 2 * scale.den && scale.den != 0;
  const bool down = scale.den == 2 * scale.num && scale.num != 0;
  if (scale.num == scale.den && scale.num != 0) return gather(input, input.shape(), [&] {
      std::vector<std::int64_t> idx(static_cast<std::size_t>(input.numel()));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
      return idx;
    }(), "resample");
  if (!up && !down) {
    throw ValueError("resample: unsupported scale " + std::to_string(scale.num) + "/" +
                     std::to_string(scale.den) + " (expected 1/2 or 2)");
  }
  if (down && (d.h % 2 != 0 || d.w % 2 != 0)) {
    throw ShapeError("resample: scale 1/2 needs even spatial axes, got " + to_string(input.shape()));
  }
  const std::int64_t oh = up ? d.h * 2 : d.h / 2;
  const std::int64_t ow = up ? d.w * 2 : d.w / 2;
  std::vector<std::int64_t> index(static_cast<std::size_t>(d.b * d.c * oh * ow));
  std::size_t i = 0;
  for (std::int64_t bc = 0; bc < d.b * d.c; ++bc)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) {
        const std::int64_t sy = up ? y / 2 : y * 2;
        const std::int64_t sx = up ? x / 2 : x * 2;
        index[i++] = (bc * d.h + sy) * d.w + sx;
      }
  return gather(input, {d.b, d.c, oh, ow}, std::move(index), "resample");
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  require_rank(x.shape(), 2, "linear", "input");
  require_rank(weight.shape(), 2, "linear", "weight");
  const std::int64_t batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input features (axis 1) " + std::to_string(in) +
                     " != weight columns (axis 1) " + std::to_string(weight.dim(1)));
  }
  if (bias.numel() != out_dim) throw ShapeError("linear: bias length mismatch");
  std::vector<Real> out(static_cast<std::size_t>(batch * out_dim));
  Eigen::Map<const MatrixR<Real>> xm(x.data().data(), batch, in);
  Eigen::Map<const MatrixR<Real>> wm(weight.data().data(), out_dim, in);
  Eigen::Map<MatrixR<Real>> om(out.data(), batch, out_dim);
  om.noalias() = xm * wm.transpose();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t o = 0; o < out_dim; ++o) om(b, o) += bias.data()[o];
  return make_result<Real>({batch, out_dim}, std::move(out), {&x, &weight, &bias}, "linear",
                           [=](Node<Real>& o) {
                             auto& px = *o.parents[0];
                             auto& pw = *o.parents[1];
                             auto& pb = *o.parents[2];
                             Eigen::Map<const MatrixR<Real>> dout(o.grad.data(), batch, out_dim);
                             if (px.requires_grad) {
                               Eigen::Map<const MatrixR<Real>> w(pw.data.data(), out_dim, in);
                               Eigen::Map<MatrixR<Real>> dx(px.ensure_grad().data(), batch, in);
                               dx.noalias() += dout * w;
                             }
                             if (pw.requires_grad) {
                               Eigen::Map<const MatrixR<Real>> xv(px.data.data(), batch, in);
                               Eigen::Map<MatrixR<Real>> dw(pw.ensure_grad().data(), out_dim, in);
                               dw.noalias() += dout.transpose() * xv;
                             }
                             if (pb.requires_grad) {
                               auto& g = pb.ensure_grad();
                               for (std::int64_t oo = 0; oo < out_dim; ++oo) g[oo] += dout.col(oo).sum();
                             }
                           });
}

template <typename Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x) {
  const auto d = dims4(x.shape(), "global_avg_pool", "input");
  const std::int64_t hw = d.h * d.w;
  const Real inv = Real(1) / static_cast<Real>(hw);
  std::vector<Real> out(static_cast<std::size_t>(d.b * d.c));
  for (std::int64_t i = 0; i < d.b * d.c; ++i) {
    Real acc = 0;
    for (std::int64_t j = 0; j < hw; ++j) acc += x.data()[i * hw + j];
    out[i] = acc * inv;
  }
  return make_result<Real>({d.b, d.c}, std::move(out), {&x}, "global_avg_pool",
                           [hw, inv](Node<Real>& o) {
                             auto& g = o.parents[0]->ensure_grad();
                             for (std::size_t i = 0; i < o.grad.size(); ++i)
                               for (std::int64_t j = 0; j < hw; ++j) g[i * hw + j] += o.grad[i] * inv;
                           });
}

template <typename Real>
Tensor<Real> slice_channels(const Tensor<Real>& x, std::int64_t begin, std::int64_t end) {
  const auto d = dims4(x.shape(), "slice_channels", "input");
  if (begin < 0 || end > d.c || begin >= end) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for channels (axis 1) of " +
                     to_string(x.shape()));
  }
  const std::int64_t hw = d.h * d.w, n = end - begin;
  std::vector<std::int64_t> index(static_cast<std::size_t>(d.b * n * hw));
  std::size_t i = 0;
  for (std::int64_t b = 0; b < d.b; ++b)
    for (std::int64_t c = begin; c < end; ++c)
      for (std::int64_t j = 0; j < hw; ++j) index[i++] = (b * d.c + c) * hw + j;
  return gather(x, {d.b, n, d.h, d.w}, std::move(index), "slice_channels");
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (rdnet::numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  return make_result<Real>(std::move(shape), std::move(out), {&x}, "reshape", [](Node<Real>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename Real>
Tensor<Real> reflect_pad(const Tensor<Real>& x, std::int64_t bottom, std::int64_t right) {
  const auto d = dims4(x.shape(), "reflect_pad", "input");
  if (bottom < 0 || right < 0) throw ShapeError("reflect_pad: negative padding");
  const std::int64_t oh = d.h + bottom, ow = d.w + right;
  std::vector<std::int64_t> index(static_cast<std::size_t>(d.b * d.c * oh * ow));
  std::size_t i = 0;
  for (std::int64_t bc = 0; bc < d.b * d.c; ++bc)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx)
        index[i++] = (bc * d.h + reflect_index(y, d.h)) * d.w + reflect_index(xx, d.w);
  return gather(x, {d.b, d.c, oh, ow}, std::move(index), "reflect_pad");
}

template <typename Real>
Tensor<Real> crop(const Tensor<Real>& x, std::int64_t height, std::int64_t width) {
  const auto d = dims4(x.shape(), "crop", "input");
  if (height > d.h || width > d.w || height < 1 || width < 1) {
    throw ShapeError("crop: target " + std::to_string(height) + "x" + std::to_string(width) +
                     " exceeds " + to_string(x.shape()));
  }
  std::vector<std::int64_t> index(static_cast<std::size_t>(d.b * d.c * height * width));
  std::size_t i = 0;
  for (std::int64_t bc = 0; bc < d.b * d.c; ++bc)
    for (std::int64_t y = 0; y < height; ++y)
      for (std::int64_t xx = 0; xx < width; ++xx) index[i++] = (bc * d.h + y) * d.w + xx;
  return gather(x, {d.b, d.c, height, width}, std::move(index), "crop");
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> image_gradient(const Tensor<Real>& x) {
  const auto d = dims4(x.shape(), "image_gradient", "input");
  if (d.h < 2 || d.w < 2) {
    throw ShapeError("image_gradient: spatial axes (2, 3) must be >= 2, got " + to_string(x.shape()));
  }
  const auto in = x.data();
  std::vector<Real> gx(in.size(), Real(0)), gy(in.size(), Real(0));
  for (std::int64_t bc = 0; bc < d.b * d.c; ++bc)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t xx = 0; xx < d.w; ++xx) {
        const std::int64_t i = (bc * d.h + y) * d.w + xx;
        if (xx + 1 < d.w) gx[i] = in[i + 1] - in[i];
        if (y + 1 < d.h) gy[i] = in[i + d.w] - in[i];
      }
  auto tx = make_result<Real>(x.shape(), std::move(gx), {&x}, "grad_x", [d](Node<Real>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::int64_t bc = 0; bc < d.b * d.c; ++bc)
      for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t xx = 0; xx + 1 < d.w; ++xx) {
          const std::int64_t i = (bc * d.h + y) * d.w + xx;
          g[i + 1] += o.grad[i];
          g[i] -= o.grad[i];
        }
  });
  auto ty = make_result<Real>(x.shape(), std::move(gy), {&x}, "grad_y", [d](Node<Real>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::int64_t bc = 0; bc < d.b * d.c; ++bc)
      for (std::int64_t y = 0; y + 1 < d.h; ++y)
        for (std::int64_t xx = 0; xx < d.w; ++xx) {
          const std::int64_t i = (bc * d.h + y) * d.w + xx;
          g[i + d.w] += o.grad[i];
          g[i] -= o.grad[i];
        }
  });
  return {tx, ty};
}

template <typename Real>
Tensor<Real> concat_batch(const std::vector<Tensor<Real>>& items) {
  if (items.empty()) throw ShapeError("concat_batch: no tensors");
  Shape shape = items.front().shape();
  std::vector<Real> out;
  std::int64_t total = 0;
  for (const auto& t : items) {
    if (t.rank() != static_cast<int>(shape.size()) ||
        !std::equal(shape.begin() + 1, shape.end(), t.shape().begin() + 1)) {
      throw ShapeError("concat_batch: incompatible shapes " + to_string(shape) + " and " +
                       to_string(t.shape()));
    }
    total += t.dim(0);
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  shape[0] = total;
  return Tensor<Real>::from_data(std::move(shape), std::move(out));
}

template <typename Real>
double max_relative_error(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_relative_error: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double diff = 0, ref = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    ref = std::max(ref, std::abs(static_cast<double>(b[i])));
  }
  return diff / std::max(ref, 1e-30);
}

#define RDNET_INSTANTIATE_OPS(Real)                                                              \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                           \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                           \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                           \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                        \
  template Tensor<Real> add_scalar(const Tensor<Real>&, Real);                                   \
  template Tensor<Real> square(const Tensor<Real>&);                                             \
  template Tensor<Real> abs(const Tensor<Real>&);                                                \
  template Tensor<Real> sigmoid(const Tensor<Real>&);                                            \
  template Tensor<Real> swish(const Tensor<Real>&);                                              \
  template Tensor<Real> clamp(const Tensor<Real>&, Real, Real);                                  \
  template Tensor<Real> sum(const Tensor<Real>&);                                                \
  template Tensor<Real> mean(const Tensor<Real>&);                                               \
  template Tensor<Real> dot(const Tensor<Real>&, const Tensor<Real>&);                           \
  template Tensor<Real> scale_channels(const Tensor<Real>&, const Tensor<Real>&);                \
  template Tensor<Real> divide_channels(const Tensor<Real>&, const Tensor<Real>&);               \
  template Tensor<Real> conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,    \
                               int, int);                                                        \
  template Tensor<Real> pixel_shuffle(const Tensor<Real>&, int);                                 \
  template Tensor<Real> pixel_unshuffle(const Tensor<Real>&, int);                               \
  template Tensor<Real> resample(const Tensor<Real>&, Rational);                                 \
  template Tensor<Real> linear(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);   \
  template Tensor<Real> global_avg_pool(const Tensor<Real>&);                                    \
  template Tensor<Real> slice_channels(const Tensor<Real>&, std::int64_t, std::int64_t);         \
  template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                     \
  template Tensor<Real> reflect_pad(const Tensor<Real>&, std::int64_t, std::int64_t);            \
  template Tensor<Real> crop(const Tensor<Real>&, std::int64_t, std::int64_t);                   \
  template std::pair<Tensor<Real>, Tensor<Real>> image_gradient(const Tensor<Real>&);            \
  template Tensor<Real> concat_batch(const std::vector<Tensor<Real>>&);                          \
  template double max_relative_error(const Tensor<Real>&, const Tensor<Real>&);

RDNET_INSTANTIATE_OPS(float)
RDNET_INSTANTIATE_OPS(double)

}  // namespace rdnet
