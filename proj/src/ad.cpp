#include "dap/ad.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dap/error.hpp"

namespace dap::ad {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>>;
using ConstVecMap = Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) {
    throw Error("operands live on different tapes");
  }
}

// Accumulate `src` scaled by `scale` into the gradient of node `id`.
void accumulate(Tape& tape, std::size_t id, std::span<const real> src,
                real scale = real(1)) {
  Tensor& g = tape.grad_ref(id);
  VecMap(g.data().data(), static_cast<Eigen::Index>(g.size())) +=
      scale * ConstVecMap(src.data(), static_cast<Eigen::Index>(src.size()));
}

template <typename Fn>
Var unary(Var a, Tensor out, Fn&& grad_fn) {
  Var in[] = {a};
  const std::size_t aid = a.id();
  return a.tape().record(
      std::move(out), in,
      [aid, grad_fn = std::forward<Fn>(grad_fn)](Tape& t, std::size_t self,
                                                  const Tensor& g) {
        if (!t.requires_grad(aid)) return;
        const Tensor& x = t.value(aid);
        const Tensor& y = t.value(self);
        Tensor& dx = t.grad_ref(aid);
        for (std::size_t i = 0; i < g.size(); ++i) {
          dx[i] += grad_fn(x[i], y[i], g[i]);
        }
      });
}

struct ConvGeometry {
  std::size_t cin, h, w, k, stride, pad, hout, wout;

  bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
  std::size_t col_rows() const { return cin * k * k; }
  std::size_t col_cols() const { return hout * wout; }
};

void im2col(const real* x, const ConvGeometry& g, real* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        real* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          real* dst = row + oy * g.wout;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wout, real(0));
            continue;
          }
          const real* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          if (g.stride == 1) {
            // Valid output columns form one contiguous run.
            const long shift = static_cast<long>(kx) - static_cast<long>(g.pad);
            const long lo = std::max(0L, -shift);
            const long hi = std::min(static_cast<long>(g.wout), static_cast<long>(g.w) - shift);
            std::fill(dst, dst + lo, real(0));
            if (hi > lo) std::copy(src + lo + shift, src + hi + shift, dst + lo);
            std::fill(dst + std::max(lo, hi), dst + g.wout, real(0));
            continue;
          }
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? real(0)
                                                               : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const real* col, const ConvGeometry& g, real* x) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const real* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          real* dst = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const real* src = row + oy * g.wout;
          if (g.stride == 1) {
            const long shift = static_cast<long>(kx) - static_cast<long>(g.pad);
            const long lo = std::max(0L, -shift);
            const long hi = std::min(static_cast<long>(g.wout), static_cast<long>(g.w) - shift);
            for (long ox = lo; ox < hi; ++ox) dst[ox + shift] += src[ox];
            continue;
          }
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs,
                 BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw Error("operand recorded on another tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs,
                        needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw Error("backward: loss is on another tape");
  const Tensor& lv = nodes_.at(loss.id()).value;
  if (lv.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " +
                         to_string(lv.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor{};
  grad_ref(loss.id())[0] = real(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, i, n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.size() == 0) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

// ---------------------------------------------------------------------------
// Convolution

Var conv2d(Var input, Var kernel, Var bias, std::size_t stride,
           Padding padding) {
  require_same_tape(input, kernel);
  require_same_tape(input, bias);
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  require_rank4(x, "conv2d input");
  require_rank4(w, "conv2d kernel");
  if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0) {
    throw DimensionError("conv2d: kernel must be square with odd size, got " +
                         to_string(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) +
                         " channels, kernel expects " + std::to_string(w.dim(1)));
  }
  if (bias.value().shape() != Shape{w.dim(0)}) {
    throw DimensionError("conv2d: bias shape " + to_string(bias.shape()) +
                         " does not match " + std::to_string(w.dim(0)) +
                         " output channels");
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (padding == Padding::Same && stride > 2) {
    throw DimensionError("conv2d: same padding supports stride 1 or 2");
  }

  ConvGeometry geo{};
  geo.cin = x.dim(1);
  geo.h = x.dim(2);
  geo.w = x.dim(3);
  geo.k = w.dim(2);
  geo.stride = stride;
  geo.pad = padding == Padding::Same ? geo.k / 2 : 0;
  if (geo.h + 2 * geo.pad < geo.k || geo.w + 2 * geo.pad < geo.k) {
    throw DimensionError("conv2d: input smaller than kernel");
  }
  geo.hout = (geo.h + 2 * geo.pad - geo.k) / stride + 1;
  geo.wout = (geo.w + 2 * geo.pad - geo.k) / stride + 1;

  const std::size_t batch = x.dim(0);
  const std::size_t cout = w.dim(0);
  const auto K = static_cast<Eigen::Index>(geo.col_rows());
  const auto P = static_cast<Eigen::Index>(geo.col_cols());
  const auto Co = static_cast<Eigen::Index>(cout);
  const std::size_t in_stride = geo.cin * geo.h * geo.w;
  const std::size_t out_stride = cout * geo.col_cols();

  Tensor out(Shape{batch, cout, geo.hout, geo.wout});
  std::vector<real> col(geo.is_pointwise() ? 0 : geo.col_rows() * geo.col_cols());
  ConstMatMap W(w.data().data(), Co, K);
  ConstVecMap bvec(bias.value().data().data(), Co);
  for (std::size_t b = 0; b < batch; ++b) {
    const real* xb = x.data().data() + b * in_stride;
    if (!geo.is_pointwise()) im2col(xb, geo, col.data());
    ConstMatMap C(geo.is_pointwise() ? xb : col.data(), K, P);
    MatMap O(out.data().data() + b * out_stride, Co, P);
    O.noalias() = W * C;
    O.colwise() += bvec;
  }

  Var ins[] = {input, kernel, bias};
  const std::size_t xid = input.id(), wid = kernel.id(), bid = bias.id();
  return input.tape().record(
      std::move(out), ins,
      [=](Tape& t, std::size_t, const Tensor& g) {
        const bool gx = t.requires_grad(xid);
        const bool gw = t.requires_grad(wid);
        const bool gb = t.requires_grad(bid);
        const Tensor& xv = t.value(xid);
        const Tensor& wv = t.value(wid);
        ConstMatMap Wm(wv.data().data(), Co, K);
        std::vector<real> colbuf(geo.is_pointwise() ? 0 : geo.col_rows() * geo.col_cols());
        std::vector<real> dcol(gx && !geo.is_pointwise() ? colbuf.size() : 0);
        for (std::size_t b = 0; b < batch; ++b) {
          ConstMatMap G(g.data().data() + b * out_stride, Co, P);
          if (gb) {
            // Plain loop: Eigen's vectorised row sums peel by address
            // alignment, which makes the result depend on the allocation.
            Tensor& db = t.grad_ref(bid);
            const real* gp = g.data().data() + b * out_stride;
            for (Eigen::Index o = 0; o < Co; ++o) {
              real acc = 0;
              for (Eigen::Index i = 0; i < P; ++i) acc += gp[o * P + i];
              db[o] += acc;
            }
          }
          if (gw) {
            const real* xb = xv.data().data() + b * in_stride;
            if (!geo.is_pointwise()) im2col(xb, geo, colbuf.data());
            ConstMatMap C(geo.is_pointwise() ? xb : colbuf.data(), K, P);
            Tensor& dw = t.grad_ref(wid);
            MatMap(dw.data().data(), Co, K).noalias() += G * C.transpose();
          }
          if (gx) {
            Tensor& dx = t.grad_ref(xid);
            real* dxb = dx.data().data() + b * in_stride;
            if (geo.is_pointwise()) {
              MatMap(dxb, K, P).noalias() += Wm.transpose() * G;
            } else {
              MatMap D(dcol.data(), K, P);
              D.noalias() = Wm.transpose() * G;
              col2im_add(dcol.data(), geo, dxb);
            }
          }
        }
      });
}

Var resample(Var input, Resample mode) {
  const Tensor& x = input.value();
  require_rank4(x, "resample");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t xid = input.id();
  Var ins[] = {input};

  if (mode == Resample::Down2) {
    if (h % 2 || w % 2) {
      throw DimensionError("resample down2 needs even spatial dims, got " +
                           to_string(x.shape()));
    }
    const std::size_t ho = h / 2, wo = w / 2;
    Tensor out(Shape{x.dim(0), x.dim(1), ho, wo});
    for (std::size_t p = 0; p < planes; ++p) {
      const real* src = x.data().data() + p * h * w;
      real* dst = out.data().data() + p * ho * wo;
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const real* s = src + 2 * y * w + 2 * xx;
          dst[y * wo + xx] = real(0.25) * (s[0] + s[1] + s[w] + s[w + 1]);
        }
      }
    }
    return input.tape().record(
        std::move(out), ins, [=](Tape& t, std::size_t, const Tensor& g) {
          Tensor& dx = t.grad_ref(xid);
          for (std::size_t p = 0; p < planes; ++p) {
            const real* gs = g.data().data() + p * ho * wo;
            real* d = dx.data().data() + p * h * w;
            for (std::size_t y = 0; y < ho; ++y) {
              for (std::size_t xx = 0; xx < wo; ++xx) {
                const real v = real(0.25) * gs[y * wo + xx];
                real* q = d + 2 * y * w + 2 * xx;
                q[0] += v;
                q[1] += v;
                q[w] += v;
                q[w + 1] += v;
              }
            }
          }
        });
  }

  const std::size_t ho = h * 2, wo = w * 2;
  Tensor out(Shape{x.dim(0), x.dim(1), ho, wo});
  for (std::size_t p = 0; p < planes; ++p) {
    const real* src = x.data().data() + p * h * w;
    real* dst = out.data().data() + p * ho * wo;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t xx = 0; xx < wo; ++xx) {
        dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
      }
    }
  }
  return input.tape().record(
      std::move(out), ins, [=](Tape& t, std::size_t, const Tensor& g) {
        Tensor& dx = t.grad_ref(xid);
        for (std::size_t p = 0; p < planes; ++p) {
          const real* gs = g.data().data() + p * ho * wo;
          real* d = dx.data().data() + p * h * w;
          for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t xx = 0; xx < wo; ++xx) {
              d[(y / 2) * w + xx / 2] += gs[y * wo + xx];
            }
          }
        }
      });
}

Var spatial_softmax(Var logits) {
  const Tensor& x = logits.value();
  require_rank4(x, "spatial_softmax");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t n = x.dim(2) * x.dim(3);
  Tensor out(x.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const real* src = x.data().data() + p * n;
    real* dst = out.data().data() + p * n;
    // max_element skips NaN, so check every logit
    if (!std::all_of(src, src + n, [](real v) { return std::isfinite(v); })) {
      throw NumericError("spatial_softmax: non-finite logits");
    }
    const real mx = *std::max_element(src, src + n);
    real total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = std::exp(src[i] - mx);
      total += dst[i];
    }
    for (std::size_t i = 0; i < n; ++i) dst[i] /= total;
  }
  Var ins[] = {logits};
  const std::size_t xid = logits.id();
  return logits.tape().record(
      std::move(out), ins, [=](Tape& t, std::size_t self, const Tensor& g) {
        const Tensor& y = t.value(self);
        Tensor& dx = t.grad_ref(xid);
        for (std::size_t p = 0; p < planes; ++p) {
          const std::size_t off = p * n;
          real dot = 0;
          for (std::size_t i = 0; i < n; ++i) dot += g[off + i] * y[off + i];
          for (std::size_t i = 0; i < n; ++i) {
            dx[off + i] += y[off + i] * (g[off + i] - dot);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  VecMap(out.data().data(), static_cast<Eigen::Index>(out.size())) +=
      ConstVecMap(b.value().data().data(), static_cast<Eigen::Index>(out.size()));
  Var ins[] = {a, b};
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), ins,
                         [=](Tape& t, std::size_t, const Tensor& g) {
                           if (t.requires_grad(aid)) accumulate(t, aid, g.data());
                           if (t.requires_grad(bid)) accumulate(t, bid, g.data());
                         });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  VecMap(out.data().data(), static_cast<Eigen::Index>(out.size())) -=
      ConstVecMap(b.value().data().data(), static_cast<Eigen::Index>(out.size()));
  Var ins[] = {a, b};
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(
      std::move(out), ins, [=](Tape& t, std::size_t, const Tensor& g) {
        if (t.requires_grad(aid)) accumulate(t, aid, g.data());
        if (t.requires_grad(bid)) accumulate(t, bid, g.data(), real(-1));
      });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Var ins[] = {a, b};
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(
      std::move(out), ins, [=](Tape& t, std::size_t, const Tensor& g) {
        const Tensor& x = t.value(aid);
        const Tensor& y = t.value(bid);
        if (t.requires_grad(aid)) {
          Tensor& d = t.grad_ref(aid);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
        }
        if (t.requires_grad(bid)) {
          Tensor& d = t.grad_ref(bid);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
        }
      });
}

Var scalar_mul(Var a, real s) {
  Tensor out = a.value();
  for (real& v : out.data()) v *= s;
  return unary(a, std::move(out),
               [s](real, real, real g) { return g * s; });
}

Var add_scalar(Var a, real s) {
  Tensor out = a.value();
  for (real& v : out.data()) v += s;
  return unary(a, std::move(out), [](real, real, real g) { return g; });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (real& v : out.data()) v = v > 0 ? v : real(0);
  return unary(a, std::move(out),
               [](real x, real, real g) { return x > 0 ? g : real(0); });
}

Var log(Var a) {
  Tensor out = a.value();
  for (real& v : out.data()) v = std::log(v);
  return unary(a, std::move(out), [](real x, real, real g) { return g / x; });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (real& v : out.data()) v = std::exp(v);
  return unary(a, std::move(out), [](real, real y, real g) { return g * y; });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum_all(Var a) {
  const Tensor& x = a.value();
  real total = 0;
  for (real v : x.data()) total += v;
  Var ins[] = {a};
  const std::size_t aid = a.id();
  return a.tape().record(Tensor::scalar(total), ins,
                         [=](Tape& t, std::size_t, const Tensor& g) {
                           Tensor& d = t.grad_ref(aid);
                           for (real& v : d.data()) v += g[0];
                         });
}

Var mean_all(Var a) {
  const real n = static_cast<real>(a.value().size());
  return scalar_mul(sum_all(a), real(1) / n);
}

Var sum_spatial(Var a) {
  const Tensor& x = a.value();
  require_rank4(x, "sum_spatial");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t n = x.dim(2) * x.dim(3);
  Tensor out(Shape{x.dim(0), x.dim(1), 1, 1});
  for (std::size_t p = 0; p < planes; ++p) {
    real total = 0;
    for (std::size_t i = 0; i < n; ++i) total += x[p * n + i];
    out[p] = total;
  }
  Var ins[] = {a};
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), ins,
                         [=](Tape& t, std::size_t, const Tensor& g) {
                           Tensor& d = t.grad_ref(aid);
                           for (std::size_t p = 0; p < planes; ++p) {
                             for (std::size_t i = 0; i < n; ++i) d[p * n + i] += g[p];
                           }
                         });
}

Var mean_spatial(Var a) {
  require_rank4(a.value(), "mean_spatial");
  const real n = static_cast<real>(a.value().dim(2) * a.value().dim(3));
  return scalar_mul(sum_spatial(a), real(1) / n);
}

// ---------------------------------------------------------------------------
// Shape ops

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  Var ins[] = {a};
  const std::size_t aid = a.id();
  return a.tape().record(std::move(out), ins,
                         [=](Tape& t, std::size_t, const Tensor& g) {
                           accumulate(t, aid, g.data());
                         });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no operands");
  const Tensor& first = parts.front().value();
  require_rank4(first, "concat_channels");
  const std::size_t batch = first.dim(0), h = first.dim(2), w = first.dim(3);
  const std::size_t plane = h * w;
  std::size_t channels = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    const Tensor& v = p.value();
    require_rank4(v, "concat_channels");
    if (v.dim(0) != batch || v.dim(2) != h || v.dim(3) != w) {
      throw DimensionError("concat_channels: operand " + to_string(v.shape()) +
                           " incompatible with " + to_string(first.shape()));
    }
    ids.push_back(p.id());
    widths.push_back(v.dim(1));
    channels += v.dim(1);
  }
  Tensor out(Shape{batch, channels, h, w});
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const real* src = parts[k].value().data().data() + b * widths[k] * plane;
      std::copy(src, src + widths[k] * plane,
                out.data().data() + (b * channels + c0) * plane);
      c0 += widths[k];
    }
  }
  return parts.front().tape().record(
      std::move(out), parts, [=](Tape& t, std::size_t, const Tensor& g) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            Tensor& d = t.grad_ref(ids[k]);
            for (std::size_t b = 0; b < batch; ++b) {
              const real* src = g.data().data() + (b * channels + c0) * plane;
              real* dst = d.data().data() + b * widths[k] * plane;
              for (std::size_t i = 0; i < widths[k] * plane; ++i) dst[i] += src[i];
            }
          }
          c0 += widths[k];
        }
      });
}

Var slice_channels(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  require_rank4(x, "slice_channels");
  if (count == 0 || begin + count > x.dim(1)) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) +
                         ", " + std::to_string(begin + count) + ") outside " +
                         to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor out(Shape{batch, count, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    const real* src = x.data().data() + (b * channels + begin) * plane;
    std::copy(src, src + count * plane, out.data().data() + b * count * plane);
  }
  Var ins[] = {a};
  const std::size_t aid = a.id();
  return a.tape().record(
      std::move(out), ins, [=](Tape& t, std::size_t, const Tensor& g) {
        Tensor& d = t.grad_ref(aid);
        for (std::size_t b = 0; b < batch; ++b) {
          real* dst = d.data().data() + (b * channels + begin) * plane;
          const real* src = g.data().data() + b * count * plane;
          for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
        }
      });
}

Var broadcast_channels(Var a, std::size_t n) {
  const Tensor& x = a.value();
  require_rank4(x, "broadcast_channels");
  if (x.dim(1) != 1) {
    throw DimensionError("broadcast_channels: expected one channel, got " +
                         to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor out(Shape{batch, n, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < n; ++c) {
      std::copy_n(x.data().data() + b * plane, plane,
                  out.data().data() + (b * n + c) * plane);
    }
  }
  Var ins[] = {a};
  const std::size_t aid = a.id();
  return a.tape().record(
      std::move(out), ins, [=](Tape& t, std::size_t, const Tensor& g) {
        Tensor& d = t.grad_ref(aid);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < n; ++c) {
            const real* src = g.data().data() + (b * n + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) d[b * plane + i] += src[i];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Matrix products

namespace {

struct ProductDims {
  std::size_t batch, m, k, n;
  std::size_t a_rows, a_cols, b_rows, b_cols;
};

Var batched_product(Var a, Var b, bool ta, bool tb, std::size_t batch,
                    Shape out_shape, ProductDims d) {
  const auto ar = static_cast<Eigen::Index>(d.a_rows);
  const auto ac = static_cast<Eigen::Index>(d.a_cols);
  const auto br = static_cast<Eigen::Index>(d.b_rows);
  const auto bc = static_cast<Eigen::Index>(d.b_cols);
  const auto M = static_cast<Eigen::Index>(d.m);
  const auto N = static_cast<Eigen::Index>(d.n);
  const std::size_t a_step = d.a_rows * d.a_cols;
  const std::size_t b_step = d.b_rows * d.b_cols;
  const std::size_t c_step = d.m * d.n;

  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatMap A(a.value().data().data() + i * a_step, ar, ac);
    ConstMatMap B(b.value().data().data() + i * b_step, br, bc);
    MatMap C(out.data().data() + i * c_step, M, N);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }

  Var ins[] = {a, b};
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(
      std::move(out), ins, [=](Tape& t, std::size_t, const Tensor& g) {
        const bool ga = t.requires_grad(aid), gb = t.requires_grad(bid);
        for (std::size_t i = 0; i < batch; ++i) {
          ConstMatMap A(t.value(aid).data().data() + i * a_step, ar, ac);
          ConstMatMap B(t.value(bid).data().data() + i * b_step, br, bc);
          ConstMatMap G(g.data().data() + i * c_step, M, N);
          if (ga) {
            MatMap dA(t.grad_ref(aid).data().data() + i * a_step, ar, ac);
            // C = op(A) op(B): d op(A) = G op(B)^T
            if (!ta && !tb) dA.noalias() += G * B.transpose();
            else if (!ta && tb) dA.noalias() += G * B;
            else if (ta && !tb) dA.noalias() += B * G.transpose();
            else dA.noalias() += B.transpose() * G.transpose();
          }
          if (gb) {
            MatMap dB(t.grad_ref(bid).data().data() + i * b_step, br, bc);
            // d op(B) = op(A)^T G
            if (!ta && !tb) dB.noalias() += A.transpose() * G;
            else if (ta && !tb) dB.noalias() += A * G;
            else if (!ta && tb) dB.noalias() += G.transpose() * A;
            else dB.noalias() += G.transpose() * A.transpose();
          }
        }
      });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(av.shape()) +
                         " x " + to_string(bv.shape()));
  }
  ProductDims d{1, av.dim(0), av.dim(1), bv.dim(1),
                av.dim(0), av.dim(1), bv.dim(0), bv.dim(1)};
  return batched_product(a, b, false, false, 1, Shape{d.m, d.n}, d);
}

Var bmm(Var a, Var b, bool transpose_a, bool transpose_b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0)) {
    throw DimensionError("bmm: expected rank-3 operands with equal batch, got " +
                         to_string(av.shape()) + " and " + to_string(bv.shape()));
  }
  const std::size_t m = transpose_a ? av.dim(2) : av.dim(1);
  const std::size_t ka = transpose_a ? av.dim(1) : av.dim(2);
  const std::size_t kb = transpose_b ? bv.dim(2) : bv.dim(1);
  const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
  if (ka != kb) {
    throw DimensionError("bmm: inner dimensions differ (" + std::to_string(ka) +
                         " vs " + std::to_string(kb) + ")");
  }
  ProductDims d{av.dim(0), m, ka, n, av.dim(1), av.dim(2), bv.dim(1), bv.dim(2)};
  return batched_product(a, b, transpose_a, transpose_b, av.dim(0),
                         Shape{av.dim(0), m, n}, d);
}

}  // namespace dap::ad
