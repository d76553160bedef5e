#pragma once

// Dense network primitives on top of the tensor graph: GEMM-backed matmul
// and conv2d, softmax, layer norm, bilinear sampling, multi-head attention.

#include <Eigen/Core>

#include "monorig/tensor.hpp"

namespace monorig::diff {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;
template <typename T>
using MapCM = Eigen::Map<const RowMat<T>>;

}  // namespace detail

// matmul: [m,k] x [k,n] -> [m,n], or batched [B,m,k] x [B,k,n] -> [B,m,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require((a.ndim() == 2 && b.ndim() == 2) || (a.ndim() == 3 && b.ndim() == 3),
          "matmul: want 2-D x 2-D or 3-D x 3-D, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const bool batched = a.ndim() == 3;
  const int bs = batched ? a.dim(0) : 1;
  const int m = a.dim(batched ? 1 : 0), k = a.dim(batched ? 2 : 1);
  const int k2 = b.dim(batched ? 1 : 0), nn = b.dim(batched ? 2 : 1);
  require(k == k2 && (!batched || b.dim(0) == bs), "matmul: inner extents differ");
  Shape out = batched ? Shape{bs, m, nn} : Shape{m, nn};
  auto n = detail::make_node<T>(out, {a.node(), b.node()}, "matmul");
  const int64_t sa = static_cast<int64_t>(m) * k, sb = static_cast<int64_t>(k) * nn,
                so = static_cast<int64_t>(m) * nn;
  for (int i = 0; i < bs; ++i) {
    detail::MapCM<T> ma(a.data() + i * sa, m, k);
    detail::MapCM<T> mb(b.data() + i * sb, k, nn);
    detail::MapM<T> mo(n->data.data() + i * so, m, nn);
    mo.noalias() = ma * mb;
  }
  if (n->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    n->backward_fn = [an, bn, bs, m, k, nn, sa, sb, so](Node<T>& self) {
      for (int i = 0; i < bs; ++i) {
        detail::MapCM<T> g(self.grad.data() + i * so, m, nn);
        detail::MapCM<T> ma(an->data.data() + i * sa, m, k);
        detail::MapCM<T> mb(bn->data.data() + i * sb, k, nn);
        if (an->requires_grad) {
          detail::MapM<T> ga(an->grad.data() + i * sa, m, k);
          ga.noalias() += g * mb.transpose();
        }
        if (bn->requires_grad) {
          detail::MapM<T> gb(bn->grad.data() + i * sb, k, nn);
          gb.noalias() += ma.transpose() * g;
        }
      }
    };
  }
  return Tensor<T>(n);
}

namespace detail {

// im2col for HWC input, (ky, kx, ci) fastest-last ordering to match a
// [kh,kw,Cin,Cout] weight flattened to [kh*kw*Cin, Cout].
template <typename T>
void im2col(const T* x, int h, int w, int ci, int kh, int kw, int stride, int pad, int oh, int ow,
            T* col) {
  const int kcols = kh * kw * ci;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* row = col + (static_cast<int64_t>(oy) * ow + ox) * kcols;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) {
          std::fill(row + ky * kw * ci, row + (ky + 1) * kw * ci, T(0));
          continue;
        }
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          T* dst = row + (ky * kw + kx) * ci;
          if (ix < 0 || ix >= w) {
            std::fill(dst, dst + ci, T(0));
          } else {
            const T* src = x + (static_cast<int64_t>(iy) * w + ix) * ci;
            std::copy(src, src + ci, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int h, int w, int ci, int kh, int kw, int stride, int pad, int oh, int ow,
            T* gx) {
  const int kcols = kh * kw * ci;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const T* row = col + (static_cast<int64_t>(oy) * ow + ox) * kcols;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) continue;
          const T* src = row + (ky * kw + kx) * ci;
          T* dst = gx + (static_cast<int64_t>(iy) * w + ix) * ci;
          for (int c = 0; c < ci; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace detail

// conv2d, cross-correlation convention, zero padding.
// x: [H,W,Cin], w: [kh,kw,Cin,Cout], b: [Cout]. Output [Ho,Wo,Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int pad = 0) {
  require(x.ndim() == 3 && w.ndim() == 4, "conv2d: want x [H,W,Cin], w [kh,kw,Cin,Cout]");
  const int h = x.dim(0), ww = x.dim(1), ci = x.dim(2);
  const int kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  require(w.dim(2) == ci, "conv2d: channel mismatch");
  require(b.ndim() == 1 && b.dim(0) == co, "conv2d: bias shape mismatch");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  require(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input");
  const int kcols = kh * kw * ci;
  const int64_t pixels = static_cast<int64_t>(oh) * ow;

  auto n = detail::make_node<T>({oh, ow, co}, {x.node(), w.node(), b.node()}, "conv2d");
  std::vector<T> col(static_cast<size_t>(pixels * kcols));
  detail::im2col(x.data(), h, ww, ci, kh, kw, stride, pad, oh, ow, col.data());
  {
    detail::MapCM<T> mc(col.data(), pixels, kcols);
    detail::MapCM<T> mw(w.data(), kcols, co);
    detail::MapM<T> mo(n->data.data(), pixels, co);
    mo.noalias() = mc * mw;
    mo.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), co);
  }
  if (n->requires_grad) {
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    n->backward_fn = [xn, wn, bn, h, ww, ci, kh, kw, co, stride, pad, oh, ow, kcols,
                      pixels](Node<T>& self) {
      detail::MapCM<T> g(self.grad.data(), pixels, co);
      if (wn->requires_grad || xn->requires_grad) {
        std::vector<T> col2(static_cast<size_t>(pixels * kcols));
        detail::im2col(xn->data.data(), h, ww, ci, kh, kw, stride, pad, oh, ow, col2.data());
        if (wn->requires_grad) {
          detail::MapCM<T> mc(col2.data(), pixels, kcols);
          detail::MapM<T> gw(wn->grad.data(), kcols, co);
          gw.noalias() += mc.transpose() * g;
        }
        if (xn->requires_grad) {
          std::vector<T> gcol(static_cast<size_t>(pixels * kcols));
          detail::MapCM<T> mw(wn->data.data(), kcols, co);
          detail::MapM<T> mgc(gcol.data(), pixels, kcols);
          mgc.noalias() = g * mw.transpose();
          detail::col2im(gcol.data(), h, ww, ci, kh, kw, stride, pad, oh, ow, xn->grad.data());
        }
      }
      if (bn->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bn->grad.data(), co);
        gb += g.colwise().sum();
      }
    };
  }
  return Tensor<T>(n);
}

// Numerically stable softmax over the last axis. Rows sum to 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  require(a.ndim() >= 1, "softmax: rank >= 1 required");
  const int nlast = a.dim(a.ndim() - 1);
  const int64_t rows = a.numel() / nlast;
  auto n = detail::make_node<T>(a.shape(), {a.node()}, "softmax");
  const T* pa = a.data();
  T* po = n->data.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = pa + r * nlast;
    T* out = po + r * nlast;
    T mx = row[0];
    for (int i = 1; i < nlast; ++i) mx = std::max(mx, row[i]);
    T denom = 0;
    for (int i = 0; i < nlast; ++i) {
      out[i] = std::exp(row[i] - mx);
      denom += out[i];
    }
    const T inv = T(1) / denom;
    for (int i = 0; i < nlast; ++i) out[i] *= inv;
  }
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, rows, nlast](Node<T>& self) {
      const T* y = self.data.data();
      const T* g = self.grad.data();
      T* ga = an->grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y + r * nlast;
        const T* gr = g + r * nlast;
        T dot = 0;
        for (int i = 0; i < nlast; ++i) dot += gr[i] * yr[i];
        T* gar = ga + r * nlast;
        for (int i = 0; i < nlast; ++i) gar[i] += (gr[i] - dot) * yr[i];
      }
    };
  }
  return Tensor<T>(n);
}

// Layer normalization over the last axis with affine gain/bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  const int nlast = a.dim(a.ndim() - 1);
  require(gain.ndim() == 1 && gain.dim(0) == nlast && bias.ndim() == 1 && bias.dim(0) == nlast,
          "layer_norm: affine params must match last axis");
  const int64_t rows = a.numel() / nlast;
  auto n = detail::make_node<T>(a.shape(), {a.node(), gain.node(), bias.node()}, "layer_norm");
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(a.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* pa = a.data();
  const T* pg = gain.data();
  const T* pb = bias.data();
  T* po = n->data.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = pa + r * nlast;
    T mu = 0;
    for (int i = 0; i < nlast; ++i) mu += row[i];
    mu /= static_cast<T>(nlast);
    T var = 0;
    for (int i = 0; i < nlast; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(nlast);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    T* xh = xhat->data() + r * nlast;
    T* out = po + r * nlast;
    for (int i = 0; i < nlast; ++i) {
      xh[i] = (row[i] - mu) * is;
      out[i] = xh[i] * pg[i] + pb[i];
    }
  }
  if (n->requires_grad) {
    auto an = a.node();
    auto gn = gain.node();
    auto bn = bias.node();
    n->backward_fn = [an, gn, bn, xhat, inv_std, rows, nlast](Node<T>& self) {
      const T* g = self.grad.data();
      const T* pg2 = gn->data.data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* gr = g + r * nlast;
        const T* xh = xhat->data() + r * nlast;
        const T is = (*inv_std)[static_cast<size_t>(r)];
        if (an->requires_grad) {
          // dx = is * (dxh - mean(dxh) - xh * mean(dxh*xh))
          T m1 = 0, m2 = 0;
          for (int i = 0; i < nlast; ++i) {
            const T dxh = gr[i] * pg2[i];
            m1 += dxh;
            m2 += dxh * xh[i];
          }
          m1 /= static_cast<T>(nlast);
          m2 /= static_cast<T>(nlast);
          T* ga = an->grad.data() + r * nlast;
          for (int i = 0; i < nlast; ++i) ga[i] += is * (gr[i] * pg2[i] - m1 - xh[i] * m2);
        }
        if (gn->requires_grad) {
          T* gg = gn->grad.data();
          for (int i = 0; i < nlast; ++i) gg[i] += gr[i] * xh[i];
        }
        if (bn->requires_grad) {
          T* gb = bn->grad.data();
          for (int i = 0; i < nlast; ++i) gb[i] += gr[i];
        }
      }
    };
  }
  return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// bilinear sampling

template <typename T>
struct SampleResult {
  Tensor<T> values;            // [..., C]
  std::vector<uint8_t> valid;  // one flag per sample point
};

// Samples grid [H,W,C] at continuous (x,y) pixel coords [...,2]. Points
// outside [0,W-1]x[0,H-1] return 0 with valid=false and propagate no
// gradient. Gradients flow to both grid values and coords.
template <typename T>
SampleResult<T> bilinear_sample(const Tensor<T>& grid, const Tensor<T>& coords) {
  require(grid.ndim() == 3, "bilinear_sample: grid must be [H,W,C]");
  require(coords.ndim() >= 1 && coords.dim(coords.ndim() - 1) == 2,
          "bilinear_sample: coords must end in extent 2");
  const int h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
  require(h >= 2 && w >= 2, "bilinear_sample: grid extents must be >= 2");
  const int64_t p = coords.numel() / 2;
  Shape out_shape(coords.shape().begin(), coords.shape().end() - 1);
  out_shape.push_back(c);
  auto n = detail::make_node<T>(out_shape, {grid.node(), coords.node()}, "bilinear_sample");
  std::vector<uint8_t> valid(static_cast<size_t>(p), 0);
  const T* pg = grid.data();
  const T* pc = coords.data();
  T* po = n->data.data();
  for (int64_t i = 0; i < p; ++i) {
    const T x = pc[2 * i], y = pc[2 * i + 1];
    require(std::isfinite(static_cast<double>(x)) && std::isfinite(static_cast<double>(y)),
            "bilinear_sample: non-finite coordinate");
    T* out = po + i * c;
    if (x < T(0) || x > static_cast<T>(w - 1) || y < T(0) || y > static_cast<T>(h - 1)) {
      std::fill(out, out + c, T(0));
      continue;
    }
    valid[static_cast<size_t>(i)] = 1;
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    if (x0 > w - 2) x0 = w - 2;
    if (y0 > h - 2) y0 = h - 2;
    const T fx = x - static_cast<T>(x0), fy = y - static_cast<T>(y0);
    const T* g00 = pg + (static_cast<int64_t>(y0) * w + x0) * c;
    const T* g01 = g00 + c;
    const T* g10 = g00 + static_cast<int64_t>(w) * c;
    const T* g11 = g10 + c;
    for (int k = 0; k < c; ++k)
      out[k] = (T(1) - fy) * ((T(1) - fx) * g00[k] + fx * g01[k]) +
               fy * ((T(1) - fx) * g10[k] + fx * g11[k]);
  }
  if (n->requires_grad) {
    auto gn = grid.node();
    auto cn = coords.node();
    auto vcopy = valid;
    n->backward_fn = [gn, cn, vcopy, h, w, c, p](Node<T>& self) {
      const T* g = self.grad.data();
      const T* pg2 = gn->data.data();
      const T* pc2 = cn->data.data();
      for (int64_t i = 0; i < p; ++i) {
        if (!vcopy[static_cast<size_t>(i)]) continue;
        const T x = pc2[2 * i], y = pc2[2 * i + 1];
        int x0 = static_cast<int>(std::floor(x));
        int y0 = static_cast<int>(std::floor(y));
        if (x0 > w - 2) x0 = w - 2;
        if (y0 > h - 2) y0 = h - 2;
        const T fx = x - static_cast<T>(x0), fy = y - static_cast<T>(y0);
        const int64_t i00 = (static_cast<int64_t>(y0) * w + x0) * c;
        const T* gr = g + i * c;
        if (gn->requires_grad) {
          T* gg = gn->grad.data();
          for (int k = 0; k < c; ++k) {
            const T gv = gr[k];
            gg[i00 + k] += gv * (T(1) - fy) * (T(1) - fx);
            gg[i00 + c + k] += gv * (T(1) - fy) * fx;
            gg[i00 + static_cast<int64_t>(w) * c + k] += gv * fy * (T(1) - fx);
            gg[i00 + static_cast<int64_t>(w) * c + c + k] += gv * fy * fx;
          }
        }
        if (cn->requires_grad) {
          T dx = 0, dy = 0;
          const T* g00 = pg2 + i00;
          const T* g01 = g00 + c;
          const T* g10 = g00 + static_cast<int64_t>(w) * c;
          const T* g11 = g10 + c;
          for (int k = 0; k < c; ++k) {
            dx += gr[k] * ((T(1) - fy) * (g01[k] - g00[k]) + fy * (g11[k] - g10[k]));
            dy += gr[k] * ((T(1) - fx) * (g10[k] - g00[k]) + fx * (g11[k] - g01[k]));
          }
          cn->grad[static_cast<size_t>(2 * i)] += dx;
          cn->grad[static_cast<size_t>(2 * i + 1)] += dy;
        }
      }
    };
  }
  return {Tensor<T>(n), std::move(valid)};
}

// ---------------------------------------------------------------------------
// 3x3 uniform box filter with reflection padding, on [H,W,C]

namespace detail {

inline int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace detail

template <typename T>
Tensor<T> box_filter3_reflect(const Tensor<T>& a) {
  require(a.ndim() == 3 && a.dim(0) >= 2 && a.dim(1) >= 2, "box_filter3_reflect: want [H>=2,W>=2,C]");
  const int h = a.dim(0), w = a.dim(1), c = a.dim(2);
  auto n = detail::make_node<T>(a.shape(), {a.node()}, "box_filter3_reflect");
  const T* pa = a.data();
  T* po = n->data.data();
  const T k = T(1) / T(9);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      T* out = po + (static_cast<int64_t>(y) * w + x) * c;
      std::fill(out, out + c, T(0));
      for (int dy = -1; dy <= 1; ++dy) {
        const int sy = detail::reflect_index(y + dy, h);
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = detail::reflect_index(x + dx, w);
          const T* src = pa + (static_cast<int64_t>(sy) * w + sx) * c;
          for (int ch = 0; ch < c; ++ch) out[ch] += src[ch];
        }
      }
      for (int ch = 0; ch < c; ++ch) out[ch] *= k;
    }
  }
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, h, w, c, k](Node<T>& self) {
      const T* g = self.grad.data();
      T* ga = an->grad.data();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const T* gr = g + (static_cast<int64_t>(y) * w + x) * c;
          for (int dy = -1; dy <= 1; ++dy) {
            const int sy = detail::reflect_index(y + dy, h);
            for (int dx = -1; dx <= 1; ++dx) {
              const int sx = detail::reflect_index(x + dx, w);
              T* dst = ga + (static_cast<int64_t>(sy) * w + sx) * c;
              for (int ch = 0; ch < c; ++ch) dst[ch] += k * gr[ch];
            }
          }
        }
      }
    };
  }
  return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// attention

// Core multi-head attention: per head softmax(Q Kt / sqrt(dh)) V, heads
// concatenated. Q [Tq,d], K [Tk,d], V [Tk,dv] -> [Tq,dv].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               int heads) {
  require(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "attention: want 2-D Q,K,V");
  const int tq = q.dim(0), d = q.dim(1);
  const int tk = k.dim(0), dv = v.dim(1);
  require(k.dim(1) == d && v.dim(0) == tk, "attention: K/V extents inconsistent");
  require(heads >= 1 && d % heads == 0 && dv % heads == 0,
          "attention: head count must divide feature widths");
  require(tq >= 1 && tk >= 1, "attention: empty token sequence");
  const int dh = d / heads, dvh = dv / heads;
  auto split = [&](const Tensor<T>& t, int tokens, int width) {
    return transpose(reshape(t, {tokens, heads, width}), {1, 0, 2});  // [h, tokens, width]
  };
  Tensor<T> qh = split(q, tq, dh);
  Tensor<T> kh = split(k, tk, dh);
  Tensor<T> vh = split(v, tk, dvh);
  Tensor<T> scores = scale(matmul(qh, transpose(kh, {0, 2, 1})), T(1) / std::sqrt(static_cast<T>(dh)));
  Tensor<T> attn = softmax(scores);
  Tensor<T> out = matmul(attn, vh);                     // [h, Tq, dvh]
  return reshape(transpose(out, {1, 0, 2}), {tq, dv});  // concat heads
}

// Spec-shaped attention op: heads concatenated then linearly mixed by w_out [dv,dv].
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               int heads, const Tensor<T>& w_out) {
  Tensor<T> mixed = multi_head_attention(q, k, v, heads);
  require(w_out.ndim() == 2 && w_out.dim(0) == v.dim(1) && w_out.dim(1) == v.dim(1),
          "scaled_dot_attention: output projection must be [dv,dv]");
  return matmul(mixed, w_out);
}

}  // namespace monorig::diff
