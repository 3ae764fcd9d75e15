#include "orstereo/ops.hpp"

#include <cblas.h>

#include <cmath>
#include <string>

namespace orstereo::ops {
namespace {

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float *a, int lda, const float *b, int ldb,
          float beta, float *c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda,
              b, ldb, beta, c, ldc);
}
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double *a, int lda, const double *b, int ldb,
          double beta, double *c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda,
              b, ldb, beta, c, ldc);
}

template <typename T>
void require_same(const Var<T> &a, const Var<T> &b, const char *op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_scalar(const Var<T> &s, const char *op) {
  if (s.value().size() != 1) throw ShapeError(std::string(op) + ": expected a scalar, got " + shape_str(s.shape()));
}

template <typename T>
bool wants(const Node<T> &n, std::size_t i) {
  return n.parents[i]->requires_grad;
}

template <typename T, typename F>
Tensor<T> unary(const Var<T> &a, F f) {
  Tensor<T> out(a.shape());
  const T *x = a.value().ptr();
  T *y = out.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) y[i] = f(x[i]);
  return out;
}

// Align-corners source coordinate of output index i.
template <typename T>
T source_coord(int i, int in, int out) {
  if (out <= 1 || in <= 1) return T(0);
  return static_cast<T>(i) * static_cast<T>(in - 1) / static_cast<T>(out - 1);
}

struct Tap {
  int i0, i1;
  double w1;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  for (int i = 0; i < out; ++i) {
    double s = source_coord<double>(i, in, out);
    int i0 = std::min(static_cast<int>(std::floor(s)), in - 1);
    int i1 = std::min(i0 + 1, in - 1);
    t[static_cast<std::size_t>(i)] = {i0, i1, s - i0};
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> add(const Var<T> &a, const Var<T> &b) {
  require_same(a, b, "add");
  Tensor<T> out = a.value();
  const T *y = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T> &n) {
    if (wants(n, 0)) n.parents[0]->accumulate(n.grad);
    if (wants(n, 1)) n.parents[1]->accumulate(n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T> &a, const Var<T> &b) {
  require_same(a, b, "sub");
  Tensor<T> out = a.value();
  const T *y = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T> &n) {
    if (wants(n, 0)) n.parents[0]->accumulate(n.grad);
    if (wants(n, 1)) {
      Tensor<T> &g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T> &a, const Var<T> &b) {
  require_same(a, b, "mul");
  Tensor<T> out = a.value();
  const T *y = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T> &n) {
    const Tensor<T> &av = n.parents[0]->value;
    const Tensor<T> &bv = n.parents[1]->value;
    if (wants(n, 0)) {
      Tensor<T> &g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants(n, 1)) {
      Tensor<T> &g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> affine(const Var<T> &a, T scale, T shift) {
  Tensor<T> out = unary(a, [&](T v) { return v * scale + shift; });
  return make_op<T>(std::move(out), {a}, [scale](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * scale;
  });
}

template <typename T>
Var<T> sigmoid(const Var<T> &a) {
  Tensor<T> out = unary(a, [](T v) { return T(1) / (T(1) + std::exp(-v)); });
  return make_op<T>(std::move(out), {a}, [](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      T s = n.value[i];
      g[i] += n.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T> &a) {
  Tensor<T> out = unary(a, [](T v) { return std::tanh(v); });
  return make_op<T>(std::move(out), {a}, [](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      T t = n.value[i];
      g[i] += n.grad[i] * (T(1) - t * t);
    }
  });
}

template <typename T>
Var<T> silu(const Var<T> &a) {
  Tensor<T> out = unary(a, [](T v) { return v / (T(1) + std::exp(-v)); });
  return make_op<T>(std::move(out), {a}, [](Node<T> &n) {
    const Tensor<T> &x = n.parents[0]->value;
    Tensor<T> &g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      T s = T(1) / (T(1) + std::exp(-x[i]));
      g[i] += n.grad[i] * (s + x[i] * s * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>> &parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  int h = parts[0].value().height(), w = parts[0].value().width(), c = 0;
  for (const auto &p : parts) {
    require_same_hw(parts[0].value(), p.value(), "concat");
    c += p.value().channels();
  }
  Tensor<T> out(c, h, w);
  std::size_t off = 0;
  for (const auto &p : parts) {
    std::copy(p.value().ptr(), p.value().ptr() + p.value().size(), out.ptr() + off);
    off += p.value().size();
  }
  return make_op<T>(std::move(out), parts, [](Node<T> &n) {
    std::size_t off = 0;
    for (auto &p : n.parents) {
      std::size_t sz = p->value.size();
      if (p->requires_grad) {
        Tensor<T> &g = p->grad_buffer();
        for (std::size_t i = 0; i < sz; ++i) g[i] += n.grad[off + i];
      }
      off += sz;
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T> &a, int first, int count) {
  require_rank3(a.value(), "slice_channels");
  if (first < 0 || count < 1 || first + count > a.value().channels())
    throw ShapeError("slice_channels: range out of bounds for " + shape_str(a.shape()));
  const std::size_t plane = a.value().plane();
  Tensor<T> out(count, a.value().height(), a.value().width());
  std::copy(a.value().channel_ptr(first), a.value().channel_ptr(first) + count * plane, out.ptr());
  return make_op<T>(std::move(out), {a}, [first, plane](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    T *dst = g.ptr() + first * plane;
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
  });
}

template <typename T>
Var<T> conv2d(const Var<T> &x, const Var<T> &weight, const Var<T> &bias, int stride, int pad) {
  const Tensor<T> &xv = x.value();
  const Tensor<T> &wv = weight.value();
  require_rank3(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(1) != xv.channels() || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  const bool has_bias = !bias.value().empty();
  const int cout = wv.dim(0), cin = wv.dim(1), k = wv.dim(2);
  if (has_bias && static_cast<int>(bias.value().size()) != cout) throw ShapeError("conv2d: bias size mismatch");
  const int h = xv.height(), w = xv.width();
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " too small for kernel");
  const int kk = cin * k * k, npix = ho * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  auto im2col = [=](const T *src) {
    std::vector<T> col(static_cast<std::size_t>(kk) * npix);
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T *row = col.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * npix;
          for (int oy = 0; oy < ho; ++oy) {
            int iy = oy * stride - pad + ky;
            T *dst = row + oy * wo;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            const T *srow = src + (static_cast<std::size_t>(ci) * h + iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              int ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
            }
          }
        }
    return col;
  };

  std::vector<T> col;
  const T *colp = xv.ptr();
  if (!direct) {
    col = im2col(xv.ptr());
    colp = col.data();
  }
  Tensor<T> out(cout, ho, wo);
  gemm(false, false, cout, npix, kk, T(1), wv.ptr(), kk, colp, npix, T(0), out.ptr(), npix);
  if (has_bias) {
    for (int co = 0; co < cout; ++co) {
      T b = bias.value()[static_cast<std::size_t>(co)];
      T *o = out.channel_ptr(co);
      for (int i = 0; i < npix; ++i) o[i] += b;
    }
  }
  if (!weight.requires_grad()) col.clear();

  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_op<T>(std::move(out), parents,
                    [=, col = std::move(col)](Node<T> &n) {
                      const T *dy = n.grad.ptr();
                      if (n.parents[1]->requires_grad) {
                        const T *cp = direct ? n.parents[0]->value.ptr() : col.data();
                        Tensor<T> &gw = n.parents[1]->grad_buffer();
                        gemm(false, true, cout, kk, npix, T(1), dy, npix, cp, npix, T(1), gw.ptr(), kk);
                      }
                      if (has_bias && n.parents[2]->requires_grad) {
                        Tensor<T> &gb = n.parents[2]->grad_buffer();
                        for (int co = 0; co < cout; ++co) {
                          T s = 0;
                          const T *g = dy + static_cast<std::size_t>(co) * npix;
                          for (int i = 0; i < npix; ++i) s += g[i];
                          gb[static_cast<std::size_t>(co)] += s;
                        }
                      }
                      if (n.parents[0]->requires_grad) {
                        Tensor<T> &gx = n.parents[0]->grad_buffer();
                        const T *wp = n.parents[1]->value.ptr();
                        if (direct) {
                          gemm(true, false, kk, npix, cout, T(1), wp, kk, dy, npix, T(1), gx.ptr(), npix);
                          return;
                        }
                        std::vector<T> dcol(static_cast<std::size_t>(kk) * npix);
                        gemm(true, false, kk, npix, cout, T(1), wp, kk, dy, npix, T(0), dcol.data(), npix);
                        T *dst = gx.ptr();
                        for (int ci = 0; ci < cin; ++ci)
                          for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                              const T *row = dcol.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * npix;
                              for (int oy = 0; oy < ho; ++oy) {
                                int iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= h) continue;
                                T *drow = dst + (static_cast<std::size_t>(ci) * h + iy) * w;
                                const T *srow = row + oy * wo;
                                for (int ox = 0; ox < wo; ++ox) {
                                  int ix = ox * stride - pad + kx;
                                  if (ix >= 0 && ix < w) drow[ix] += srow[ox];
                                }
                              }
                            }
                      }
                    });
}

template <typename T>
Var<T> resize_bilinear(const Var<T> &x, int out_h, int out_w, T value_scale) {
  const Tensor<T> &xv = x.value();
  require_rank3(xv, "resize_bilinear");
  if (out_h < 1 || out_w < 1)
    throw ValidationError("resize: target size must be positive, got " + std::to_string(out_h) + "x" +
                          std::to_string(out_w));
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  if (out_h == h && out_w == w && value_scale == T(1)) {
    return make_op<T>(xv, {x}, [](Node<T> &n) { n.parents[0]->accumulate(n.grad); });
  }
  auto ty = taps(h, out_h), tx = taps(w, out_w);
  Tensor<T> out(c, out_h, out_w);
  for (int ch = 0; ch < c; ++ch) {
    const T *src = xv.channel_ptr(ch);
    T *dst = out.channel_ptr(ch);
    for (int y = 0; y < out_h; ++y) {
      const Tap &a = ty[static_cast<std::size_t>(y)];
      const T wy = static_cast<T>(a.w1);
      const T *r0 = src + a.i0 * w;
      const T *r1 = src + a.i1 * w;
      for (int xo = 0; xo < out_w; ++xo) {
        const Tap &b = tx[static_cast<std::size_t>(xo)];
        const T wx = static_cast<T>(b.w1);
        T top = r0[b.i0] * (T(1) - wx) + r0[b.i1] * wx;
        T bot = r1[b.i0] * (T(1) - wx) + r1[b.i1] * wx;
        dst[y * out_w + xo] = (top * (T(1) - wy) + bot * wy) * value_scale;
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [=](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    for (int ch = 0; ch < c; ++ch) {
      T *dst = g.channel_ptr(ch);
      const T *gy = n.grad.channel_ptr(ch);
      for (int y = 0; y < out_h; ++y) {
        const Tap &a = ty[static_cast<std::size_t>(y)];
        const T wy = static_cast<T>(a.w1);
        T *r0 = dst + a.i0 * w;
        T *r1 = dst + a.i1 * w;
        for (int xo = 0; xo < out_w; ++xo) {
          const Tap &b = tx[static_cast<std::size_t>(xo)];
          const T wx = static_cast<T>(b.w1);
          T v = gy[y * out_w + xo] * value_scale;
          r0[b.i0] += v * (T(1) - wy) * (T(1) - wx);
          r0[b.i1] += v * (T(1) - wy) * wx;
          r1[b.i0] += v * wy * (T(1) - wx);
          r1[b.i1] += v * wy * wx;
        }
      }
    }
  });
}

template <typename T>
Var<T> warp_horizontal(const Var<T> &src, const Var<T> &disp, Tensor<T> *valid) {
  const Tensor<T> &sv = src.value();
  const Tensor<T> &dv = disp.value();
  require_same_hw(sv, dv, "warp_horizontal");
  if (dv.channels() != 1) throw ShapeError("warp_horizontal: disparity must have one channel");
  if (!dv.all_finite()) throw ValidationError("warp_horizontal: non-finite disparity");
  const int c = sv.channels(), h = sv.height(), w = sv.width();
  const std::size_t plane = sv.plane();
  // Per-pixel footprint: x0 < 0 marks invalid.
  std::vector<int> x0s(plane);
  std::vector<T> fr(plane);
  Tensor<T> out(c, h, w);
  if (valid) *valid = Tensor<T>(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::size_t p = static_cast<std::size_t>(y) * w + x;
      T xs = static_cast<T>(x) - dv[p];
      if (!(xs >= T(0) && xs <= static_cast<T>(w - 1))) {
        x0s[p] = -1;
        continue;
      }
      int x0 = std::min(static_cast<int>(std::floor(xs)), w - 1);
      x0s[p] = x0;
      fr[p] = xs - static_cast<T>(x0);
      if (valid) (*valid)[p] = T(1);
      int x1 = std::min(x0 + 1, w - 1);
      for (int ch = 0; ch < c; ++ch) {
        const T *row = sv.channel_ptr(ch) + static_cast<std::size_t>(y) * w;
        out[ch * plane + p] = row[x0] * (T(1) - fr[p]) + row[x1] * fr[p];
      }
    }
  return make_op<T>(std::move(out), {src, disp},
                    [=, x0s = std::move(x0s), fr = std::move(fr)](Node<T> &n) {
                      const Tensor<T> &s = n.parents[0]->value;
                      const bool gs = n.parents[0]->requires_grad, gd = n.parents[1]->requires_grad;
                      T *gsrc = gs ? n.parents[0]->grad_buffer().ptr() : nullptr;
                      T *gdisp = gd ? n.parents[1]->grad_buffer().ptr() : nullptr;
                      for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x) {
                          std::size_t p = static_cast<std::size_t>(y) * w + x;
                          int x0 = x0s[p];
                          if (x0 < 0) continue;
                          int x1 = std::min(x0 + 1, w - 1);
                          T f = fr[p], dd = 0;
                          for (int ch = 0; ch < c; ++ch) {
                            std::size_t row = ch * plane + static_cast<std::size_t>(y) * w;
                            T g = n.grad[ch * plane + p];
                            if (gs) {
                              gsrc[row + x0] += g * (T(1) - f);
                              gsrc[row + x1] += g * f;
                            }
                            // d out / d xs = s[x1] - s[x0]; xs = x - d.
                            dd -= g * (s[row + x1] - s[row + x0]);
                          }
                          if (gd) gdisp[p] += dd;
                        }
                    });
}

template <typename T>
Var<T> local_correlation(const Var<T> &left, const Var<T> &right, int radius) {
  const Tensor<T> &lv = left.value();
  const Tensor<T> &rv = right.value();
  if (lv.shape() != rv.shape()) throw ShapeError("local_correlation: feature shapes differ");
  require_rank3(lv, "local_correlation");
  if (radius < 0) throw ValidationError("local_correlation: negative radius");
  const int c = lv.channels(), h = lv.height(), w = lv.width(), n_off = 2 * radius + 1;
  const std::size_t plane = lv.plane();
  const T inv_c = T(1) / static_cast<T>(c);
  Tensor<T> out(n_off, h, w);
  for (int k = 0; k < n_off; ++k) {
    int o = k - radius;
    T *dst = out.channel_ptr(k);
    for (int ch = 0; ch < c; ++ch) {
      const T *l = lv.channel_ptr(ch);
      const T *r = rv.channel_ptr(ch);
      for (int y = 0; y < h; ++y) {
        std::size_t row = static_cast<std::size_t>(y) * w;
        for (int x = std::max(0, o); x < std::min(w, w + o); ++x) dst[row + x] += l[row + x] * r[row + x - o];
      }
    }
    for (std::size_t i = 0; i < plane; ++i) dst[i] *= inv_c;
  }
  return make_op<T>(std::move(out), {left, right}, [=](Node<T> &n) {
    const Tensor<T> &l = n.parents[0]->value;
    const Tensor<T> &r = n.parents[1]->value;
    const bool gl = n.parents[0]->requires_grad, gr = n.parents[1]->requires_grad;
    T *dl = gl ? n.parents[0]->grad_buffer().ptr() : nullptr;
    T *dr = gr ? n.parents[1]->grad_buffer().ptr() : nullptr;
    for (int k = 0; k < n_off; ++k) {
      int o = k - radius;
      const T *g = n.grad.channel_ptr(k);
      for (int ch = 0; ch < c; ++ch) {
        std::size_t base = ch * plane;
        for (int y = 0; y < h; ++y) {
          std::size_t row = static_cast<std::size_t>(y) * w;
          for (int x = std::max(0, o); x < std::min(w, w + o); ++x) {
            T gv = g[row + x] * inv_c;
            if (gl) dl[base + row + x] += gv * r[base + row + x - o];
            if (gr) dr[base + row + x - o] += gv * l[base + row + x];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> correlation_volume(const Var<T> &left, const Var<T> &right, int hypotheses, int groups) {
  const Tensor<T> &lv = left.value();
  const Tensor<T> &rv = right.value();
  if (lv.shape() != rv.shape()) throw ShapeError("correlation_volume: feature shapes differ");
  require_rank3(lv, "correlation_volume");
  const int c = lv.channels(), h = lv.height(), w = lv.width();
  if (hypotheses < 1) throw ValidationError("correlation_volume: need at least one hypothesis");
  if (groups < 1 || c % groups != 0)
    throw ValidationError("correlation_volume: " + std::to_string(c) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
  const int cg = c / groups;
  const std::size_t plane = lv.plane();
  const T inv = T(1) / static_cast<T>(cg);
  Tensor<T> out(groups * hypotheses, h, w);
  for (int g = 0; g < groups; ++g)
    for (int k = 0; k < hypotheses; ++k) {
      T *dst = out.channel_ptr(g * hypotheses + k);
      for (int ch = g * cg; ch < (g + 1) * cg; ++ch) {
        const T *l = lv.channel_ptr(ch);
        const T *r = rv.channel_ptr(ch);
        for (int y = 0; y < h; ++y) {
          std::size_t row = static_cast<std::size_t>(y) * w;
          for (int x = k; x < w; ++x) dst[row + x] += l[row + x] * r[row + x - k];
        }
      }
      for (std::size_t i = 0; i < plane; ++i) dst[i] *= inv;
    }
  return make_op<T>(std::move(out), {left, right}, [=](Node<T> &n) {
    const Tensor<T> &l = n.parents[0]->value;
    const Tensor<T> &r = n.parents[1]->value;
    const bool gl = n.parents[0]->requires_grad, gr = n.parents[1]->requires_grad;
    T *dl = gl ? n.parents[0]->grad_buffer().ptr() : nullptr;
    T *dr = gr ? n.parents[1]->grad_buffer().ptr() : nullptr;
    for (int g = 0; g < groups; ++g)
      for (int k = 0; k < hypotheses; ++k) {
        const T *gv = n.grad.channel_ptr(g * hypotheses + k);
        for (int ch = g * cg; ch < (g + 1) * cg; ++ch) {
          std::size_t base = ch * plane;
          for (int y = 0; y < h; ++y) {
            std::size_t row = static_cast<std::size_t>(y) * w;
            for (int x = k; x < w; ++x) {
              T v = gv[row + x] * inv;
              if (gl) dl[base + row + x] += v * r[base + row + x - k];
              if (gr) dr[base + row + x - k] += v * l[base + row + x];
            }
          }
        }
      }
  });
}

template <typename T>
Var<T> softmax_channels(const Var<T> &a) {
  const Tensor<T> &av = a.value();
  require_rank3(av, "softmax_channels");
  const int c = av.channels();
  const std::size_t plane = av.plane();
  Tensor<T> out(av.shape());
  for (std::size_t p = 0; p < plane; ++p) {
    T m = av[p];
    for (int k = 1; k < c; ++k) m = std::max(m, av[k * plane + p]);
    T s = 0;
    for (int k = 0; k < c; ++k) s += (out[k * plane + p] = std::exp(av[k * plane + p] - m));
    for (int k = 0; k < c; ++k) out[k * plane + p] /= s;
  }
  return make_op<T>(std::move(out), {a}, [c, plane](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < plane; ++p) {
      T dotp = 0;
      for (int k = 0; k < c; ++k) dotp += n.grad[k * plane + p] * n.value[k * plane + p];
      for (int k = 0; k < c; ++k) g[k * plane + p] += n.value[k * plane + p] * (n.grad[k * plane + p] - dotp);
    }
  });
}

template <typename T>
Var<T> soft_argmin(const Var<T> &cost) {
  const Tensor<T> &cv = cost.value();
  require_rank3(cv, "soft_argmin");
  const int k = cv.channels(), h = cv.height(), w = cv.width();
  const std::size_t plane = cv.plane();
  Tensor<T> prob(cv.shape());
  Tensor<T> out(1, h, w);
  for (std::size_t p = 0; p < plane; ++p) {
    T m = -cv[p];
    for (int j = 1; j < k; ++j) m = std::max(m, -cv[j * plane + p]);
    T s = 0;
    for (int j = 0; j < k; ++j) s += (prob[j * plane + p] = std::exp(-cv[j * plane + p] - m));
    T d = 0;
    for (int j = 0; j < k; ++j) {
      prob[j * plane + p] /= s;
      d += static_cast<T>(j) * prob[j * plane + p];
    }
    out[p] = d;
  }
  return make_op<T>(std::move(out), {cost}, [k, plane, prob = std::move(prob)](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < plane; ++p) {
      T d = n.value[p], gp = n.grad[p];
      for (int j = 0; j < k; ++j) g[j * plane + p] -= gp * prob[j * plane + p] * (static_cast<T>(j) - d);
    }
  });
}

template <typename T>
Var<T> mean_all(const Var<T> &a) {
  const Tensor<T> &av = a.value();
  if (av.empty()) throw ShapeError("mean_all: empty tensor");
  T s = 0;
  for (T v : av.data()) s += v;
  const T n_inv = T(1) / static_cast<T>(av.size());
  return make_op<T>(Tensor<T>::scalar(s * n_inv), {a}, [n_inv](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    T v = n.grad[0] * n_inv;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += v;
  });
}

template <typename T>
Var<T> std_all(const Var<T> &a) {
  const Tensor<T> &av = a.value();
  if (av.empty()) throw ShapeError("std_all: empty tensor");
  const T cnt = static_cast<T>(av.size());
  T m = 0;
  for (T v : av.data()) m += v;
  m /= cnt;
  T var = 0;
  for (T v : av.data()) var += (v - m) * (v - m);
  T s = std::sqrt(var / cnt);
  return make_op<T>(Tensor<T>::scalar(s), {a}, [m, cnt](Node<T> &n) {
    T s = n.value[0];
    if (s <= T(0)) return;
    Tensor<T> &g = n.parents[0]->grad_buffer();
    const Tensor<T> &x = n.parents[0]->value;
    T f = n.grad[0] / (cnt * s);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * (x[i] - m);
  });
}

template <typename T>
Var<T> sub_scalar(const Var<T> &a, const Var<T> &s) {
  require_scalar(s, "sub_scalar");
  const T sv = s.value()[0];
  Tensor<T> out = unary(a, [sv](T v) { return v - sv; });
  return make_op<T>(std::move(out), {a, s}, [](Node<T> &n) {
    T acc = 0;
    for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i];
    if (wants(n, 0)) n.parents[0]->accumulate(n.grad);
    if (wants(n, 1)) n.parents[1]->grad_buffer()[0] -= acc;
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T> &a, const Var<T> &s) {
  require_scalar(s, "mul_scalar");
  const T sv = s.value()[0];
  Tensor<T> out = unary(a, [sv](T v) { return v * sv; });
  return make_op<T>(std::move(out), {a, s}, [sv](Node<T> &n) {
    const Tensor<T> &x = n.parents[0]->value;
    if (wants(n, 0)) {
      Tensor<T> &g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * sv;
    }
    if (wants(n, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += n.grad[i] * x[i];
      n.parents[1]->grad_buffer()[0] += acc;
    }
  });
}

template <typename T>
Var<T> div_scalar(const Var<T> &a, const Var<T> &s) {
  require_scalar(s, "div_scalar");
  const T sv = s.value()[0];
  if (sv == T(0)) throw NumericHealthError("div_scalar: division by zero");
  Tensor<T> out = unary(a, [sv](T v) { return v / sv; });
  return make_op<T>(std::move(out), {a, s}, [sv](Node<T> &n) {
    if (wants(n, 0)) {
      Tensor<T> &g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / sv;
    }
    if (wants(n, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < n.value.size(); ++i) acc += n.grad[i] * n.value[i];
      n.parents[1]->grad_buffer()[0] -= acc / sv;
    }
  });
}

template <typename T>
Var<T> dot_const(const Var<T> &a, const Tensor<T> &weights) {
  if (a.shape() != weights.shape()) throw ShapeError("dot_const: shape mismatch");
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += a.value()[i] * weights[i];
  return make_op<T>(Tensor<T>::scalar(s), {a}, [weights](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * weights[i];
  });
}

template <typename T>
Var<T> smooth_l1(const Var<T> &pred, const Tensor<T> &target, const Tensor<T> *mask) {
  if (pred.shape() != target.shape()) throw ShapeError("smooth_l1: prediction/target shape mismatch");
  if (mask && mask->shape() != target.shape()) throw ShapeError("smooth_l1: mask shape mismatch");
  const Tensor<T> &pv = pred.value();
  std::size_t count = 0;
  T acc = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (mask && (*mask)[i] == T(0)) continue;
    ++count;
    T e = std::abs(pv[i] - target[i]);
    acc += e < T(1) ? T(0.5) * e * e : e - T(0.5);
  }
  const T inv = count ? T(1) / static_cast<T>(count) : T(0);
  Tensor<T> mask_copy = mask ? *mask : Tensor<T>();
  return make_op<T>(Tensor<T>::scalar(acc * inv), {pred}, [target, mask_copy, inv](Node<T> &n) {
    const Tensor<T> &p = n.parents[0]->value;
    Tensor<T> &g = n.parents[0]->grad_buffer();
    T scale = n.grad[0] * inv;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!mask_copy.empty() && mask_copy[i] == T(0)) continue;
      T e = p[i] - target[i];
      g[i] += scale * (std::abs(e) < T(1) ? e : (e > 0 ? T(1) : T(-1)));
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T> &scores, const Tensor<T> &target) {
  if (scores.shape() != target.shape()) throw ShapeError("cross_entropy: score/target shape mismatch");
  const Tensor<T> &sv = scores.value();
  require_rank3(sv, "cross_entropy");
  const int c = sv.channels();
  const std::size_t plane = sv.plane();
  Tensor<T> prob(sv.shape());
  T acc = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    T m = sv[p];
    for (int k = 1; k < c; ++k) m = std::max(m, sv[k * plane + p]);
    T s = 0;
    for (int k = 0; k < c; ++k) s += std::exp(sv[k * plane + p] - m);
    T lse = m + std::log(s);
    for (int k = 0; k < c; ++k) {
      prob[k * plane + p] = std::exp(sv[k * plane + p] - lse);
      acc -= target[k * plane + p] * (sv[k * plane + p] - lse);
    }
  }
  const T inv = T(1) / static_cast<T>(plane);
  return make_op<T>(Tensor<T>::scalar(acc * inv), {scores}, [=, prob = std::move(prob)](Node<T> &n) {
    Tensor<T> &g = n.parents[0]->grad_buffer();
    T scale = n.grad[0] * inv;
    for (std::size_t p = 0; p < plane; ++p) {
      T tsum = 0;
      for (int k = 0; k < c; ++k) tsum += target[k * plane + p];
      for (int k = 0; k < c; ++k) g[k * plane + p] += scale * (prob[k * plane + p] * tsum - target[k * plane + p]);
    }
  });
}

#define ORSTEREO_INSTANTIATE_OPS(T)                                                                     \
  template Var<T> add(const Var<T> &, const Var<T> &);                                                  \
  template Var<T> sub(const Var<T> &, const Var<T> &);                                                  \
  template Var<T> mul(const Var<T> &, const Var<T> &);                                                  \
  template Var<T> affine(const Var<T> &, T, T);                                                         \
  template Var<T> sigmoid(const Var<T> &);                                                              \
  template Var<T> tanh(const Var<T> &);                                                                 \
  template Var<T> silu(const Var<T> &);                                                                 \
  template Var<T> concat(const std::vector<Var<T>> &);                                                  \
  template Var<T> slice_channels(const Var<T> &, int, int);                                             \
  template Var<T> conv2d(const Var<T> &, const Var<T> &, const Var<T> &, int, int);                     \
  template Var<T> resize_bilinear(const Var<T> &, int, int, T);                                         \
  template Var<T> warp_horizontal(const Var<T> &, const Var<T> &, Tensor<T> *);                         \
  template Var<T> local_correlation(const Var<T> &, const Var<T> &, int);                               \
  template Var<T> correlation_volume(const Var<T> &, const Var<T> &, int, int);                         \
  template Var<T> softmax_channels(const Var<T> &);                                                     \
  template Var<T> soft_argmin(const Var<T> &);                                                          \
  template Var<T> mean_all(const Var<T> &);                                                             \
  template Var<T> std_all(const Var<T> &);                                                              \
  template Var<T> sub_scalar(const Var<T> &, const Var<T> &);                                           \
  template Var<T> mul_scalar(const Var<T> &, const Var<T> &);                                           \
  template Var<T> div_scalar(const Var<T> &, const Var<T> &);                                           \
  template Var<T> dot_const(const Var<T> &, const Tensor<T> &);                                         \
  template Var<T> smooth_l1(const Var<T> &, const Tensor<T> &, const Tensor<T> *);                      \
  template Var<T> cross_entropy(const Var<T> &, const Tensor<T> &);

ORSTEREO_INSTANTIATE_OPS(float)
ORSTEREO_INSTANTIATE_OPS(double)

}  // namespace orstereo::ops
