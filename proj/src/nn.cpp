#include "mnetsat/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

namespace mnetsat::nn {
namespace {

// out[m,n] (+)= a[m,k] * b[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* out, int64_t m, int64_t k, int64_t n, bool accumulate) {
  const bool par = m * n * k > 32768;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* orow = out + i * n;
    if (!accumulate) std::fill(orow, orow + n, T(0));
    const T* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

// out[k,n] (+)= a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* out, int64_t m, int64_t k, int64_t n, bool accumulate) {
  const bool par = m * n * k > 32768;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t p = 0; p < k; ++p) {
    T* orow = out + p * n;
    if (!accumulate) std::fill(orow, orow + n, T(0));
    for (int64_t i = 0; i < m; ++i) {
      const T aip = a[i * k + p];
      if (aip == T(0)) continue;
      const T* brow = b + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

// out[m,k] (+)= a[m,n] * b[k,n]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* out, int64_t m, int64_t n, int64_t k, bool accumulate) {
  const bool par = m * n * k > 32768;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* orow = out + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = accumulate ? orow[p] : T(0);
      for (int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      orow[p] = acc;
    }
  }
}

template <typename T>
void im2col(const T* x, int64_t H, int64_t W, int64_t C, int64_t kh, int64_t kw, int stride,
            int dilation, int64_t pt, int64_t pl, int64_t OH, int64_t OW, T* cols) {
  const int64_t row_len = kh * kw * C;
  for (int64_t oh = 0; oh < OH; ++oh)
    for (int64_t ow = 0; ow < OW; ++ow) {
      T* crow = cols + (oh * OW + ow) * row_len;
      int64_t ci = 0;
      for (int64_t ki = 0; ki < kh; ++ki) {
        const int64_t ih = oh * stride - pt + ki * dilation;
        for (int64_t kj = 0; kj < kw; ++kj, ci += C) {
          const int64_t iw = ow * stride - pl + kj * dilation;
          if (ih >= 0 && ih < H && iw >= 0 && iw < W)
            std::memcpy(crow + ci, x + (ih * W + iw) * C, sizeof(T) * static_cast<size_t>(C));
          else
            std::fill(crow + ci, crow + ci + C, T(0));
        }
      }
    }
}

template <typename T>
void col2im_acc(const T* cols, int64_t H, int64_t W, int64_t C, int64_t kh, int64_t kw,
                int stride, int dilation, int64_t pt, int64_t pl, int64_t OH, int64_t OW, T* gx) {
  const int64_t row_len = kh * kw * C;
  for (int64_t oh = 0; oh < OH; ++oh)
    for (int64_t ow = 0; ow < OW; ++ow) {
      const T* crow = cols + (oh * OW + ow) * row_len;
      int64_t ci = 0;
      for (int64_t ki = 0; ki < kh; ++ki) {
        const int64_t ih = oh * stride - pt + ki * dilation;
        for (int64_t kj = 0; kj < kw; ++kj, ci += C) {
          const int64_t iw = ow * stride - pl + kj * dilation;
          if (ih >= 0 && ih < H && iw >= 0 && iw < W) {
            T* dst = gx + (ih * W + iw) * C;
            for (int64_t c = 0; c < C; ++c) dst[c] += crow[ci + c];
          }
        }
      }
    }
}

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(t.shape()));
}

}  // namespace

ConvGeom conv_geometry(int64_t in_h, int64_t in_w, int eff_h, int eff_w, int stride,
                       Padding padding) {
  if (stride <= 0) throw std::invalid_argument("stride must be positive");
  if (eff_h <= 0 || eff_w <= 0) throw std::invalid_argument("degenerate window (0)");
  ConvGeom g;
  if (padding == Padding::kValid) {
    if (eff_h > in_h || eff_w > in_w)
      throw std::invalid_argument("kernel larger than padded input: effective window " +
                                  std::to_string(eff_h) + "x" + std::to_string(eff_w) +
                                  " exceeds input " + std::to_string(in_h) + "x" +
                                  std::to_string(in_w));
    g.out_h = (in_h - eff_h) / stride + 1;
    g.out_w = (in_w - eff_w) / stride + 1;
  } else {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const int64_t tp = std::max<int64_t>((g.out_h - 1) * stride + eff_h - in_h, 0);
    const int64_t lp = std::max<int64_t>((g.out_w - 1) * stride + eff_w - in_w, 0);
    g.pad_top = tp / 2;
    g.pad_left = lp / 2;
  }
  return g;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, const ConvSpec& spec) {
  const Tensor<T> xv = x.val();
  const Tensor<T> wv = w.val();
  const Tensor<T> bv = b.val();
  require_rank(xv, 4, "conv2d input");
  require_rank(wv, 4, "conv2d weight");
  require_rank(bv, 1, "conv2d bias");
  const int64_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const int64_t kh = wv.dim(0), kw = wv.dim(1), Cout = wv.dim(3);
  if (wv.dim(2) != C)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(C) +
                                " do not match weight " + shape_str(wv.shape()));
  if (bv.dim(0) != Cout)
    throw std::invalid_argument("conv2d: bias " + shape_str(bv.shape()) + " vs filters " +
                                std::to_string(Cout));
  const int dil = spec.dilation, stride = spec.stride;
  const ConvGeom g =
      conv_geometry(H, W, dil * static_cast<int>(kh - 1) + 1, dil * static_cast<int>(kw - 1) + 1,
                    stride, spec.padding);
  const int64_t OH = g.out_h, OW = g.out_w, row_len = kh * kw * C;

  Tensor<T> out({N, OH, OW, Cout});
  {
    std::vector<T> cols(static_cast<size_t>(OH * OW * row_len));
    const T* px = xv.cdata();
    const T* pw = wv.cdata();
    const T* pb = bv.cdata();
    T* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
      im2col(px + n * H * W * C, H, W, C, kh, kw, stride, dil, g.pad_top, g.pad_left, OH, OW,
             cols.data());
      T* on = po + n * OH * OW * Cout;
      gemm_nn(cols.data(), pw, on, OH * OW, row_len, Cout, false);
      const int64_t rows = OH * OW;
      for (int64_t r = 0; r < rows; ++r) {
        T* orow = on + r * Cout;
        for (int64_t c = 0; c < Cout; ++c) orow[c] += pb[c];
      }
    }
  }

  return x.tape->record(
      "conv2d", std::move(out), {x.id, w.id, b.id},
      [x, w, b, xv, wv, spec, g, N, H, W, C, kh, kw, Cout](Tape<T>& t, const Tensor<T>& gy) {
        const int64_t OH = g.out_h, OW = g.out_w, row_len = kh * kw * C;
        const int dil = spec.dilation, stride = spec.stride;
        Tensor<T> gxt({N, H, W, C});
        Tensor<T> gwt(wv.shape());
        Tensor<T> gbt({Cout});
        const T* pgy = gy.cdata();
        const T* px = xv.cdata();
        const T* pw = wv.cdata();
        T* pgx = gxt.data();
        T* pgw = gwt.data();
        T* pgb = gbt.data();
        std::vector<T> cols(static_cast<size_t>(OH * OW * row_len));
        std::vector<T> gcols(static_cast<size_t>(OH * OW * row_len));
        for (int64_t n = 0; n < N; ++n) {
          const T* gyn = pgy + n * OH * OW * Cout;
          im2col(px + n * H * W * C, H, W, C, kh, kw, stride, dil, g.pad_top, g.pad_left, OH, OW,
                 cols.data());
          gemm_tn(cols.data(), gyn, pgw, OH * OW, row_len, Cout, true);
          gemm_nt(gyn, pw, gcols.data(), OH * OW, Cout, row_len, false);
          col2im_acc(gcols.data(), H, W, C, kh, kw, stride, dil, g.pad_top, g.pad_left, OH, OW,
                     pgx + n * H * W * C);
          for (int64_t r = 0; r < OH * OW; ++r)
            for (int64_t c = 0; c < Cout; ++c) pgb[c] += gyn[r * Cout + c];
        }
        t.accumulate(x.id, std::move(gxt));
        t.accumulate(w.id, std::move(gwt));
        t.accumulate(b.id, std::move(gbt));
      });
}

template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> w, Var<T> b, const ConvSpec& spec) {
  const Tensor<T> xv = x.val();
  const Tensor<T> wv = w.val();
  const Tensor<T> bv = b.val();
  require_rank(xv, 4, "depthwise_conv2d input");
  require_rank(wv, 3, "depthwise_conv2d weight");
  require_rank(bv, 1, "depthwise_conv2d bias");
  const int64_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const int64_t kh = wv.dim(0), kw = wv.dim(1);
  if (wv.dim(2) != C || bv.dim(0) != C)
    throw std::invalid_argument("depthwise_conv2d: channel mismatch, input " +
                                shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
  const int dil = spec.dilation, stride = spec.stride;
  const ConvGeom g =
      conv_geometry(H, W, dil * static_cast<int>(kh - 1) + 1, dil * static_cast<int>(kw - 1) + 1,
                    stride, spec.padding);
  const int64_t OH = g.out_h, OW = g.out_w;

  Tensor<T> out({N, OH, OW, C});
  {
    const T* px = xv.cdata();
    const T* pw = wv.cdata();
    const T* pb = bv.cdata();
    T* po = out.data();
#pragma omp parallel for if (N * OH * OW * C > 16384) schedule(static)
    for (int64_t n = 0; n < N; ++n) {
      const T* xn = px + n * H * W * C;
      T* on = po + n * OH * OW * C;
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          T* ocell = on + (oh * OW + ow) * C;
          for (int64_t c = 0; c < C; ++c) ocell[c] = pb[c];
          for (int64_t ki = 0; ki < kh; ++ki) {
            const int64_t ih = oh * stride - g.pad_top + ki * dil;
            if (ih < 0 || ih >= H) continue;
            for (int64_t kj = 0; kj < kw; ++kj) {
              const int64_t iw = ow * stride - g.pad_left + kj * dil;
              if (iw < 0 || iw >= W) continue;
              const T* xc = xn + (ih * W + iw) * C;
              const T* wc = pw + (ki * kw + kj) * C;
              for (int64_t c = 0; c < C; ++c) ocell[c] += xc[c] * wc[c];
            }
          }
        }
    }
  }

  return x.tape->record(
      "depthwise_conv2d", std::move(out), {x.id, w.id, b.id},
      [x, w, b, xv, wv, spec, g, N, H, W, C, kh, kw](Tape<T>& t, const Tensor<T>& gy) {
        const int64_t OH = g.out_h, OW = g.out_w;
        const int dil = spec.dilation, stride = spec.stride;
        Tensor<T> gxt({N, H, W, C});
        Tensor<T> gwt(wv.shape());
        Tensor<T> gbt({C});
        const T* pgy = gy.cdata();
        const T* px = xv.cdata();
        const T* pw = wv.cdata();
        T* pgx = gxt.data();
        T* pgw = gwt.data();
        T* pgb = gbt.data();
        for (int64_t n = 0; n < N; ++n) {
          const T* xn = px + n * H * W * C;
          const T* gyn = pgy + n * OH * OW * C;
          T* gxn = pgx + n * H * W * C;
          for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow) {
              const T* gcell = gyn + (oh * OW + ow) * C;
              for (int64_t c = 0; c < C; ++c) pgb[c] += gcell[c];
              for (int64_t ki = 0; ki < kh; ++ki) {
                const int64_t ih = oh * stride - g.pad_top + ki * dil;
                if (ih < 0 || ih >= H) continue;
                for (int64_t kj = 0; kj < kw; ++kj) {
                  const int64_t iw = ow * stride - g.pad_left + kj * dil;
                  if (iw < 0 || iw >= W) continue;
                  const T* xc = xn + (ih * W + iw) * C;
                  const T* wc = pw + (ki * kw + kj) * C;
                  T* gxc = gxn + (ih * W + iw) * C;
                  T* gwc = pgw + (ki * kw + kj) * C;
                  for (int64_t c = 0; c < C; ++c) {
                    gxc[c] += gcell[c] * wc[c];
                    gwc[c] += gcell[c] * xc[c];
                  }
                }
              }
            }
        }
        t.accumulate(x.id, std::move(gxt));
        t.accumulate(w.id, std::move(gwt));
        t.accumulate(b.id, std::move(gbt));
      });
}

template <typename T>
Var<T> pool(Var<T> x, PoolKind kind, int window, int stride, Padding padding) {
  const Tensor<T> xv = x.val();
  require_rank(xv, 4, "pool input");
  if (window <= 0) throw std::invalid_argument("degenerate window (0)");
  if (stride <= 0) throw std::invalid_argument("pool stride must be positive");
  const int64_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const ConvGeom g = conv_geometry(H, W, window, window, stride, padding);
  const int64_t OH = g.out_h, OW = g.out_w;

  Tensor<T> out({N, OH, OW, C});
  auto argmax = kind == PoolKind::kMax
                    ? std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N * OH * OW * C))
                    : nullptr;
  {
    const T* px = xv.cdata();
    T* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
      const T* xn = px + n * H * W * C;
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t o = ((n * OH + oh) * OW + ow) * C + c;
            T best = std::numeric_limits<T>::lowest();
            int64_t besti = -1;
            T sum = 0;
            int64_t count = 0;
            for (int64_t ki = 0; ki < window; ++ki) {
              const int64_t ih = oh * stride - g.pad_top + ki;
              if (ih < 0 || ih >= H) continue;
              for (int64_t kj = 0; kj < window; ++kj) {
                const int64_t iw = ow * stride - g.pad_left + kj;
                if (iw < 0 || iw >= W) continue;
                const int64_t xi = (ih * W + iw) * C + c;
                const T v = xn[xi];
                if (v > best) {
                  best = v;
                  besti = n * H * W * C + xi;
                }
                sum += v;
                ++count;
              }
            }
            if (kind == PoolKind::kMax) {
              po[o] = best;
              (*argmax)[static_cast<size_t>(o)] = besti;
            } else {
              po[o] = sum / static_cast<T>(count);
            }
          }
    }
  }

  const Shape xshape = xv.shape();
  if (kind == PoolKind::kMax) {
    return x.tape->record("max_pool", std::move(out), {x.id},
                          [x, xshape, argmax](Tape<T>& t, const Tensor<T>& gy) {
                            Tensor<T> gx(xshape);
                            T* pgx = gx.data();
                            const T* pg = gy.cdata();
                            for (size_t o = 0; o < argmax->size(); ++o)
                              pgx[(*argmax)[o]] += pg[o];
                            t.accumulate(x.id, std::move(gx));
                          });
  }
  return x.tape->record(
      "avg_pool", std::move(out), {x.id},
      [x, xshape, g, window, stride, N, H, W, C](Tape<T>& t, const Tensor<T>& gy) {
        const int64_t OH = g.out_h, OW = g.out_w;
        Tensor<T> gx(xshape);
        T* pgx = gx.data();
        const T* pg = gy.cdata();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow) {
              int64_t count = 0;
              for (int64_t ki = 0; ki < window; ++ki) {
                const int64_t ih = oh * stride - g.pad_top + ki;
                if (ih < 0 || ih >= H) continue;
                for (int64_t kj = 0; kj < window; ++kj) {
                  const int64_t iw = ow * stride - g.pad_left + kj;
                  if (iw >= 0 && iw < W) ++count;
                }
              }
              for (int64_t c = 0; c < C; ++c) {
                const T share = pg[((n * OH + oh) * OW + ow) * C + c] / static_cast<T>(count);
                for (int64_t ki = 0; ki < window; ++ki) {
                  const int64_t ih = oh * stride - g.pad_top + ki;
                  if (ih < 0 || ih >= H) continue;
                  for (int64_t kj = 0; kj < window; ++kj) {
                    const int64_t iw = ow * stride - g.pad_left + kj;
                    if (iw < 0 || iw >= W) continue;
                    pgx[((n * H + ih) * W + iw) * C + c] += share;
                  }
                }
              }
            }
        t.accumulate(x.id, std::move(gx));
      });
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, int64_t out_h, int64_t out_w) {
  const Tensor<T> xv = x.val();
  require_rank(xv, 4, "upsample input");
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("upsample target must be positive");
  const int64_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  auto rmap = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out_h));
  auto cmap = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out_w));
  for (int64_t i = 0; i < out_h; ++i) (*rmap)[static_cast<size_t>(i)] = std::min(i * H / out_h, H - 1);
  for (int64_t j = 0; j < out_w; ++j) (*cmap)[static_cast<size_t>(j)] = std::min(j * W / out_w, W - 1);

  Tensor<T> out({N, out_h, out_w, C});
  {
    const T* px = xv.cdata();
    T* po = out.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < out_h; ++i) {
        const T* srow = px + (n * H + (*rmap)[static_cast<size_t>(i)]) * W * C;
        T* orow = po + (n * out_h + i) * out_w * C;
        for (int64_t j = 0; j < out_w; ++j)
          std::memcpy(orow + j * C, srow + (*cmap)[static_cast<size_t>(j)] * C,
                      sizeof(T) * static_cast<size_t>(C));
      }
  }
  const Shape xshape = xv.shape();
  return x.tape->record("upsample_nearest", std::move(out), {x.id},
                        [x, xshape, rmap, cmap, N, H, W, C, out_h, out_w](Tape<T>& t,
                                                                          const Tensor<T>& gy) {
                          Tensor<T> gx(xshape);
                          T* pgx = gx.data();
                          const T* pg = gy.cdata();
                          for (int64_t n = 0; n < N; ++n)
                            for (int64_t i = 0; i < out_h; ++i) {
                              T* drow = pgx + (n * H + (*rmap)[static_cast<size_t>(i)]) * W * C;
                              const T* grow = pg + (n * out_h + i) * out_w * C;
                              for (int64_t j = 0; j < out_w; ++j) {
                                T* dst = drow + (*cmap)[static_cast<size_t>(j)] * C;
                                const T* src = grow + j * C;
                                for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
                              }
                            }
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> upsample2x(Var<T> x) {
  const Tensor<T>& xv = x.val();
  require_rank(xv, 4, "upsample input");
  return upsample_nearest(x, xv.dim(1) * 2, xv.dim(2) * 2);
}

template <typename T>
Var<T> pad_replicate(Var<T> x, int p) {
  const Tensor<T> xv = x.val();
  require_rank(xv, 4, "pad_replicate input");
  if (p < 0) throw std::invalid_argument("negative padding");
  if (p == 0) return x;
  const int64_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const int64_t OH = H + 2 * p, OW = W + 2 * p;
  Tensor<T> out({N, OH, OW, C});
  {
    const T* px = xv.cdata();
    T* po = out.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < OH; ++i) {
        const int64_t si = std::clamp<int64_t>(i - p, 0, H - 1);
        const T* srow = px + (n * H + si) * W * C;
        T* orow = po + (n * OH + i) * OW * C;
        for (int64_t j = 0; j < OW; ++j) {
          const int64_t sj = std::clamp<int64_t>(j - p, 0, W - 1);
          std::memcpy(orow + j * C, srow + sj * C, sizeof(T) * static_cast<size_t>(C));
        }
      }
  }
  const Shape xshape = xv.shape();
  return x.tape->record("pad_replicate", std::move(out), {x.id},
                        [x, xshape, p, N, H, W, C](Tape<T>& t, const Tensor<T>& gy) {
                          const int64_t OH = H + 2 * p, OW = W + 2 * p;
                          Tensor<T> gx(xshape);
                          T* pgx = gx.data();
                          const T* pg = gy.cdata();
                          for (int64_t n = 0; n < N; ++n)
                            for (int64_t i = 0; i < OH; ++i) {
                              const int64_t si = std::clamp<int64_t>(i - p, 0, H - 1);
                              T* drow = pgx + (n * H + si) * W * C;
                              const T* grow = pg + (n * OH + i) * OW * C;
                              for (int64_t j = 0; j < OW; ++j) {
                                const int64_t sj = std::clamp<int64_t>(j - p, 0, W - 1);
                                T* dst = drow + sj * C;
                                const T* src = grow + j * C;
                                for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
                              }
                            }
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> fixed_corr3x3(Var<T> x, const std::array<double, 9>& kernel) {
  const Tensor<T> xv = x.val();
  require_rank(xv, 4, "fixed_corr3x3 input");
  const int64_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  if (H < 3 || W < 3)
    throw std::invalid_argument("fixed_corr3x3: spatial extent " + std::to_string(H) + "x" +
                                std::to_string(W) + " below 3x3");
  const int64_t OH = H - 2, OW = W - 2;
  std::array<T, 9> k;
  for (int i = 0; i < 9; ++i) k[static_cast<size_t>(i)] = static_cast<T>(kernel[static_cast<size_t>(i)]);

  Tensor<T> out({N, OH, OW, C});
  {
    const T* px = xv.cdata();
    T* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
      const T* xn = px + n * H * W * C;
      T* on = po + n * OH * OW * C;
#pragma omp parallel for if (OH * OW * C > 16384) schedule(static)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          T* ocell = on + (oh * OW + ow) * C;
          std::fill(ocell, ocell + C, T(0));
          for (int64_t ki = 0; ki < 3; ++ki)
            for (int64_t kj = 0; kj < 3; ++kj) {
              const T kv = k[static_cast<size_t>(ki * 3 + kj)];
              if (kv == T(0)) continue;
              const T* xc = xn + ((oh + ki) * W + (ow + kj)) * C;
              for (int64_t c = 0; c < C; ++c) ocell[c] += kv * xc[c];
            }
        }
    }
  }
  const Shape xshape = xv.shape();
  return x.tape->record(
      "fixed_corr3x3", std::move(out), {x.id},
      [x, xshape, k, N, H, W, C](Tape<T>& t, const Tensor<T>& gy) {
        const int64_t OH = H - 2, OW = W - 2;
        Tensor<T> gx(xshape);
        T* pgx = gx.data();
        const T* pg = gy.cdata();
        for (int64_t n = 0; n < N; ++n) {
          const T* gn = pg + n * OH * OW * C;
          T* gxn = pgx + n * H * W * C;
          for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow) {
              const T* gcell = gn + (oh * OW + ow) * C;
              for (int64_t ki = 0; ki < 3; ++ki)
                for (int64_t kj = 0; kj < 3; ++kj) {
                  const T kv = k[static_cast<size_t>(ki * 3 + kj)];
                  if (kv == T(0)) continue;
                  T* dst = gxn + ((oh + ki) * W + (ow + kj)) * C;
                  for (int64_t c = 0; c < C; ++c) dst[c] += kv * gcell[c];
                }
            }
        }
        t.accumulate(x.id, std::move(gx));
      });
}

namespace {

template <typename T>
Var<T> norm_core(Var<T> x, const std::vector<int>& axes, T eps) {
  auto mu = ops::reduce(ops::Reduce::kMean, x, axes, true);
  auto centered = ops::sub(x, mu);
  auto var = ops::reduce(ops::Reduce::kMean, ops::mul(centered, centered), axes, true);
  return ops::div(centered, ops::sqrt(ops::add_scalar(var, eps)));
}

}  // namespace

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> scale, Var<T> shift, T eps) {
  require_rank(x.val(), 4, "layer_norm input");
  auto normed = norm_core(x, {1, 2, 3}, eps);
  return ops::add(ops::mul(normed, scale), shift);
}

template <typename T>
Var<T> group_norm(Var<T> x, Var<T> scale, Var<T> shift, int groups, T eps) {
  const Tensor<T>& xv = x.val();
  require_rank(xv, 4, "group_norm input");
  const int64_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  if (groups <= 0 || C % groups != 0)
    throw std::invalid_argument("group_norm: groups " + std::to_string(groups) +
                                " do not divide channels " + std::to_string(C));
  const int64_t gc = C / groups;
  std::vector<Var<T>> parts;
  parts.reserve(static_cast<size_t>(groups));
  for (int gi = 0; gi < groups; ++gi) {
    auto part = ops::slice(x, {0, 0, 0, gi * gc}, {N, H, W, gc});
    parts.push_back(norm_core(part, {1, 2, 3}, eps));
  }
  auto normed = groups == 1 ? parts[0] : ops::concat(parts, 3);
  return ops::add(ops::mul(normed, scale), shift);
}

int group_count(int64_t channels, int preferred) {
  for (int g = std::min<int64_t>(preferred, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

int64_t se_bottleneck(int64_t channels, int reduction_ratio) {
  return std::max<int64_t>(1, channels / reduction_ratio);
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  return ops::add(ops::matmul(x, w), b);
}

template <typename T>
Var<T> se_block(Var<T> x, Var<T> w1, Var<T> b1, Var<T> w2, Var<T> b2) {
  const Tensor<T>& xv = x.val();
  require_rank(xv, 4, "se_block input");
  const int64_t N = xv.dim(0), C = xv.dim(3);
  auto gap = ops::reduce(ops::Reduce::kMean, x, {1, 2}, true);
  auto flat = ops::reshape(gap, {N, C});
  auto hidden = ops::relu(dense(flat, w1, b1));
  auto gate = ops::sigmoid(dense(hidden, w2, b2));
  return ops::mul(x, ops::reshape(gate, {N, 1, 1, C}));
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, std::mt19937& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout rate " + std::to_string(rate) + " outside [0,1)");
  if (!training || rate == 0.0) return x;
  const Tensor<T>& xv = x.val();
  const double keep = 1.0 - rate;
  const T scale = static_cast<T>(1.0 / keep);
  Tensor<T> mask(xv.shape());
  Tensor<T> out(xv.shape());
  {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const T* px = xv.cdata();
    T* pm = mask.data();
    T* po = out.data();
    const int64_t n = xv.numel();
    for (int64_t i = 0; i < n; ++i) {
      pm[i] = u(rng) < keep ? scale : T(0);
      po[i] = px[i] * pm[i];
    }
  }
  return x.tape->record("dropout", std::move(out), {x.id},
                        [x, mask](Tape<T>& t, const Tensor<T>& gy) {
                          Tensor<T> gx(mask.shape());
                          const T* pm = mask.cdata();
                          const T* pg = gy.cdata();
                          T* pgx = gx.data();
                          const int64_t n = gx.numel();
                          for (int64_t i = 0; i < n; ++i) pgx[i] = pg[i] * pm[i];
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Tensor<T> he_uniform(const Shape& shape, int64_t fan_in, std::mt19937& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor<T> t(shape);
  T* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(u(rng));
  return t;
}

template <typename T>
Tensor<T> xavier_uniform(const Shape& shape, int64_t fan_in, int64_t fan_out, std::mt19937& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor<T> t(shape);
  T* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(u(rng));
  return t;
}

#define MNETSAT_INSTANTIATE_NN(T)                                                       \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, const ConvSpec&);                   \
  template Var<T> depthwise_conv2d<T>(Var<T>, Var<T>, Var<T>, const ConvSpec&);         \
  template Var<T> pool<T>(Var<T>, PoolKind, int, int, Padding);                         \
  template Var<T> upsample_nearest<T>(Var<T>, int64_t, int64_t);                        \
  template Var<T> upsample2x<T>(Var<T>);                                                \
  template Var<T> pad_replicate<T>(Var<T>, int);                                        \
  template Var<T> fixed_corr3x3<T>(Var<T>, const std::array<double, 9>&);               \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                             \
  template Var<T> group_norm<T>(Var<T>, Var<T>, Var<T>, int, T);                        \
  template Var<T> dense<T>(Var<T>, Var<T>, Var<T>);                                     \
  template Var<T> se_block<T>(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>);                  \
  template Var<T> dropout<T>(Var<T>, double, bool, std::mt19937&);                      \
  template Tensor<T> he_uniform<T>(const Shape&, int64_t, std::mt19937&);               \
  template Tensor<T> xavier_uniform<T>(const Shape&, int64_t, int64_t, std::mt19937&);

MNETSAT_INSTANTIATE_NN(float)
MNETSAT_INSTANTIATE_NN(double)

}  // namespace mnetsat::nn
