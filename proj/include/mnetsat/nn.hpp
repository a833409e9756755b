#pragma once

#include <array>
#include <random>

#include "mnetsat/ops.hpp"

namespace mnetsat::nn {

enum class Padding { kSame, kValid };
enum class PoolKind { kMax, kAvg };

struct ConvSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::kSame;
  int filters = 0;
  bool depthwise = false;

  int effective_h() const { return dilation * (kernel_h - 1) + 1; }
  int effective_w() const { return dilation * (kernel_w - 1) + 1; }
};

struct ConvGeom {
  int64_t out_h = 0, out_w = 0;
  int64_t pad_top = 0, pad_left = 0;
};

// Output extents and padding offsets for a conv/pool window; same padding
// yields ceil(in/stride). Throws when the effective kernel exceeds the padded
// input.
ConvGeom conv_geometry(int64_t in_h, int64_t in_w, int eff_h, int eff_w, int stride,
                       Padding padding);

// x: NxHxWxCin, w: kh x kw x Cin x Cout, b: [Cout]. Cross-correlation.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, const ConvSpec& spec);

// x: NxHxWxC, w: kh x kw x C, b: [C]. One filter per channel.
template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> w, Var<T> b, const ConvSpec& spec);

template <typename T>
Var<T> pool(Var<T> x, PoolKind kind, int window, int stride, Padding padding);

// Nearest-neighbor resize to (out_h, out_w); exact fan-out when upscaling by
// an integer factor.
template <typename T>
Var<T> upsample_nearest(Var<T> x, int64_t out_h, int64_t out_w);

template <typename T>
Var<T> upsample2x(Var<T> x);

// Edge-replicating spatial pad by `p` on each side.
template <typename T>
Var<T> pad_replicate(Var<T> x, int p);

// Per-channel correlation with a fixed (non-learnable) 3x3 kernel, valid
// padding. Gradient flows to x only.
template <typename T>
Var<T> fixed_corr3x3(Var<T> x, const std::array<double, 9>& kernel);

// Zero-mean/unit-variance per sample over (H,W,C), then per-channel affine.
// scale/shift have shape 1x1x1xC.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> scale, Var<T> shift, T eps = T(1e-5));

// Group normalization over channel groups; groups must divide C.
template <typename T>
Var<T> group_norm(Var<T> x, Var<T> scale, Var<T> shift, int groups, T eps = T(1e-5));

// Largest divisor of `channels` that is <= preferred.
int group_count(int64_t channels, int preferred);

// y = x * sigmoid(fc2(relu(fc1(gap(x))))), gate broadcast over H,W.
// w1: [C, Cb], b1: [1, Cb], w2: [Cb, C], b2: [1, C].
template <typename T>
Var<T> se_block(Var<T> x, Var<T> w1, Var<T> b1, Var<T> w2, Var<T> b2);

int64_t se_bottleneck(int64_t channels, int reduction_ratio);

// x: rank-2 [rows, in]; w: [in, out]; b: [1, out].
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b);

// Inverted-keep-probability dropout; identity when not training or rate == 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, std::mt19937& rng);

template <typename T>
Tensor<T> he_uniform(const Shape& shape, int64_t fan_in, std::mt19937& rng);

template <typename T>
Tensor<T> xavier_uniform(const Shape& shape, int64_t fan_in, int64_t fan_out, std::mt19937& rng);

}  // namespace mnetsat::nn
