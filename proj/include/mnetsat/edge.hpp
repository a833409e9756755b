#pragma once

#include <array>

#include "mnetsat/nn.hpp"
#include "mnetsat/params.hpp"

namespace mnetsat::edge {

inline constexpr std::array<double, 9> kSobelX = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline constexpr std::array<double, 9> kSobelY = {-1, -2, -1, 0, 0, 0, 1, 2, 1};

/// Single-channel gradient magnitude map, non-negative, zero on constant input.
template <typename T>
struct EdgeMap {
  Tensor<T> magnitude;  // N x H x W x 1
};

// sqrt(Sx^2 + Sy^2 + 1e-12) per channel with replicate padding, then mean
// across channels. The fixed kernels carry no gradient; gradient flows to x.
template <typename T>
Var<T> sobel_magnitude(Var<T> x);

// Value-only convenience (runs a throwaway tape).
template <typename T>
EdgeMap<T> sobel_magnitude_value(const Tensor<T>& x);

// Two 3x3 stride-1 same-padding convs, each followed by ReLU; when
// sobel_enabled the input's edge map is broadcast-added across the output
// channels.
template <typename T>
Var<T> egfe_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                    bool sobel_enabled);

template <typename T>
void egfe_init(ParamBundle<T>& params, const std::string& prefix, int64_t in_channels,
               int64_t filters, std::mt19937& rng);

}  // namespace mnetsat::edge
