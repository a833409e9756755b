#pragma once

#include <random>
#include <string>
#include <vector>

#include "mnetsat/nn.hpp"
#include "mnetsat/params.hpp"

namespace mnetsat::hmatt {

struct HMAttConfig {
  std::vector<int> msfa_dilations{1, 6, 12, 18};
  std::vector<int> ceaspp_dilations{1, 4, 8, 12};
  int heads = 8;
  int spatial_reduction = 2;
  int compression_factor = 4;
  int ffn_expansion = 2;
  int msfa_fusion_kernel = 7;
  int seat_conv_dilation = 2;
  double dropout_rate = 0.1;
};

// Structural toggles inside the bridge blocks.
struct BridgeFlags {
  bool msfa_se = true;
  bool seat_ln = true;
  bool seat_gap = true;
  bool ceaspp_cc = true;
  bool ceaspp_icf = true;
};

// Four parallel dilated 3x3 convs (C filters each), per-branch SE, concat,
// ReLU, KxK fusion conv back to C, softmax over channels.
template <typename T>
void msfa_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels,
               const HMAttConfig& cfg, const BridgeFlags& flags, std::mt19937& rng);
template <typename T>
Var<T> msfa_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                    const HMAttConfig& cfg, const BridgeFlags& flags);

// LN -> dilated 3x3 conv -> average-pool reduction, shared for Q/K/V, then
// per-head scaled dot-product attention over the token grid; output upsampled
// back and residually added to x.
template <typename T>
void mhseat_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels,
                 const HMAttConfig& cfg, const BridgeFlags& flags, std::mt19937& rng);
template <typename T>
Var<T> mhseat_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                      const HMAttConfig& cfg, const BridgeFlags& flags);

// MHSEAt, dropout, position-wise two-layer FFN, residual.
template <typename T>
void seat_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels,
               const HMAttConfig& cfg, const BridgeFlags& flags, std::mt19937& rng);
template <typename T>
Var<T> seat_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                    const HMAttConfig& cfg, const BridgeFlags& flags, bool training,
                    std::mt19937& dropout_rng);

// Channel compression, five parallel branches (four depthwise atrous convs +
// max-pool/pointwise), concat, 1x1 fusion back to C, gated residual.
template <typename T>
void ceaspp_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels,
                 const HMAttConfig& cfg, const BridgeFlags& flags, std::mt19937& rng);
template <typename T>
Var<T> ceaspp_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                      const HMAttConfig& cfg, const BridgeFlags& flags);

}  // namespace mnetsat::hmatt
