#include "mnetsat/hmatt.hpp"

#include <cmath>

namespace mnetsat::hmatt {

namespace {

constexpr int kSeRatio = 16;
constexpr int kGnGroups = 8;

template <typename T>
void se_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels,
             std::mt19937& rng) {
  const int64_t cb = nn::se_bottleneck(channels, kSeRatio);
  params.add(prefix + ".fc1.w", nn::he_uniform<T>({channels, cb}, channels, rng));
  params.add(prefix + ".fc1.b", Tensor<T>({1, cb}));
  params.add(prefix + ".fc2.w", nn::xavier_uniform<T>({cb, channels}, cb, channels, rng));
  params.add(prefix + ".fc2.b", Tensor<T>({1, channels}));
}

template <typename T>
Var<T> se_apply(const VarMap<T>& vars, const std::string& prefix, Var<T> x) {
  return nn::se_block(x, vars(prefix + ".fc1.w"), vars(prefix + ".fc1.b"),
                      vars(prefix + ".fc2.w"), vars(prefix + ".fc2.b"));
}

template <typename T>
void gn_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels) {
  params.add(prefix + ".scale", Tensor<T>::full({1, 1, 1, channels}, T(1)));
  params.add(prefix + ".shift", Tensor<T>({1, 1, 1, channels}));
}

template <typename T>
Var<T> gn_apply(const VarMap<T>& vars, const std::string& prefix, Var<T> x) {
  const int groups = nn::group_count(x.val().dim(3), kGnGroups);
  return nn::group_norm(x, vars(prefix + ".scale"), vars(prefix + ".shift"), groups);
}

}  // namespace

template <typename T>
void msfa_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels,
               const HMAttConfig& cfg, const BridgeFlags& flags, std::mt19937& rng) {
  for (size_t j = 0; j < cfg.msfa_dilations.size(); ++j) {
    const std::string bp = prefix + ".branch" + std::to_string(j);
    params.add(bp + ".conv.w", nn::he_uniform<T>({3, 3, channels, channels}, 9 * channels, rng));
    params.add(bp + ".conv.b", Tensor<T>({channels}));
    if (flags.msfa_se) se_init(params, bp + ".se", channels, rng);
  }
  const int64_t k = cfg.msfa_fusion_kernel;
  const int64_t cin = channels * static_cast<int64_t>(cfg.msfa_dilations.size());
  params.add(prefix + ".fuse.w", nn::he_uniform<T>({k, k, cin, channels}, k * k * cin, rng));
  params.add(prefix + ".fuse.b", Tensor<T>({channels}));
}

template <typename T>
Var<T> msfa_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                    const HMAttConfig& cfg, const BridgeFlags& flags) {
  std::vector<Var<T>> branches;
  branches.reserve(cfg.msfa_dilations.size());
  for (size_t j = 0; j < cfg.msfa_dilations.size(); ++j) {
    const std::string bp = prefix + ".branch" + std::to_string(j);
    nn::ConvSpec spec;
    spec.dilation = cfg.msfa_dilations[j];
    auto y = nn::conv2d(x, vars(bp + ".conv.w"), vars(bp + ".conv.b"), spec);
    if (flags.msfa_se) y = se_apply(vars, bp + ".se", y);
    branches.push_back(y);
  }
  auto cat = ops::relu(ops::concat(branches, 3));
  nn::ConvSpec fuse;
  fuse.kernel_h = fuse.kernel_w = cfg.msfa_fusion_kernel;
  auto fused = nn::conv2d(cat, vars(prefix + ".fuse.w"), vars(prefix + ".fuse.b"), fuse);
  return ops::softmax(fused, 3);
}

template <typename T>
void mhseat_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels,
                 const HMAttConfig& cfg, const BridgeFlags& flags, std::mt19937& rng) {
  if (flags.seat_ln) {
    params.add(prefix + ".ln.scale", Tensor<T>::full({1, 1, 1, channels}, T(1)));
    params.add(prefix + ".ln.shift", Tensor<T>({1, 1, 1, channels}));
  }
  params.add(prefix + ".conv.w", nn::he_uniform<T>({3, 3, channels, channels}, 9 * channels, rng));
  params.add(prefix + ".conv.b", Tensor<T>({channels}));
  params.add(prefix + ".wq", nn::xavier_uniform<T>({channels, channels}, channels, channels, rng));
  params.add(prefix + ".wk", nn::xavier_uniform<T>({channels, channels}, channels, channels, rng));
  params.add(prefix + ".wv", nn::xavier_uniform<T>({channels, channels}, channels, channels, rng));
  (void)cfg;
}

template <typename T>
Var<T> mhseat_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                      const HMAttConfig& cfg, const BridgeFlags& flags) {
  const Tensor<T>& xv = x.val();
  const int64_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  if (cfg.heads <= 0 || C % cfg.heads != 0)
    throw std::invalid_argument("mhseat: heads " + std::to_string(cfg.heads) +
                                " do not divide channels " + std::to_string(C));
  const int R = cfg.spatial_reduction;
  if (flags.seat_gap && (R > H || R > W))
    throw std::invalid_argument("mhseat: spatial reduction " + std::to_string(R) +
                                " larger than grid " + std::to_string(H) + "x" +
                                std::to_string(W));

  auto y = x;
  if (flags.seat_ln)
    y = nn::layer_norm(y, vars(prefix + ".ln.scale"), vars(prefix + ".ln.shift"));
  nn::ConvSpec spec;
  spec.dilation = cfg.seat_conv_dilation;
  y = nn::conv2d(y, vars(prefix + ".conv.w"), vars(prefix + ".conv.b"), spec);
  if (flags.seat_gap) y = nn::pool(y, nn::PoolKind::kAvg, R, R, nn::Padding::kValid);

  const int64_t th = y.val().dim(1), tw = y.val().dim(2);
  const int64_t tokens = th * tw;
  auto tok = ops::reshape(y, {N * tokens, C});
  auto q_all = ops::matmul(tok, vars(prefix + ".wq"));
  auto k_all = ops::matmul(tok, vars(prefix + ".wk"));
  auto v_all = ops::matmul(tok, vars(prefix + ".wv"));

  const int64_t heads = cfg.heads;
  const int64_t hd = C / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  std::vector<Var<T>> per_batch;
  per_batch.reserve(static_cast<size_t>(N));
  for (int64_t n = 0; n < N; ++n) {
    std::vector<Var<T>> per_head;
    per_head.reserve(static_cast<size_t>(heads));
    for (int64_t h = 0; h < heads; ++h) {
      auto q = ops::slice(q_all, {n * tokens, h * hd}, {tokens, hd});
      auto k = ops::slice(k_all, {n * tokens, h * hd}, {tokens, hd});
      auto v = ops::slice(v_all, {n * tokens, h * hd}, {tokens, hd});
      auto scores = ops::mul_scalar(ops::matmul(q, ops::transpose2d(k)), scale);
      auto attn = ops::softmax(scores, 1);
      per_head.push_back(ops::matmul(attn, v));
    }
    auto merged = heads == 1 ? per_head[0] : ops::concat(per_head, 1);
    per_batch.push_back(ops::reshape(merged, {1, th, tw, C}));
  }
  auto att = N == 1 ? per_batch[0] : ops::concat(per_batch, 0);
  if (flags.seat_gap) att = nn::upsample_nearest(att, H, W);
  return ops::add(att, x);
}

template <typename T>
void seat_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels,
               const HMAttConfig& cfg, const BridgeFlags& flags, std::mt19937& rng) {
  mhseat_init(params, prefix + ".att", channels, cfg, flags, rng);
  const int64_t ec = channels * cfg.ffn_expansion;
  params.add(prefix + ".ffn1.w", nn::he_uniform<T>({channels, ec}, channels, rng));
  params.add(prefix + ".ffn1.b", Tensor<T>({1, ec}));
  params.add(prefix + ".ffn2.w", nn::he_uniform<T>({ec, channels}, ec, rng));
  params.add(prefix + ".ffn2.b", Tensor<T>({1, channels}));
}

template <typename T>
Var<T> seat_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                    const HMAttConfig& cfg, const BridgeFlags& flags, bool training,
                    std::mt19937& dropout_rng) {
  auto att = mhseat_forward(vars, prefix + ".att", x, cfg, flags);
  const Tensor<T>& av = att.val();
  const int64_t N = av.dim(0), H = av.dim(1), W = av.dim(2), C = av.dim(3);
  auto dropped = nn::dropout(att, cfg.dropout_rate, training, dropout_rng);
  auto flat = ops::reshape(dropped, {N * H * W, C});
  auto h1 = ops::relu(nn::dense(flat, vars(prefix + ".ffn1.w"), vars(prefix + ".ffn1.b")));
  auto h2 = nn::dense(h1, vars(prefix + ".ffn2.w"), vars(prefix + ".ffn2.b"));
  auto ffn = ops::reshape(h2, {N, H, W, C});
  return ops::add(att, ffn);
}

template <typename T>
void ceaspp_init(ParamBundle<T>& params, const std::string& prefix, int64_t channels,
                 const HMAttConfig& cfg, const BridgeFlags& flags, std::mt19937& rng) {
  int64_t cc = channels;
  if (flags.ceaspp_cc) {
    if (cfg.compression_factor <= 0 || channels % cfg.compression_factor != 0)
      throw std::invalid_argument("ceaspp: compression factor " +
                                  std::to_string(cfg.compression_factor) +
                                  " does not divide channels " + std::to_string(channels));
    cc = channels / cfg.compression_factor;
    params.add(prefix + ".compress.w", nn::he_uniform<T>({1, 1, channels, cc}, channels, rng));
    params.add(prefix + ".compress.b", Tensor<T>({cc}));
    gn_init(params, prefix + ".compress.gn", cc);
  }
  for (size_t j = 0; j < cfg.ceaspp_dilations.size(); ++j) {
    const std::string bp = prefix + ".branch" + std::to_string(j);
    params.add(bp + ".dw.w", nn::he_uniform<T>({3, 3, cc}, 9, rng));
    params.add(bp + ".dw.b", Tensor<T>({cc}));
    gn_init(params, bp + ".gn", cc);
  }
  params.add(prefix + ".pool.pw.w", nn::he_uniform<T>({1, 1, cc, cc}, cc, rng));
  params.add(prefix + ".pool.pw.b", Tensor<T>({cc}));
  gn_init(params, prefix + ".pool.gn", cc);
  const int64_t cat_c = cc * static_cast<int64_t>(cfg.ceaspp_dilations.size() + 1);
  params.add(prefix + ".fuse.w", nn::he_uniform<T>({1, 1, cat_c, channels}, cat_c, rng));
  params.add(prefix + ".fuse.b", Tensor<T>({channels}));
  gn_init(params, prefix + ".fuse.gn", channels);
}

template <typename T>
Var<T> ceaspp_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                      const HMAttConfig& cfg, const BridgeFlags& flags) {
  auto h = x;
  if (flags.ceaspp_cc) {
    const int64_t C = x.val().dim(3);
    if (cfg.compression_factor <= 0 || C % cfg.compression_factor != 0)
      throw std::invalid_argument("ceaspp: compression factor " +
                                  std::to_string(cfg.compression_factor) +
                                  " does not divide channels " + std::to_string(C));
    nn::ConvSpec one;
    one.kernel_h = one.kernel_w = 1;
    h = nn::conv2d(h, vars(prefix + ".compress.w"), vars(prefix + ".compress.b"), one);
    h = ops::relu(gn_apply(vars, prefix + ".compress.gn", h));
  }
  std::vector<Var<T>> branches;
  branches.reserve(cfg.ceaspp_dilations.size() + 1);
  for (size_t j = 0; j < cfg.ceaspp_dilations.size(); ++j) {
    const std::string bp = prefix + ".branch" + std::to_string(j);
    nn::ConvSpec spec;
    spec.dilation = cfg.ceaspp_dilations[j];
    auto b = nn::depthwise_conv2d(h, vars(bp + ".dw.w"), vars(bp + ".dw.b"), spec);
    branches.push_back(ops::relu(gn_apply(vars, bp + ".gn", b)));
  }
  {
    auto p = nn::pool(h, nn::PoolKind::kMax, 2, 1, nn::Padding::kSame);
    nn::ConvSpec one;
    one.kernel_h = one.kernel_w = 1;
    p = nn::conv2d(p, vars(prefix + ".pool.pw.w"), vars(prefix + ".pool.pw.b"), one);
    branches.push_back(ops::relu(gn_apply(vars, prefix + ".pool.gn", p)));
  }
  auto cat = ops::concat(branches, 3);
  nn::ConvSpec one;
  one.kernel_h = one.kernel_w = 1;
  auto gate = nn::conv2d(cat, vars(prefix + ".fuse.w"), vars(prefix + ".fuse.b"), one);
  gate = ops::relu(gn_apply(vars, prefix + ".fuse.gn", gate));
  if (!flags.ceaspp_icf) return gate;
  return ops::add(ops::mul(x, gate), x);
}

#define MNETSAT_INSTANTIATE_HMATT(T)                                                          \
  template void msfa_init<T>(ParamBundle<T>&, const std::string&, int64_t, const HMAttConfig&, \
                             const BridgeFlags&, std::mt19937&);                              \
  template Var<T> msfa_forward<T>(const VarMap<T>&, const std::string&, Var<T>,               \
                                  const HMAttConfig&, const BridgeFlags&);                    \
  template void mhseat_init<T>(ParamBundle<T>&, const std::string&, int64_t,                 \
                               const HMAttConfig&, const BridgeFlags&, std::mt19937&);        \
  template Var<T> mhseat_forward<T>(const VarMap<T>&, const std::string&, Var<T>,             \
                                    const HMAttConfig&, const BridgeFlags&);                  \
  template void seat_init<T>(ParamBundle<T>&, const std::string&, int64_t, const HMAttConfig&, \
                             const BridgeFlags&, std::mt19937&);                              \
  template Var<T> seat_forward<T>(const VarMap<T>&, const std::string&, Var<T>,               \
                                  const HMAttConfig&, const BridgeFlags&, bool, std::mt19937&); \
  template void ceaspp_init<T>(ParamBundle<T>&, const std::string&, int64_t,                  \
                               const HMAttConfig&, const BridgeFlags&, std::mt19937&);        \
  template Var<T> ceaspp_forward<T>(const VarMap<T>&, const std::string&, Var<T>,             \
                                    const HMAttConfig&, const BridgeFlags&);

MNETSAT_INSTANTIATE_HMATT(float)
MNETSAT_INSTANTIATE_HMATT(double)

}  // namespace mnetsat::hmatt
