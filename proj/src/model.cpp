#include "mnetsat/model.hpp"

#include <sstream>

namespace mnetsat::model {

void ModelConfig::validate() const {
  if (base_filters < 1) throw std::invalid_argument("base_filters must be >= 1");
  if (stages < 1) throw std::invalid_argument("stages must be >= 1");
  const int64_t div = int64_t(1) << stages;
  if (input_h <= 0 || input_w <= 0 || input_h % div != 0 || input_w % div != 0)
    throw std::invalid_argument("input " + std::to_string(input_h) + "x" +
                                std::to_string(input_w) + " not divisible by 2^stages = " +
                                std::to_string(div));
  const int64_t cb = bottleneck_channels();
  if (ablation.use_seat && (hmatt.heads <= 0 || cb % hmatt.heads != 0))
    throw std::invalid_argument("heads " + std::to_string(hmatt.heads) +
                                " do not divide bottleneck channels " + std::to_string(cb));
  if (ablation.use_ceaspp && ablation.ceaspp_cc &&
      (hmatt.compression_factor <= 0 || cb % hmatt.compression_factor != 0))
    throw std::invalid_argument("compression factor " + std::to_string(hmatt.compression_factor) +
                                " does not divide bottleneck channels " + std::to_string(cb));
  if (hmatt.dropout_rate < 0.0 || hmatt.dropout_rate >= 1.0)
    throw std::invalid_argument("dropout rate outside [0,1)");
  if (hmatt.spatial_reduction < 1) throw std::invalid_argument("spatial_reduction must be >= 1");
  if (hmatt.ffn_expansion < 1) throw std::invalid_argument("ffn_expansion must be >= 1");
  for (int d : hmatt.msfa_dilations)
    if (d < 1) throw std::invalid_argument("msfa dilation must be >= 1");
  for (int d : hmatt.ceaspp_dilations)
    if (d < 1) throw std::invalid_argument("ceaspp dilation must be >= 1");
}

int64_t ModelConfig::encoder_filters(int stage) const {
  return static_cast<int64_t>(base_filters) << (stage - 1);
}

int64_t ModelConfig::decoder_filters(int stage) const {
  if (stage >= 2) return encoder_filters(stage - 1);
  return std::max<int64_t>(1, base_filters / 2);
}

hmatt::BridgeFlags ModelConfig::bridge_flags() const {
  hmatt::BridgeFlags f;
  f.msfa_se = ablation.msfa_se;
  f.seat_ln = ablation.seat_ln;
  f.seat_gap = ablation.seat_gap;
  f.ceaspp_cc = ablation.ceaspp_cc;
  f.ceaspp_icf = ablation.ceaspp_icf;
  return f;
}

const ShapeTrace::Entry* ShapeTrace::find(const std::string& layer) const {
  for (const auto& e : entries)
    if (e.layer == layer) return &e;
  return nullptr;
}

std::string ShapeTrace::to_csv() const {
  std::ostringstream os;
  os << "layer,H,W,C\n";
  for (const auto& e : entries) os << e.layer << ',' << e.h << ',' << e.w << ',' << e.c << '\n';
  return os.str();
}

ShapeTrace trace_shapes(const ModelConfig& cfg) {
  cfg.validate();
  ShapeTrace tr;
  auto fail = [](const std::string& layer, const std::string& why) {
    throw std::invalid_argument("shape trace failed at " + layer + ": " + why);
  };

  int64_t h = cfg.input_h, w = cfg.input_w;
  struct Skip {
    int64_t h, w, c;
  };
  std::vector<Skip> skips;
  int64_t c = 3;
  for (int i = 1; i <= cfg.stages; ++i) {
    const std::string egfe = "EGFE_" + std::to_string(i);
    if (cfg.ablation.egfe_sobel && (h < 3 || w < 3))
      fail(egfe, "spatial extent below 3x3 for the edge operator");
    c = cfg.encoder_filters(i);
    tr.entries.push_back({egfe, h, w, c});
    skips.push_back({h, w, c});
    const std::string down = "Down_" + std::to_string(i);
    if (h < 2 || w < 2) fail(down, "extent below the 2x2 pooling window");
    h /= 2;
    w /= 2;
    tr.entries.push_back({down, h, w, c});
  }

  if (cfg.ablation.use_msfa) tr.entries.push_back({"MSFA", h, w, c});
  if (cfg.ablation.use_seat) {
    if (cfg.ablation.seat_gap && (cfg.hmatt.spatial_reduction > h || cfg.hmatt.spatial_reduction > w))
      fail("SEAt", "spatial reduction larger than the bottleneck grid");
    tr.entries.push_back({"SEAt", h, w, c});
  }
  if (cfg.ablation.use_ceaspp) tr.entries.push_back({"CE-ASPP", h, w, c});

  for (int i = cfg.stages; i >= 1; --i) {
    h *= 2;
    w *= 2;
    tr.entries.push_back({"Up_" + std::to_string(i), h, w, c});
    const Skip& s = skips[static_cast<size_t>(i - 1)];
    const std::string dec = "DecEGFE_" + std::to_string(i);
    if (s.h != h || s.w != w)
      fail(dec, "skip connection extent " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                    " does not match upsampled " + std::to_string(h) + "x" + std::to_string(w));
    c = cfg.decoder_filters(i);
    tr.entries.push_back({dec, h, w, c});
  }
  tr.entries.push_back({"Head", h, w, 1});
  if (h != cfg.input_h || w != cfg.input_w)
    fail("Head", "output extent does not match the input");
  return tr;
}

template <typename T>
Model<T> Model<T>::build(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.cfg_ = cfg;
  std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
  const hmatt::BridgeFlags bf = cfg.bridge_flags();

  int64_t c = 3;
  for (int i = 1; i <= cfg.stages; ++i) {
    const int64_t f = cfg.encoder_filters(i);
    edge::egfe_init(m.params_, "enc" + std::to_string(i) + ".egfe", c, f, rng);
    c = f;
  }
  const int64_t cb = cfg.bottleneck_channels();
  if (cfg.ablation.use_msfa) hmatt::msfa_init(m.params_, "bridge.msfa", cb, cfg.hmatt, bf, rng);
  if (cfg.ablation.use_seat) hmatt::seat_init(m.params_, "bridge.seat", cb, cfg.hmatt, bf, rng);
  if (cfg.ablation.use_ceaspp)
    hmatt::ceaspp_init(m.params_, "bridge.ceaspp", cb, cfg.hmatt, bf, rng);

  int64_t below = cb;
  for (int i = cfg.stages; i >= 1; --i) {
    const int64_t f = cfg.decoder_filters(i);
    const int64_t cin = below + cfg.encoder_filters(i);
    edge::egfe_init(m.params_, "dec" + std::to_string(i) + ".egfe", cin, f, rng);
    below = f;
  }
  m.params_.add("head.w", nn::xavier_uniform<T>({1, 1, below, 1}, below, 1, rng));
  m.params_.add("head.b", Tensor<T>({1}));
  return m;
}

template <typename T>
typename Model<T>::Bound Model<T>::bind(Tape<T>& tape, const Tensor<T>& batch, bool training,
                                        std::mt19937& dropout_rng, bool with_grads) const {
  if (batch.rank() != 4 || batch.dim(3) != 3)
    throw std::invalid_argument("model input must be Nx" + std::to_string(cfg_.input_h) + "x" +
                                std::to_string(cfg_.input_w) + "x3, got " +
                                shape_str(batch.shape()));
  if (batch.dim(1) != cfg_.input_h || batch.dim(2) != cfg_.input_w)
    throw std::invalid_argument("input extent " + std::to_string(batch.dim(1)) + "x" +
                                std::to_string(batch.dim(2)) + " does not match configured " +
                                std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w));

  Bound bound;
  for (const std::string& name : params_.names()) {
    Tensor<T> t = params_.at(name);
    t.set_requires_grad(with_grads);
    bound.leaves.put(name, tape.leaf(std::move(t)));
  }
  const VarMap<T>& vm = bound.leaves;
  const hmatt::BridgeFlags bf = cfg_.bridge_flags();

  Var<T> x = tape.leaf(batch);
  std::vector<Var<T>> skips;
  skips.reserve(static_cast<size_t>(cfg_.stages));
  for (int i = 1; i <= cfg_.stages; ++i) {
    x = edge::egfe_forward(vm, "enc" + std::to_string(i) + ".egfe", x, cfg_.ablation.egfe_sobel);
    skips.push_back(x);
    x = nn::pool(x, nn::PoolKind::kMax, 2, 2, nn::Padding::kValid);
  }

  if (cfg_.ablation.use_msfa) x = hmatt::msfa_forward(vm, "bridge.msfa", x, cfg_.hmatt, bf);
  if (cfg_.ablation.use_seat)
    x = hmatt::seat_forward(vm, "bridge.seat", x, cfg_.hmatt, bf, training, dropout_rng);
  if (cfg_.ablation.use_ceaspp) x = hmatt::ceaspp_forward(vm, "bridge.ceaspp", x, cfg_.hmatt, bf);

  for (int i = cfg_.stages; i >= 1; --i) {
    x = nn::upsample2x(x);
    x = ops::concat({x, skips[static_cast<size_t>(i - 1)]}, 3);
    x = edge::egfe_forward(vm, "dec" + std::to_string(i) + ".egfe", x, cfg_.ablation.egfe_sobel);
  }

  nn::ConvSpec one;
  one.kernel_h = one.kernel_w = 1;
  x = nn::conv2d(x, vm("head.w"), vm("head.b"), one);
  bound.output = ops::sigmoid(x);
  return bound;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch) const {
  Tape<T> tape;
  std::mt19937 unused(0);
  return bind(tape, batch, false, unused, false).output.val();
}

template class Model<float>;
template class Model<double>;

}  // namespace mnetsat::model
