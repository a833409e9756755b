#pragma once

#include <random>
#include <string>
#include <vector>

#include "mnetsat/edge.hpp"
#include "mnetsat/hmatt.hpp"
#include "mnetsat/params.hpp"

namespace mnetsat::model {

struct AblationFlags {
  bool egfe_sobel = true;
  bool use_msfa = true;
  bool use_seat = true;
  bool use_ceaspp = true;
  bool msfa_se = true;
  bool seat_ln = true;
  bool seat_gap = true;
  bool ceaspp_cc = true;
  bool ceaspp_icf = true;
};

struct ModelConfig {
  int64_t input_h = 512;
  int64_t input_w = 512;
  int base_filters = 64;
  int stages = 5;
  hmatt::HMAttConfig hmatt;
  AblationFlags ablation;

  void validate() const;
  int64_t encoder_filters(int stage) const;  // base * 2^(stage-1)
  int64_t decoder_filters(int stage) const;  // half of the incoming Up channels
  int64_t bottleneck_channels() const { return encoder_filters(stages); }
  hmatt::BridgeFlags bridge_flags() const;
};

struct ShapeTrace {
  struct Entry {
    std::string layer;
    int64_t h = 0, w = 0, c = 0;
  };
  std::vector<Entry> entries;

  const Entry* find(const std::string& layer) const;
  std::string to_csv() const;  // layer,H,W,C
};

// Symbolic shape propagation; allocates nothing, throws naming the offending
// layer on any inconsistency.
ShapeTrace trace_shapes(const ModelConfig& cfg);

template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamBundle<T>& params() { return params_; }
  const ParamBundle<T>& params() const { return params_; }
  int64_t parameter_count() const { return params_.total_elements(); }

  struct Bound {
    Var<T> output;
    VarMap<T> leaves;
  };

  // Records the full graph on `tape`; with_grads marks parameters as
  // differentiable leaves. dropout_rng is only drawn from when training.
  Bound bind(Tape<T>& tape, const Tensor<T>& batch, bool training, std::mt19937& dropout_rng,
             bool with_grads) const;

  // Inference: probabilities in (0,1), shape N x H x W x 1.
  Tensor<T> forward(const Tensor<T>& batch) const;

 private:
  ModelConfig cfg_;
  ParamBundle<T> params_;
};

}  // namespace mnetsat::model
