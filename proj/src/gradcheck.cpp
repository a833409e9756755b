#include "mnetsat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mnetsat/edge.hpp"
#include "mnetsat/hmatt.hpp"
#include "mnetsat/loss.hpp"
#include "mnetsat/model.hpp"
#include "mnetsat/nn.hpp"

namespace mnetsat::gradcheck {

Result check(const std::string& name, const std::vector<Tensor<double>>& inputs,
             const BuildFn& build, double step, int64_t max_coords, uint64_t seed) {
  Result res;
  res.name = name;

  // Reverse-mode gradients.
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor<double>& t : inputs) {
    Tensor<double> copy = t;
    copy.set_requires_grad(true);
    leaves.push_back(tape.leaf(std::move(copy)));
  }
  Var<double> root = build(tape, leaves);
  tape.backward(root);

  auto eval_at = [&](const std::vector<Tensor<double>>& pts) {
    Tape<double> t2;
    std::vector<Var<double>> ls;
    ls.reserve(pts.size());
    for (const Tensor<double>& t : pts) ls.push_back(t2.leaf(t));
    return build(t2, ls).val().item();
  };

  std::mt19937_64 pick(seed);
  std::vector<Tensor<double>> work = inputs;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    const int64_t n = inputs[ti].numel();
    std::vector<int64_t> coords;
    if (n <= max_coords) {
      coords.resize(static_cast<size_t>(n));
      std::iota(coords.begin(), coords.end(), int64_t(0));
    } else {
      std::vector<int64_t> all(static_cast<size_t>(n));
      std::iota(all.begin(), all.end(), int64_t(0));
      std::shuffle(all.begin(), all.end(), pick);
      coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(max_coords));
    }

    const Tensor<double>* grad = nullptr;
    Tensor<double> zero;
    if (tape.has_grad(leaves[ti])) {
      grad = &tape.grad(leaves[ti]);
    } else {
      zero = Tensor<double>(inputs[ti].shape());
      grad = &zero;
    }

    for (int64_t c : coords) {
      const double orig = work[ti].cdata()[c];
      work[ti].data()[c] = orig + step;
      const double f_plus = eval_at(work);
      work[ti].data()[c] = orig - step;
      const double f_minus = eval_at(work);
      work[ti].data()[c] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double analytic = grad->cdata()[c];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      res.worst_rel_err = std::max(res.worst_rel_err, rel);
      ++res.coords_checked;
    }
  }
  return res;
}

namespace {

Tensor<double> uniform(const Shape& shape, std::mt19937& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(shape);
  double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = u(rng);
  return t;
}

// Keeps values away from the ReLU kink so the difference quotient stays valid.
Tensor<double> uniform_nudged(const Shape& shape, std::mt19937& rng, double margin = 5e-3) {
  Tensor<double> t = uniform(shape, rng);
  double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    if (std::abs(p[i]) < margin) p[i] = p[i] < 0 ? -margin : margin;
  return t;
}

Tensor<double> random_binary(const Shape& shape, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<double> t(shape);
  double* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = u(rng) < 0.5 ? 0.0 : 1.0;
  return t;
}

// Scalar probe: sum(out * R) where R is a fixed index-keyed weighting, so
// every output element contributes distinctly and repeated builds agree.
Var<double> probe(Tape<double>& tape, Var<double> out) {
  Tensor<double> r(out.shape());
  double* p = r.data();
  for (int64_t i = 0; i < r.numel(); ++i) {
    uint64_t z = static_cast<uint64_t>(i) * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 29)) * 0xbf58476d1ce4e5b9ULL;
    p[i] = 0.2 + 0.8 * static_cast<double>((z >> 11) % 1000000) / 1000000.0;
  }
  return ops::reduce_all(ops::Reduce::kSum, ops::mul(out, tape.leaf(r)));
}

struct SuiteBuilder {
  std::mt19937 rng;
  std::vector<Result> results;

  explicit SuiteBuilder(uint64_t seed) : rng(static_cast<uint32_t>(seed)) {}

  void run(const std::string& name, std::vector<Tensor<double>> inputs, const BuildFn& fn,
           int64_t max_coords = 256) {
    results.push_back(check(name, inputs, fn, 1e-5, max_coords, rng()));
  }
};

nn::ConvSpec conv_spec(int k, int stride, int dilation, nn::Padding pad) {
  nn::ConvSpec s;
  s.kernel_h = s.kernel_w = k;
  s.stride = stride;
  s.dilation = dilation;
  s.padding = pad;
  return s;
}

}  // namespace

std::vector<Result> run_suite(uint64_t seed) {
  SuiteBuilder sb(seed);
  std::mt19937& rng = sb.rng;

  // elementwise with channel and trailing-1 broadcast
  sb.run("elementwise.add_broadcast",
         {uniform({2, 3, 3, 4}, rng), uniform({1, 1, 1, 4}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::add(in[0], in[1]));
         });
  sb.run("elementwise.sub", {uniform({2, 3, 3, 4}, rng), uniform({2, 3, 3, 4}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::sub(in[0], in[1]));
         });
  sb.run("elementwise.mul_broadcast",
         {uniform({2, 3, 3, 4}, rng), uniform({2, 3, 3, 1}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::mul(in[0], in[1]));
         });
  sb.run("elementwise.div", {uniform({2, 3, 3, 4}, rng), uniform({1, 1, 1, 4}, rng, 0.4, 1.5)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::div(in[0], in[1]));
         });

  sb.run("matmul", {uniform({5, 7}, rng), uniform({7, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::matmul(in[0], in[1]));
         });

  sb.run("reduce.sum_axes", {uniform({2, 4, 4, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::reduce(ops::Reduce::kSum, in[0], {1, 2}, true));
         });
  sb.run("reduce.mean_all", {uniform({2, 4, 4, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return ops::reduce_all(ops::Reduce::kMean, in[0]);
         });
  sb.run("reduce.max_hw", {uniform({2, 4, 4, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::reduce(ops::Reduce::kMax, in[0], {1, 2}, false));
         });

  sb.run("activate.relu", {uniform_nudged({2, 4, 4, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::relu(in[0]));
         });
  sb.run("activate.sigmoid", {uniform({2, 4, 4, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::sigmoid(in[0]));
         });
  sb.run("activate.softmax_channels", {uniform({2, 3, 3, 6}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::softmax(in[0], 3));
         });
  sb.run("activate.softmax_rows", {uniform({5, 6}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::softmax(in[0], 1));
         });
  sb.run("sqrt", {uniform({2, 3, 3, 2}, rng, 0.5, 2.0)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::sqrt(in[0]));
         });
  sb.run("log", {uniform({2, 3, 3, 2}, rng, 0.3, 2.0)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, ops::log(in[0]));
         });

  // conv2d stride/dilation/padding variants
  struct ConvCase {
    const char* name;
    int k, stride, dilation;
    nn::Padding pad;
  };
  const ConvCase conv_cases[] = {
      {"conv2d.k3_s1_d1_same", 3, 1, 1, nn::Padding::kSame},
      {"conv2d.k3_s2_d1_same", 3, 2, 1, nn::Padding::kSame},
      {"conv2d.k3_s1_d2_same", 3, 1, 2, nn::Padding::kSame},
      {"conv2d.k3_s1_d6_same", 3, 1, 6, nn::Padding::kSame},
      {"conv2d.k3_s2_d2_valid", 3, 2, 2, nn::Padding::kValid},
      {"conv2d.k1_s1_d1_same", 1, 1, 1, nn::Padding::kSame},
  };
  for (const ConvCase& cc : conv_cases) {
    const int64_t cin = 3, cout = 4;
    sb.run(cc.name,
           {uniform({2, 8, 8, cin}, rng), uniform({cc.k, cc.k, cin, cout}, rng, -0.5, 0.5),
            uniform({cout}, rng, -0.2, 0.2)},
           [&, cc](Tape<double>& t, const std::vector<Var<double>>& in) {
             return probe(t, nn::conv2d(in[0], in[1], in[2],
                                        conv_spec(cc.k, cc.stride, cc.dilation, cc.pad)));
           },
           160);
  }
  sb.run("depthwise_conv2d.k3_s1_d2_same",
         {uniform({2, 6, 6, 4}, rng), uniform({3, 3, 4}, rng, -0.5, 0.5),
          uniform({4}, rng, -0.2, 0.2)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, nn::depthwise_conv2d(in[0], in[1], in[2],
                                                conv_spec(3, 1, 2, nn::Padding::kSame)));
         });

  sb.run("pool.max_2x2_s2_valid", {uniform({2, 6, 6, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, nn::pool(in[0], nn::PoolKind::kMax, 2, 2, nn::Padding::kValid));
         });
  sb.run("pool.max_2x2_s1_same", {uniform({2, 5, 5, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, nn::pool(in[0], nn::PoolKind::kMax, 2, 1, nn::Padding::kSame));
         });
  sb.run("pool.avg_3x3_s1_same", {uniform({2, 5, 5, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, nn::pool(in[0], nn::PoolKind::kAvg, 3, 1, nn::Padding::kSame));
         });

  sb.run("upsample2x", {uniform({2, 3, 4, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, nn::upsample2x(in[0]));
         });

  sb.run("sobel_magnitude", {uniform({2, 6, 6, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, edge::sobel_magnitude(in[0]));
         });

  sb.run("normalize.layer",
         {uniform({2, 4, 4, 6}, rng), uniform({1, 1, 1, 6}, rng, 0.5, 1.5),
          uniform({1, 1, 1, 6}, rng, -0.3, 0.3)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, nn::layer_norm(in[0], in[1], in[2]));
         });
  sb.run("normalize.group4",
         {uniform({2, 4, 4, 8}, rng), uniform({1, 1, 1, 8}, rng, 0.5, 1.5),
          uniform({1, 1, 1, 8}, rng, -0.3, 0.3)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           return probe(t, nn::group_norm(in[0], in[1], in[2], 4));
         });

  {
    const int64_t C = 8, cb = nn::se_bottleneck(C, 16);
    sb.run("se_block",
           {uniform({2, 4, 4, C}, rng), uniform({C, cb}, rng, -0.7, 0.7),
            uniform({1, cb}, rng, -0.2, 0.2), uniform({cb, C}, rng, -0.7, 0.7),
            uniform({1, C}, rng, -0.2, 0.2)},
           [&](Tape<double>& t, const std::vector<Var<double>>& in) {
             return probe(t, nn::se_block(in[0], in[1], in[2], in[3], in[4]));
           });
  }

  sb.run("dropout.inference_identity", {uniform({2, 4, 4, 3}, rng)},
         [&](Tape<double>& t, const std::vector<Var<double>>& in) {
           std::mt19937 r(7);
           return probe(t, nn::dropout(in[0], 0.4, false, r));
         });

  // composite blocks, bundle-driven
  auto bundle_case = [&](const std::string& name, const Shape& xshape,
                         const std::function<void(ParamBundle<double>&, std::mt19937&)>& init,
                         const std::function<Var<double>(const VarMap<double>&, Var<double>)>& fwd,
                         int64_t max_coords) {
    ParamBundle<double> bundle;
    std::mt19937 irng(rng());
    init(bundle, irng);
    std::vector<Tensor<double>> inputs;
    inputs.push_back(uniform(xshape, rng));
    for (const std::string& pname : bundle.names()) inputs.push_back(bundle.at(pname));
    std::vector<std::string> names = bundle.names();
    sb.run(name, inputs,
           [&fwd, names](Tape<double>& t, const std::vector<Var<double>>& in) {
             VarMap<double> vm;
             for (size_t i = 0; i < names.size(); ++i) vm.put(names[i], in[i + 1]);
             return probe(t, fwd(vm, in[0]));
           },
           max_coords);
  };

  {
    hmatt::HMAttConfig hc;
    hc.heads = 2;
    hmatt::BridgeFlags bf;
    bundle_case(
        "egfe", {2, 6, 6, 3},
        [&](ParamBundle<double>& b, std::mt19937& r) { edge::egfe_init(b, "egfe", 3, 4, r); },
        [](const VarMap<double>& vm, Var<double> x) {
          return edge::egfe_forward(vm, "egfe", x, true);
        },
        96);
    bundle_case(
        "msfa", {2, 4, 4, 8},
        [&](ParamBundle<double>& b, std::mt19937& r) { hmatt::msfa_init(b, "m", 8, hc, bf, r); },
        [hc, bf](const VarMap<double>& vm, Var<double> x) {
          return hmatt::msfa_forward(vm, "m", x, hc, bf);
        },
        64);
    bundle_case(
        "mhseat", {2, 4, 4, 8},
        [&](ParamBundle<double>& b, std::mt19937& r) { hmatt::mhseat_init(b, "a", 8, hc, bf, r); },
        [hc, bf](const VarMap<double>& vm, Var<double> x) {
          return hmatt::mhseat_forward(vm, "a", x, hc, bf);
        },
        96);
    bundle_case(
        "seat", {2, 4, 4, 8},
        [&](ParamBundle<double>& b, std::mt19937& r) { hmatt::seat_init(b, "s", 8, hc, bf, r); },
        [hc, bf](const VarMap<double>& vm, Var<double> x) {
          std::mt19937 r(11);
          return hmatt::seat_forward(vm, "s", x, hc, bf, false, r);
        },
        96);
    bundle_case(
        "ceaspp", {2, 4, 4, 8},
        [&](ParamBundle<double>& b, std::mt19937& r) { hmatt::ceaspp_init(b, "c", 8, hc, bf, r); },
        [hc, bf](const VarMap<double>& vm, Var<double> x) {
          return hmatt::ceaspp_forward(vm, "c", x, hc, bf);
        },
        96);
  }

  // losses: gradient w.r.t. predictions, mask fixed
  {
    Tensor<double> yg = random_binary({1, 4, 4, 1}, rng);
    sb.run("loss.dice", {uniform({1, 4, 4, 1}, rng, 0.05, 0.95)},
           [&, yg](Tape<double>& t, const std::vector<Var<double>>& in) {
             return train::dice_loss(in[0], t.leaf(yg), 1.0);
           });
    sb.run("loss.bce", {uniform({1, 4, 4, 1}, rng, 0.05, 0.95)},
           [&, yg](Tape<double>& t, const std::vector<Var<double>>& in) {
             return train::bce_loss(in[0], t.leaf(yg));
           });
    sb.run("loss.total", {uniform({1, 4, 4, 1}, rng, 0.05, 0.95)},
           [&, yg](Tape<double>& t, const std::vector<Var<double>>& in) {
             train::LossConfig lc;
             return train::total_loss(in[0], t.leaf(yg), lc);
           });
  }

  return sb.results;
}

}  // namespace mnetsat::gradcheck
