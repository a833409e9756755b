#include "mnetsat/edge.hpp"

namespace mnetsat::edge {

template <typename T>
Var<T> sobel_magnitude(Var<T> x) {
  const Tensor<T>& xv = x.val();
  if (xv.rank() != 4)
    throw std::invalid_argument("sobel_magnitude: expected NxHxWxC, got " + shape_str(xv.shape()));
  if (xv.dim(1) < 3 || xv.dim(2) < 3)
    throw std::invalid_argument("sobel_magnitude: spatial extent " + std::to_string(xv.dim(1)) +
                                "x" + std::to_string(xv.dim(2)) + " below 3x3");
  auto padded = nn::pad_replicate(x, 1);
  auto sx = nn::fixed_corr3x3(padded, kSobelX);
  auto sy = nn::fixed_corr3x3(padded, kSobelY);
  auto sq = ops::add(ops::mul(sx, sx), ops::mul(sy, sy));
  auto mag = ops::sqrt(ops::add_scalar(sq, T(1e-12)));
  return ops::reduce(ops::Reduce::kMean, mag, {3}, true);
}

template <typename T>
EdgeMap<T> sobel_magnitude_value(const Tensor<T>& x) {
  Tape<T> tape;
  auto v = sobel_magnitude(tape.leaf(x));
  return EdgeMap<T>{v.val()};
}

template <typename T>
void egfe_init(ParamBundle<T>& params, const std::string& prefix, int64_t in_channels,
               int64_t filters, std::mt19937& rng) {
  params.add(prefix + ".conv1.w",
             nn::he_uniform<T>({3, 3, in_channels, filters}, 9 * in_channels, rng));
  params.add(prefix + ".conv1.b", Tensor<T>({filters}));
  params.add(prefix + ".conv2.w", nn::he_uniform<T>({3, 3, filters, filters}, 9 * filters, rng));
  params.add(prefix + ".conv2.b", Tensor<T>({filters}));
}

template <typename T>
Var<T> egfe_forward(const VarMap<T>& vars, const std::string& prefix, Var<T> x,
                    bool sobel_enabled) {
  nn::ConvSpec spec;  // 3x3, stride 1, same padding
  auto h = ops::relu(nn::conv2d(x, vars(prefix + ".conv1.w"), vars(prefix + ".conv1.b"), spec));
  h = ops::relu(nn::conv2d(h, vars(prefix + ".conv2.w"), vars(prefix + ".conv2.b"), spec));
  if (!sobel_enabled) return h;
  return ops::add(h, sobel_magnitude(x));
}

#define MNETSAT_INSTANTIATE_EDGE(T)                                                      \
  template Var<T> sobel_magnitude<T>(Var<T>);                                            \
  template EdgeMap<T> sobel_magnitude_value<T>(const Tensor<T>&);                        \
  template void egfe_init<T>(ParamBundle<T>&, const std::string&, int64_t, int64_t,      \
                             std::mt19937&);                                             \
  template Var<T> egfe_forward<T>(const VarMap<T>&, const std::string&, Var<T>, bool);

MNETSAT_INSTANTIATE_EDGE(float)
MNETSAT_INSTANTIATE_EDGE(double)

}  // namespace mnetsat::edge
