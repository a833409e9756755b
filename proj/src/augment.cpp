#include "mnetsat/augment.hpp"

#include <cmath>

namespace mnetsat::train {

namespace {

constexpr double kPi = 3.14159265358979323846;

template <bool kIsMask>
Tensor<float> transform_plane(const Tensor<float>& in, const GeomParams& p) {
  const int64_t H = in.dim(0), W = in.dim(1), C = in.dim(2);
  Tensor<float> out({H, W, C});
  const float* src = in.cdata();
  float* dst = out.data();
  const double th = -p.rot_deg * kPi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  for (int64_t r = 0; r < H; ++r)
    for (int64_t c = 0; c < W; ++c) {
      // invert translate, then rotate, then mirror
      const double yt = static_cast<double>(r - p.ty);
      const double xt = static_cast<double>(c - p.tx);
      const double dx = xt - cx, dy = yt - cy;
      double xs = cx + ct * dx - st * dy;
      double ys = cy + st * dx + ct * dy;
      if (p.mirror_h) xs = static_cast<double>(W - 1) - xs;
      if (p.mirror_v) ys = static_cast<double>(H - 1) - ys;
      const int64_t si = std::llround(ys);
      const int64_t sj = std::llround(xs);
      float* cell = dst + (r * W + c) * C;
      if (si < 0 || si >= H || sj < 0 || sj >= W) {
        for (int64_t ch = 0; ch < C; ++ch) cell[ch] = 0.0f;
        continue;
      }
      const float* scell = src + (si * W + sj) * C;
      for (int64_t ch = 0; ch < C; ++ch) {
        float v = scell[ch];
        if (!kIsMask)
          v = std::clamp(static_cast<float>((v - 0.5) * p.contrast + 0.5), 0.0f, 1.0f);
        cell[ch] = v;
      }
    }
  return out;
}

}  // namespace

data::Sample apply_augment(const data::Sample& s, const GeomParams& p) {
  if (s.image.dim(0) != s.mask.dim(0) || s.image.dim(1) != s.mask.dim(1))
    throw std::invalid_argument("augment: image and mask extents differ");
  data::Sample out;
  out.id = s.id;
  out.image = transform_plane<false>(s.image, p);
  out.mask = transform_plane<true>(s.mask, p);
  return out;
}

std::vector<data::Sample> augment(const data::Sample& s, int count, std::mt19937& rng) {
  std::vector<data::Sample> out;
  out.reserve(static_cast<size_t>(std::max(count, 0)));
  const int64_t H = s.image.dim(0), W = s.image.dim(1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> rot(-30.0, 30.0);
  std::uniform_int_distribution<int64_t> dtx(-W / 10, W / 10);
  std::uniform_int_distribution<int64_t> dty(-H / 10, H / 10);
  std::uniform_real_distribution<double> contrast(0.8, 1.2);
  for (int k = 0; k < count; ++k) {
    GeomParams p;
    p.mirror_h = u01(rng) < 0.5;
    p.mirror_v = u01(rng) < 0.5;
    p.rot_deg = rot(rng);
    p.tx = dtx(rng);
    p.ty = dty(rng);
    p.contrast = contrast(rng);
    data::Sample a = apply_augment(s, p);
    a.id = s.id + "_a" + std::to_string(k);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace mnetsat::train
