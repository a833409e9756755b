#pragma once

#include <random>
#include <vector>

#include "mnetsat/dataio.hpp"

namespace mnetsat::train {

// One composed geometric + photometric transform: mirror, rotate about the
// center, integer translate (zero fill), contrast (image only). Nearest
// sampling keeps masks binary.
struct GeomParams {
  bool mirror_h = false;
  bool mirror_v = false;
  double rot_deg = 0.0;
  int64_t tx = 0;
  int64_t ty = 0;
  double contrast = 1.0;
};

data::Sample apply_augment(const data::Sample& s, const GeomParams& p);

// `count` independently drawn transforms: mirror flips (p=0.5 each), rotation
// +-30 deg, translation +-10% of the extent, contrast in [0.8, 1.2].
std::vector<data::Sample> augment(const data::Sample& s, int count, std::mt19937& rng);

}  // namespace mnetsat::train
