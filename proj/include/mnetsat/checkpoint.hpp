#pragma once

#include <string>

#include "mnetsat/params.hpp"

namespace mnetsat::train {

// "MSAT1" container: little-endian records of
//   u32 name length, UTF-8 name, u32 rank, u32 extents[rank], f32 data.
void save_checkpoint(const std::string& path, const ParamBundle<float>& params);

// Loads into an existing bundle; every parameter must appear exactly once
// with a matching shape, and no unknown records are allowed.
void load_checkpoint(const std::string& path, ParamBundle<float>& params);

}  // namespace mnetsat::train
