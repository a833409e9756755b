#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mnetsat/tensor.hpp"

namespace mnetsat::data {

struct Sample {
  Tensor<float> image;  // H x W x 3, values in [0,1]
  Tensor<float> mask;   // H x W x 1, values in {0,1}
  std::string id;
};

struct ImageU8 {
  int64_t h = 0, w = 0, channels = 0;  // interleaved rows, 1 or 3 channels
  std::vector<uint8_t> pixels;
};

// PNG (8-bit gray/RGB, non-interlaced) or binary PGM/PPM, picked by magic.
ImageU8 read_image(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);
void write_pgm(const std::string& path, const ImageU8& img);

// Image normalized to [0,1] (gray replicated to 3 channels); mask thresholded
// at 128/255. Extent mismatch is an error.
Sample load_sample(const std::string& image_path, const std::string& mask_path);

Tensor<float> resize_bilinear(const Tensor<float>& img, int64_t out_h, int64_t out_w);
Tensor<float> resize_nearest(const Tensor<float>& img, int64_t out_h, int64_t out_w);

// Bilinear for the image, nearest for the mask (stays binary).
Sample resize(const Sample& s, int64_t out_h, int64_t out_w);

struct DatasetManifest {
  std::vector<std::pair<std::string, std::string>> entries;  // (id, split)
  std::vector<std::string> ids_in(const std::string& split) const;
};

// Deterministic shuffled 8:1:1 assignment; requires at least 10 ids.
DatasetManifest split(std::vector<std::string> ids, uint64_t seed);

void write_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);

// Layout: root/images/<id>.(png|pgm|ppm), root/masks/<id>.* with equal stems.
std::vector<std::string> list_ids(const std::string& root);
Sample load_by_id(const std::string& root, const std::string& id);
std::vector<Sample> load_split(const std::string& root, const DatasetManifest& m,
                               const std::string& split_name);

struct SynthEllipse {
  double cx = 0, cy = 0, a = 1, b = 1, theta = 0;
  bool contains(double x, double y) const;
};

// Textured background with 1-3 soft-edged ellipses plus specular highlights;
// masks are the exact ellipse union. Writes images/, masks/, manifest.jsonl
// and synth_meta.jsonl (per-image ellipse parameters). Byte-deterministic in
// the seed.
void synth_generate(const std::string& dir, int count, int64_t size, uint64_t seed);

uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace mnetsat::data
