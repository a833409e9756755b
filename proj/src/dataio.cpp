#include "mnetsat/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mnetsat::data {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write file: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

uint32_t be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void push_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

constexpr uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
  if (pb <= pc) return static_cast<uint8_t>(b);
  return static_cast<uint8_t>(c);
}

ImageU8 read_png(const std::vector<uint8_t>& bytes, const std::string& path) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
    throw std::runtime_error("not a PNG file: " + path);
  size_t pos = 8;
  int64_t w = 0, h = 0;
  int bit_depth = -1, color_type = -1;
  std::vector<uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= bytes.size() && !saw_iend) {
    const uint32_t len = be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw std::runtime_error("truncated PNG chunk: " + path);
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const uint8_t* data = &bytes[pos + 8];
    const uint32_t crc = be32(&bytes[pos + 8 + len]);
    const uint32_t want = static_cast<uint32_t>(
        crc32(crc32(0, &bytes[pos + 4], 4), data, len));
    if (crc != want) throw std::runtime_error("corrupt PNG chunk in " + path);
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::runtime_error("bad IHDR in " + path);
      w = be32(data);
      h = be32(data + 4);
      bit_depth = data[8];
      color_type = data[9];
      if (data[10] != 0 || data[11] != 0) throw std::runtime_error("bad PNG compression: " + path);
      if (data[12] != 0) throw std::runtime_error("interlaced PNG not supported: " + path);
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend) throw std::runtime_error("malformed PNG: " + path);
  if (bit_depth != 8)
    throw std::runtime_error("unsupported bit depth " + std::to_string(bit_depth) + " in " + path);
  int64_t channels;
  if (color_type == 0)
    channels = 1;
  else if (color_type == 2)
    channels = 3;
  else
    throw std::runtime_error("unsupported PNG color type " + std::to_string(color_type) + " in " +
                             path);
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PNG extent in " + path);

  const int64_t stride = w * channels;
  std::vector<uint8_t> raw(static_cast<size_t>((stride + 1) * h));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("PNG inflate failed: " + path);

  ImageU8 img;
  img.h = h;
  img.w = w;
  img.channels = channels;
  img.pixels.assign(static_cast<size_t>(h * stride), 0);
  const int bpp = static_cast<int>(channels);
  for (int64_t r = 0; r < h; ++r) {
    const uint8_t filter = raw[static_cast<size_t>(r * (stride + 1))];
    const uint8_t* src = &raw[static_cast<size_t>(r * (stride + 1) + 1)];
    uint8_t* dst = &img.pixels[static_cast<size_t>(r * stride)];
    const uint8_t* up = r > 0 ? &img.pixels[static_cast<size_t>((r - 1) * stride)] : nullptr;
    for (int64_t i = 0; i < stride; ++i) {
      const int a = i >= bpp ? dst[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= bpp) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw std::runtime_error("bad PNG filter type in " + path);
      }
      dst[i] = static_cast<uint8_t>(v & 0xff);
    }
  }
  return img;
}

void append_chunk(std::vector<uint8_t>& out, const char* type, const std::vector<uint8_t>& data) {
  push_be32(out, static_cast<uint32_t>(data.size()));
  const size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(crc32(0, &out[type_pos], 4), data.data(), static_cast<uInt>(data.size())));
  push_be32(out, crc);
}

ImageU8 read_pnm(const std::vector<uint8_t>& bytes, const std::string& path) {
  size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    if (tok.empty()) throw std::runtime_error("truncated PNM header: " + path);
    return tok;
  };
  const std::string magic = next_token();
  int64_t channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw std::runtime_error("unsupported PNM magic '" + magic + "' in " + path);
  const int64_t w = std::stoll(next_token());
  const int64_t h = std::stoll(next_token());
  const int64_t maxval = std::stoll(next_token());
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PNM extent in " + path);
  if (maxval <= 0 || maxval > 255)
    throw std::runtime_error("unsupported bit depth (maxval " + std::to_string(maxval) + ") in " +
                             path);
  ++pos;  // single whitespace after maxval
  const size_t need = static_cast<size_t>(w * h * channels);
  if (bytes.size() - pos < need) throw std::runtime_error("truncated PNM data: " + path);
  ImageU8 img;
  img.h = h;
  img.w = w;
  img.channels = channels;
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  if (maxval != 255)
    for (uint8_t& v : img.pixels)
      v = static_cast<uint8_t>((int(v) * 255 + maxval / 2) / maxval);
  return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return read_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
    return read_pnm(bytes, path);
  throw std::runtime_error("unsupported image format: " + path);
}

void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  const int64_t stride = img.w * img.channels;
  std::vector<uint8_t> raw(static_cast<size_t>((stride + 1) * img.h));
  for (int64_t r = 0; r < img.h; ++r) {
    raw[static_cast<size_t>(r * (stride + 1))] = 0;  // filter: none
    std::memcpy(&raw[static_cast<size_t>(r * (stride + 1) + 1)],
                &img.pixels[static_cast<size_t>(r * stride)], static_cast<size_t>(stride));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("PNG deflate failed: " + path);
  compressed.resize(bound);

  std::vector<uint8_t> out(kPngSig, kPngSig + 8);
  std::vector<uint8_t> ihdr;
  push_be32(ihdr, static_cast<uint32_t>(img.w));
  push_be32(ihdr, static_cast<uint32_t>(img.h));
  ihdr.push_back(8);
  ihdr.push_back(img.channels == 1 ? 0 : 2);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", {});
  write_file(path, out);
}

void write_pgm(const std::string& path, const ImageU8& img) {
  if (img.channels != 1) throw std::invalid_argument("write_pgm: expected 1 channel");
  std::vector<uint8_t> out;
  const std::string header =
      "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  write_file(path, out);
}

Sample load_sample(const std::string& image_path, const std::string& mask_path) {
  const ImageU8 img = read_image(image_path);
  const ImageU8 msk = read_image(mask_path);
  if (img.h != msk.h || img.w != msk.w)
    throw std::runtime_error("image/mask extent mismatch: " + std::to_string(img.h) + "x" +
                             std::to_string(img.w) + " vs " + std::to_string(msk.h) + "x" +
                             std::to_string(msk.w) + " (" + image_path + ", " + mask_path + ")");
  Sample s;
  s.id = fs::path(image_path).stem().string();
  s.image = Tensor<float>({img.h, img.w, 3});
  float* pi = s.image.data();
  for (int64_t i = 0; i < img.h * img.w; ++i)
    for (int64_t c = 0; c < 3; ++c)
      pi[i * 3 + c] =
          static_cast<float>(img.pixels[static_cast<size_t>(
              img.channels == 1 ? i : i * img.channels + c)]) /
          255.0f;
  s.mask = Tensor<float>({msk.h, msk.w, 1});
  float* pm = s.mask.data();
  for (int64_t i = 0; i < msk.h * msk.w; ++i) {
    int v = 0;
    for (int64_t c = 0; c < msk.channels; ++c)
      v += msk.pixels[static_cast<size_t>(i * msk.channels + c)];
    v /= static_cast<int>(msk.channels);
    pm[i] = v >= 128 ? 1.0f : 0.0f;
  }
  return s;
}

Tensor<float> resize_bilinear(const Tensor<float>& img, int64_t out_h, int64_t out_w) {
  if (img.rank() != 3) throw std::invalid_argument("resize: expected HxWxC");
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize target must be positive");
  const int64_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
  Tensor<float> out({out_h, out_w, C});
  const float* p = img.cdata();
  float* q = out.data();
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  for (int64_t i = 0; i < out_h; ++i) {
    const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t j = 0; j < out_w; ++j) {
      const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int64_t c = 0; c < C; ++c) {
        const double v00 = p[(y0 * W + x0) * C + c];
        const double v01 = p[(y0 * W + x1) * C + c];
        const double v10 = p[(y1 * W + x0) * C + c];
        const double v11 = p[(y1 * W + x1) * C + c];
        q[(i * out_w + j) * C + c] = static_cast<float>(
            (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

Tensor<float> resize_nearest(const Tensor<float>& img, int64_t out_h, int64_t out_w) {
  if (img.rank() != 3) throw std::invalid_argument("resize: expected HxWxC");
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize target must be positive");
  const int64_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
  Tensor<float> out({out_h, out_w, C});
  const float* p = img.cdata();
  float* q = out.data();
  for (int64_t i = 0; i < out_h; ++i) {
    const int64_t y = std::min<int64_t>(static_cast<int64_t>((i + 0.5) * H / out_h), H - 1);
    for (int64_t j = 0; j < out_w; ++j) {
      const int64_t x = std::min<int64_t>(static_cast<int64_t>((j + 0.5) * W / out_w), W - 1);
      std::memcpy(q + (i * out_w + j) * C, p + (y * W + x) * C, sizeof(float) * static_cast<size_t>(C));
    }
  }
  return out;
}

Sample resize(const Sample& s, int64_t out_h, int64_t out_w) {
  Sample r;
  r.id = s.id;
  r.image = resize_bilinear(s.image, out_h, out_w);
  r.mask = resize_nearest(s.mask, out_h, out_w);
  return r;
}

std::vector<std::string> DatasetManifest::ids_in(const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& [id, sp] : entries)
    if (sp == split) out.push_back(id);
  return out;
}

DatasetManifest split(std::vector<std::string> ids, uint64_t seed) {
  if (ids.size() < 10)
    throw std::invalid_argument("split needs at least 10 ids, got " + std::to_string(ids.size()));
  std::sort(ids.begin(), ids.end());
  std::mt19937 rng(static_cast<uint32_t>(mix_seed(seed, 0)));
  std::shuffle(ids.begin(), ids.end(), rng);
  const size_t n = ids.size();
  const size_t n_train = n * 8 / 10;
  const size_t n_val = n / 10;
  DatasetManifest m;
  for (size_t i = 0; i < n; ++i) {
    const char* sp = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    m.entries.emplace_back(ids[i], sp);
  }
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  for (const auto& [id, sp] : m.entries) {
    json j;
    j["id"] = id;
    j["split"] = sp;
    f << j.dump() << '\n';
  }
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read manifest: " + path);
  DatasetManifest m;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    m.entries.emplace_back(j.at("id").get<std::string>(), j.at("split").get<std::string>());
  }
  return m;
}

namespace {

std::string find_with_stem(const std::string& dir, const std::string& stem) {
  for (const char* ext : {".png", ".pgm", ".ppm"}) {
    const fs::path p = fs::path(dir) / (stem + ext);
    if (fs::exists(p)) return p.string();
  }
  throw std::runtime_error("no file with stem '" + stem + "' under " + dir);
}

}  // namespace

std::vector<std::string> list_ids(const std::string& root) {
  const fs::path dir = fs::path(root) / "images";
  if (!fs::is_directory(dir)) throw std::runtime_error("missing images directory: " + dir.string());
  std::set<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".pgm" || ext == ".ppm") stems.insert(e.path().stem().string());
  }
  return std::vector<std::string>(stems.begin(), stems.end());
}

Sample load_by_id(const std::string& root, const std::string& id) {
  const std::string img = find_with_stem((fs::path(root) / "images").string(), id);
  const std::string msk = find_with_stem((fs::path(root) / "masks").string(), id);
  Sample s = load_sample(img, msk);
  s.id = id;
  return s;
}

std::vector<Sample> load_split(const std::string& root, const DatasetManifest& m,
                               const std::string& split_name) {
  std::vector<Sample> out;
  for (const std::string& id : m.ids_in(split_name)) out.push_back(load_by_id(root, id));
  return out;
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 step
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool SynthEllipse::contains(double x, double y) const {
  const double ct = std::cos(theta), st = std::sin(theta);
  const double dx = x - cx, dy = y - cy;
  const double u = (dx * ct + dy * st) / a;
  const double v = (-dx * st + dy * ct) / b;
  return u * u + v * v <= 1.0;
}

namespace {

double ellipse_q(const SynthEllipse& e, double x, double y) {
  const double ct = std::cos(e.theta), st = std::sin(e.theta);
  const double dx = x - e.cx, dy = y - e.cy;
  const double u = (dx * ct + dy * st) / e.a;
  const double v = (-dx * st + dy * ct) / e.b;
  return u * u + v * v;
}

}  // namespace

void synth_generate(const std::string& dir, int count, int64_t size, uint64_t seed) {
  if (size < 32) throw std::invalid_argument("synthetic image size must be >= 32");
  if (count < 10) throw std::invalid_argument("synthetic dataset needs at least 10 samples");
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");

  std::ofstream meta((fs::path(dir) / "synth_meta.jsonl").string());
  if (!meta) throw std::runtime_error("cannot write synth metadata under " + dir);

  const double S = static_cast<double>(size);
  std::vector<std::string> ids;
  for (int idx = 0; idx < count; ++idx) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", idx);
    ids.emplace_back(name);
    std::mt19937 rng(static_cast<uint32_t>(mix_seed(seed, static_cast<uint64_t>(idx))));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    // Ellipses, redrawn until the union covers 2%..45% of the frame.
    std::vector<SynthEllipse> ellipses;
    std::vector<uint8_t> mask(static_cast<size_t>(size * size), 0);
    for (int attempt = 0; attempt < 64; ++attempt) {
      ellipses.clear();
      const int k = 1 + static_cast<int>(u01(rng) * 3.0) % 3;
      for (int e = 0; e < k; ++e) {
        SynthEllipse el;
        el.cx = uni(0.2, 0.8) * S;
        el.cy = uni(0.2, 0.8) * S;
        el.a = uni(0.08, 0.28) * S;
        el.b = uni(0.08, 0.28) * S;
        el.theta = uni(0.0, 3.14159265358979323846);
        ellipses.push_back(el);
      }
      int64_t fg = 0;
      for (int64_t r = 0; r < size; ++r)
        for (int64_t c = 0; c < size; ++c) {
          bool in = false;
          for (const auto& el : ellipses)
            if (el.contains(static_cast<double>(c), static_cast<double>(r))) {
              in = true;
              break;
            }
          mask[static_cast<size_t>(r * size + c)] = in ? 255 : 0;
          fg += in;
        }
      const double frac = static_cast<double>(fg) / (S * S);
      if (frac >= 0.02 && frac <= 0.45) break;
      if (attempt == 63)
        throw std::runtime_error("synthetic generator failed to hit the foreground band");
    }

    // Background: reddish base + low-frequency field + fine noise.
    const double base[3] = {uni(0.45, 0.60), uni(0.30, 0.45), uni(0.25, 0.40)};
    struct Wave {
      double ax, fx, fy, ph;
    };
    std::vector<Wave> waves;
    for (int kw = 0; kw < 3; ++kw)
      waves.push_back({uni(0.03, 0.08), uni(0.5, 2.5), uni(0.5, 2.5), uni(0.0, 6.283185307)});

    struct Blob {
      double delta[3];
      double fx, fy, ph, amp;
    };
    std::vector<Blob> blobs;
    for (size_t e = 0; e < ellipses.size(); ++e) {
      Blob b;
      const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
      const double mag = uni(0.15, 0.35);
      for (int c = 0; c < 3; ++c) b.delta[c] = sign * mag * uni(0.8, 1.2);
      b.fx = uni(3.0, 7.0);
      b.fy = uni(3.0, 7.0);
      b.ph = uni(0.0, 6.283185307);
      b.amp = uni(0.01, 0.04);
      blobs.push_back(b);
    }

    struct Spot {
      double x, y, sigma, inten;
    };
    std::vector<Spot> spots;
    const int n_spots = static_cast<int>(u01(rng) * 4.0) % 4;
    for (int sp = 0; sp < n_spots; ++sp)
      spots.push_back({uni(0.0, 1.0) * S, uni(0.0, 1.0) * S, uni(0.8, 2.0), uni(0.3, 0.5)});

    ImageU8 img;
    img.h = size;
    img.w = size;
    img.channels = 3;
    img.pixels.assign(static_cast<size_t>(size * size * 3), 0);
    const double tau = 6.283185307179586;
    for (int64_t r = 0; r < size; ++r)
      for (int64_t c = 0; c < size; ++c) {
        const double x = static_cast<double>(c), y = static_cast<double>(r);
        double field = 0;
        for (const auto& wv : waves) field += wv.ax * std::cos(tau * (wv.fx * x + wv.fy * y) / S + wv.ph);
        const double grain = uni(-0.02, 0.02);
        double px[3];
        for (int ch = 0; ch < 3; ++ch) px[ch] = base[ch] + field + grain;
        for (size_t e = 0; e < ellipses.size(); ++e) {
          const double q = ellipse_q(ellipses[e], x, y);
          const double alpha = std::clamp((1.0 - q) / 0.15 + 1.0, 0.0, 1.0);
          if (alpha <= 0.0) continue;
          const Blob& b = blobs[e];
          const double tex = b.amp * std::cos(tau * (b.fx * x + b.fy * y) / S + b.ph);
          for (int ch = 0; ch < 3; ++ch) px[ch] += alpha * (b.delta[ch] + tex);
        }
        for (const auto& sp : spots) {
          const double d2 = (x - sp.x) * (x - sp.x) + (y - sp.y) * (y - sp.y);
          const double glow = sp.inten * std::exp(-d2 / (2.0 * sp.sigma * sp.sigma));
          for (int ch = 0; ch < 3; ++ch) px[ch] += glow;
        }
        for (int ch = 0; ch < 3; ++ch) {
          const double v = std::clamp(px[ch], 0.0, 1.0);
          img.pixels[static_cast<size_t>((r * size + c) * 3 + ch)] =
              static_cast<uint8_t>(std::lround(v * 255.0));
        }
      }

    ImageU8 m;
    m.h = size;
    m.w = size;
    m.channels = 1;
    m.pixels = mask;
    write_png((fs::path(dir) / "images" / (ids.back() + ".png")).string(), img);
    write_png((fs::path(dir) / "masks" / (ids.back() + ".png")).string(), m);

    json j;
    j["id"] = ids.back();
    json arr = json::array();
    for (const auto& el : ellipses)
      arr.push_back({{"cx", el.cx}, {"cy", el.cy}, {"a", el.a}, {"b", el.b}, {"theta", el.theta}});
    j["ellipses"] = arr;
    meta << j.dump() << '\n';
  }

  write_manifest((fs::path(dir) / "manifest.jsonl").string(), split(ids, seed));
}

}  // namespace mnetsat::data
