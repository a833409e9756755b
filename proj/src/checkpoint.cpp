#include "mnetsat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace mnetsat::train {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace {

constexpr char kMagic[5] = {'M', 'S', 'A', 'T', '1'};

void put_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamBundle<float>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 5);
  for (const std::string& name : params.names()) {
    const Tensor<float>& t = params.at(name);
    put_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(f, static_cast<uint32_t>(t.dim(i)));
    f.write(reinterpret_cast<const char*>(t.cdata()),
            static_cast<std::streamsize>(t.numel() * 4));
  }
  if (!f) throw std::runtime_error("short write to checkpoint: " + path);
}

void load_checkpoint(const std::string& path, ParamBundle<float>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[5];
  f.read(magic, 5);
  if (!f || std::memcmp(magic, kMagic, 5) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);

  std::set<std::string> seen;
  while (true) {
    const uint32_t name_len = get_u32(f);
    if (f.eof()) break;
    if (!f || name_len == 0 || name_len > 4096)
      throw std::runtime_error("corrupt checkpoint record in " + path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const uint32_t rank = get_u32(f);
    if (!f || rank > 4) throw std::runtime_error("corrupt checkpoint rank in " + path);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = get_u32(f);
    if (!params.has(name))
      throw std::runtime_error("checkpoint contains unknown parameter '" + name + "'");
    Tensor<float>& dst = params.at(name);
    if (dst.shape() != shape)
      throw std::runtime_error("checkpoint shape " + shape_str(shape) + " for '" + name +
                               "' does not match model " + shape_str(dst.shape()));
    if (!seen.insert(name).second)
      throw std::runtime_error("duplicate checkpoint record '" + name + "'");
    f.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.numel() * 4));
    if (!f) throw std::runtime_error("truncated checkpoint data in " + path);
  }
  if (seen.size() != params.size())
    throw std::runtime_error("checkpoint is missing " +
                             std::to_string(params.size() - seen.size()) + " parameter(s)");
}

}  // namespace mnetsat::train
