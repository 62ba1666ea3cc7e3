#include "lsc/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "lsc/common.hpp"

namespace lsc::ckpt {

namespace {
constexpr char kMagic[4] = {'L', 'S', 'C', 'P'};
constexpr uint8_t kVersion = 1;

void put_u16(std::ostream& os, uint16_t v) {
  const uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
void put_u32(std::ostream& os, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
uint16_t get_u16(std::istream& is) {
  uint8_t b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return uint16_t(b[0] | (b[1] << 8));
}
uint32_t get_u32(std::istream& is) {
  uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

void put_f32_array(std::ostream& os, const std::vector<float>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 4));
  } else {
    for (float f : v) put_u32(os, std::bit_cast<uint32_t>(f));
  }
}
void get_f32_array(std::istream& is, std::vector<float>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * 4));
  } else {
    for (float& f : v) f = std::bit_cast<float>(get_u32(is));
  }
}
}  // namespace

void save(const std::string& path, const std::vector<const ad::Param*>& params,
          const std::string& meta_json) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  os.put(char(kVersion));
  put_u32(os, uint32_t(meta_json.size()));
  os.write(meta_json.data(), std::streamsize(meta_json.size()));
  put_u32(os, uint32_t(params.size()));
  for (const ad::Param* p : params) {
    if (p->name.empty() || p->name.size() > 0xFFFF)
      throw Error("checkpoint parameter name invalid: '" + p->name + "'");
    put_u16(os, uint16_t(p->name.size()));
    os.write(p->name.data(), std::streamsize(p->name.size()));
    os.put(char(uint8_t(p->value.shape.size())));
    for (int d : p->value.shape) put_u32(os, uint32_t(d));
    put_f32_array(os, p->value.data);
  }
  if (!os) throw DataError("write failure on checkpoint: " + path);
}

Loaded load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw StreamError(StreamError::Kind::bad_magic, "not a checkpoint file: " + path);
  const int version = is.get();
  if (version != kVersion)
    throw StreamError(StreamError::Kind::bad_version,
                      "unsupported checkpoint version " + std::to_string(version));
  Loaded out;
  const uint32_t meta_len = get_u32(is);
  out.meta_json.resize(meta_len);
  is.read(out.meta_json.data(), meta_len);
  const uint32_t count = get_u32(is);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = get_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const int ndim = is.get();
    if (ndim < 0 || ndim > 8)
      throw StreamError(StreamError::Kind::corrupt, "checkpoint entry has bad rank");
    std::vector<int> shape(ndim);
    for (int d = 0; d < ndim; ++d) shape[d] = int(get_u32(is));
    if (!is) throw StreamError(StreamError::Kind::truncated, "checkpoint ended mid-entry");
    Tensor t(shape);
    get_f32_array(is, t.data);
    if (!is) throw StreamError(StreamError::Kind::truncated, "checkpoint ended mid-array");
    if (!out.tensors.emplace(name, std::move(t)).second)
      throw StreamError(StreamError::Kind::corrupt, "duplicate checkpoint entry: " + name);
  }
  return out;
}

void restore(const Loaded& loaded, const std::vector<ad::Param*>& params) {
  for (ad::Param* p : params) {
    const auto it = loaded.tensors.find(p->name);
    if (it == loaded.tensors.end())
      throw DataError("checkpoint is missing parameter '" + p->name + "'");
    if (it->second.shape != p->value.shape)
      throw ShapeError("checkpoint parameter '" + p->name + "' has shape " +
                       it->second.shape_str() + ", expected " + p->value.shape_str());
    p->value = it->second;
    p->zero_grad();
  }
}

}  // namespace lsc::ckpt
