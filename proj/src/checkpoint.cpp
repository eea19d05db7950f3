#include "grouplane/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace grouplane {

namespace {

constexpr char kCheckpointMagic[4] = {'G', 'L', 'C', 'P'};
constexpr char kStateMagic[4] = {'G', 'L', 'T', 'S'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f32(std::ostream& os, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32(os, bits);
}

float read_f32(std::istream& is) {
  const uint32_t bits = read_u32(is);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

void write_f64(std::ostream& os, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

double read_f64(std::istream& is) {
  const uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

std::string read_name(std::istream& is) {
  const uint32_t len = read_u32(is);
  if (len > (1u << 20)) throw std::runtime_error("checkpoint: absurd name length");
  std::string name(len, '\0');
  is.read(name.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return name;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for write");
  os.write(kCheckpointMagic, 4);
  write_u32(os, kVersion);
  write_u64(os, params.size());
  for (const auto& [name, tensor] : params) {  // std::map iterates lexicographically
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(tensor.rank()));
    for (int64_t e : tensor.shape()) write_u64(os, static_cast<uint64_t>(e));
    for (double v : tensor.values()) write_f32(os, static_cast<float>(v));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  const uint64_t count = read_u64(is);
  std::map<std::string, Tensor> params;
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = read_name(is);
    const uint32_t rank = read_u32(is);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int64_t>(read_u64(is));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = static_cast<double>(read_f32(is));
    params.emplace(name, Tensor::from_values(std::move(shape), std::move(values)));
  }
  return params;
}

void save_state_arrays(const std::string& path,
                       const std::map<std::string, std::vector<double>>& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("state: cannot open " + path + " for write");
  os.write(kStateMagic, 4);
  write_u32(os, kVersion);
  write_u64(os, arrays.size());
  for (const auto& [name, data] : arrays) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, data.size());
    for (double v : data) write_f64(os, v);
  }
  if (!os) throw std::runtime_error("state: write failed for " + path);
}

std::map<std::string, std::vector<double>> load_state_arrays(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("state: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kStateMagic, 4) != 0) {
    throw std::runtime_error("state: bad magic in " + path);
  }
  if (read_u32(is) != kVersion) throw std::runtime_error("state: unsupported version");
  const uint64_t count = read_u64(is);
  std::map<std::string, std::vector<double>> arrays;
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = read_name(is);
    const uint64_t len = read_u64(is);
    std::vector<double> data(len);
    for (double& v : data) v = read_f64(is);
    arrays.emplace(name, std::move(data));
  }
  return arrays;
}

}  // namespace grouplane
