#include "kacl/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace kacl {

namespace {

constexpr char kMagic[8] = {'K', 'A', 'C', 'L', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("truncated stream while reading u32");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64_le(std::ostream& os, const double* p, std::size_t n) {
  // x86/aarch64 are little-endian; memcpy through u64 keeps this explicit.
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t v;
    std::memcpy(&v, p + i, 8);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

void read_f64_le(std::istream& is, double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw DataError("truncated stream while reading f64 payload");
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    std::memcpy(p + i, &v, 8);
  }
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
  write_f64_le(os, t.data(), t.size());
}

Tensor read_tensor(std::istream& is) {
  const std::uint32_t rank = read_u32(is);
  if (rank > 8) throw DataError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = read_u32(is);
  Tensor t = Tensor::zeros(shape);
  read_f64_le(is, t.data(), t.size());
  return t;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint missing tensor '" + name + "'");
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  write_u32(os, static_cast<std::uint32_t>(metadata_json.size()));
  os.write(metadata_json.data(), static_cast<std::streamsize>(metadata_json.size()));
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw DataError("write failure on checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  Checkpoint ckpt;
  const std::uint32_t mlen = read_u32(is);
  ckpt.metadata_json.resize(mlen);
  is.read(ckpt.metadata_json.data(), mlen);
  if (!is) throw DataError("truncated checkpoint metadata: " + path);
  const std::uint32_t count = read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t nlen = read_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw DataError("truncated checkpoint entry name: " + path);
    ckpt.tensors.emplace(std::move(name), read_tensor(is));
  }
  return ckpt;
}

}  // namespace kacl
