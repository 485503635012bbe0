#pragma once
// On-disk formats: flat little-endian tensor payloads (u32 rank, u32 dims,
// f64 data) and the named-tensor checkpoint container with a JSON metadata
// block.

#include <iosfwd>
#include <map>
#include <string>

#include "kacl/tensor.hpp"

namespace kacl {

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

struct Checkpoint {
  std::string metadata_json;  // config hash, seed, artifact version, registry hash
  std::map<std::string, Tensor> tensors;

  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& get(const std::string& name) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace kacl
