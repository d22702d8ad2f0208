#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vmfnet/tensor.hpp"

namespace vmfnet {

// Versioned binary container of named tensors plus one JSON metadata record.
// Numbers are little-endian; tensor payloads are raw IEEE-754 bytes, so a
// save/load round trip is bit-exact.

struct TensorRecord {
  std::string name;
  char dtype = 'f';  // 'f' float32, 'd' float64
  std::vector<int> shape;
  std::vector<std::uint8_t> raw;
};

struct CheckpointData {
  std::uint32_t version = 1;
  std::string metadata;  // JSON text
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t);

template <typename T>
Tensor<T> from_record(const TensorRecord& rec);

}  // namespace vmfnet
