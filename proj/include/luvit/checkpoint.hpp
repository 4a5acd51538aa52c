#pragma once

// Named-tensor container and its binary encoding.
//
//   "LUVT" | u32 version | u32 tensor_count
//   per tensor: u32 name_len | name (UTF-8) | u8 rank | u64 dims[rank] | u8 trainable | f32 data[prod(dims)]
//   u64 step | u64 config_len | config (UTF-8)
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "luvit/tensor.hpp"

namespace luvit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  bool trainable = false;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<CheckpointTensor> tensors;
  std::uint64_t step = 0;
  std::string config;

  const CheckpointTensor* find(const std::string& name) const;
  /// Like find() but throws LoadError naming the missing tensor.
  const CheckpointTensor& require(const std::string& name) const;

  void add(std::string name, Shape shape, std::vector<float> data, bool trainable = false);
  template <typename S>
  void add(const std::string& name, const Tensor<S>& t, bool trainable) {
    std::vector<float> data(static_cast<std::size_t>(t.numel()));
    for (Index i = 0; i < t.numel(); ++i) data[i] = static_cast<float>(t.value()[i]);
    add(name, t.shape(), std::move(data), trainable);
  }
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename S>
Tensor<S> to_tensor(const CheckpointTensor& t) {
  Buffer<S> b(static_cast<Index>(t.data.size()));
  for (std::size_t i = 0; i < t.data.size(); ++i) b[static_cast<Index>(i)] = static_cast<S>(t.data[i]);
  return Tensor<S>(t.shape, std::move(b));
}

}  // namespace luvit
