#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaseg/autodiff/tensor.hpp"

namespace metaseg::trainer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u64 = 2 };

std::size_t dtype_size(DType dtype);

struct TensorRecord {
  std::string name;
  DType dtype = DType::f32;
  ad::Shape shape;
  std::vector<std::uint8_t> payload;  // little-endian values

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_echo;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
  const TensorRecord& at(const std::string& name) const;  // FormatError if missing

  template <typename T>
  void put(const std::string& name, const ad::Tensor<T>& tensor);
  void put_u64(const std::string& name, std::uint64_t value);

  // Converts between f32 and f64 payloads when T differs from the stored type.
  template <typename T>
  ad::Tensor<T> get(const std::string& name) const;
  std::uint64_t get_u64(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Layout: "MSGN", u32 version, u32-length config echo, u64 record count,
// records (u32-length name, u8 dtype, u32 rank, u64 extents, payload), then a
// CRC32 of every preceding byte. All integers little-endian.
std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metaseg::trainer
