#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "enf/tensor.hpp"

namespace enf {

/// Named tensors plus opaque UTF-8 blobs in the "ENFT" binary layout:
///
///   "ENFT" | u32 version | u32 count |
///   per entry: u32 name_len | name | u8 dtype | u32 rank | u64 dims[rank] | payload
///
/// dtype 0 = f32, 1 = f64, 2 = raw bytes (rank 1, used for JSON metadata).
/// All integers and floats are little-endian. Entry order is preserved.
class TensorArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(std::string name, Tensor tensor);
  void put_blob(std::string name, std::string bytes);

  bool contains(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  const std::string& blob(const std::string& name) const;
  std::vector<std::string> names() const;

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  struct Entry {
    std::string name;
    std::variant<Tensor, std::string> payload;
  };
  const Entry* find(const std::string& name) const;

  std::vector<Entry> entries_;
};

}  // namespace enf
