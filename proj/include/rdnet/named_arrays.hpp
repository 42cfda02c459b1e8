#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rdnet {

// One named float32 array.
struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;
};

// Ordered container of named float32 arrays. On-disk layout, all integers
// little-endian:
//   "RDN1" | u32 count | count x (u16 name_len | name | u8 rank |
//                                 rank x u32 extent | float32 payload)
// Entry order is preserved, so write(read(bytes)) == bytes.
class NamedArrays {
 public:
  void add(NamedArray entry);
  void add(std::string name, std::vector<std::uint32_t> extents, std::vector<float> values);
  // Stores text one byte per float (values 0..255). The container only holds
  // float32 arrays; this keeps metadata inside the same file.
  void add_text(std::string name, std::string_view text);

  const NamedArray* find(std::string_view name) const;
  const NamedArray& at(std::string_view name) const;
  std::optional<std::string> text(std::string_view name) const;

  const std::vector<NamedArray>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::vector<std::uint8_t> serialize() const;
  static NamedArrays parse(const std::vector<std::uint8_t>& bytes);

  void write(const std::filesystem::path& path) const;
  static NamedArrays read(const std::filesystem::path& path);

 private:
  std::vector<NamedArray> entries_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace rdnet
