#pragma once

// Keyed binary container used for checkpoints and probe heads.
//
// Layout (all integers little-endian):
//   magic     8 bytes  "IMPASHAR"
//   version   u32      kArchiveVersion
//   count     u32      number of entries
//   entries, sorted by key:
//     key_len u32, key bytes
//     kind    u8       1 = float64 tensor, 2 = int64, 3 = string
//     tensor: rank u32, dims u64[rank], float64[prod(dims)]
//     int64:  i64
//     string: len u64, bytes
//
// Entries are written in key order, so identical contents always serialize to
// identical bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include "impash/tensor.hpp"

namespace impash {

inline constexpr std::uint32_t kArchiveVersion = 1;

class Archive {
 public:
  using Value = std::variant<Tensor, std::int64_t, std::string>;

  void put(const std::string& key, Tensor value) { entries_[key] = std::move(value); }
  void put(const std::string& key, std::int64_t value) { entries_[key] = value; }
  void put(const std::string& key, std::string value) { entries_[key] = std::move(value); }

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  const Tensor& tensor(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  const std::string& text(const std::string& key) const;

  const std::map<std::string, Value>& entries() const { return entries_; }

  std::string serialize() const;
  static Archive deserialize(const std::string& bytes);

  // Writes to a temporary sibling and renames it into place.
  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Value> entries_;
};

}  // namespace impash
