// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container.
//
//   "SARA" | u16 version | u32 count
//   count × { u16 name_len | name | u8 dtype | u8 ndim | ndim × u32 dim | payload }
//   u32 CRC32 of every preceding byte
//
// dtype codes: 0 = f64, 1 = f32, 2 = bool bitset (LSB-first, ⌈numel/8⌉ bytes).
// All integers and floats are little-endian.
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sara/mask.hpp"
#include "sara/param_store.hpp"
#include "sara/sparse_mask.hpp"
#include "sara/tensor.hpp"

namespace sara {

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Checkpoint {
 public:
  struct Entry {
    std::string name;
    DType dtype = DType::f64;  // ignored for masks
    std::variant<Tensor, MatrixMask> value;
  };

  void put(std::string name, Tensor value, DType dtype = DType::f64);
  void put(std::string name, MatrixMask mask);
  void put_params(const std::string& prefix, const ParamStore& params, DType dtype = DType::f64);
  void put_masks(const std::string& prefix, const SparseMask& mask);

  bool contains(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  const MatrixMask& mask(const std::string& name) const;

  /// Entries named prefix + x, returned as a ParamStore keyed by x.
  ParamStore params(const std::string& prefix) const;
  SparseMask masks(const std::string& prefix, double threshold, SelectionMode mode) const;
  /// Suffixes of every entry name that starts with `prefix`.
  std::vector<std::string> suffixes(const std::string& prefix) const;

  const std::vector<Entry>& entries() const { return entries_; }

  friend bool operator==(const Checkpoint&, const Checkpoint&);

 private:
  const Entry& find(const std::string& name) const;
  std::vector<Entry> entries_;
};

inline bool operator==(const Checkpoint::Entry& a, const Checkpoint::Entry& b) {
  return a.name == b.name && a.dtype == b.dtype && a.value == b.value;
}
inline bool operator==(const Checkpoint& a, const Checkpoint& b) { return a.entries_ == b.entries_; }

std::string encode_checkpoint(const Checkpoint& ck);
/// Throws CheckpointError on bad magic, version, truncation or CRC mismatch.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sara
