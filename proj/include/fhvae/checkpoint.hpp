#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "fhvae/common.hpp"

namespace fhvae {

/// Named tensors plus string metadata, written as one versioned binary file.
///
/// Layout (little-endian):
///   "FHVAECKP"                              8-byte magic
///   uint32 format version
///   uint32 n_meta, then n_meta x (uint32 len, key bytes, uint32 len, value bytes)
///   uint32 n_tensors, then n_tensors x (uint32 len, name bytes, uint32 rows,
///                                       uint32 cols, rows*cols float64 row-major)
///   uint64 FNV-1a checksum of every preceding byte
///
/// Entries are written in key order, so equal archives give equal bytes.
struct TensorArchive {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::map<std::string, Mat> tensors;

  const std::string& get(const std::string& key) const;
  const Mat& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const { return tensors.contains(name); }
};

std::string encode_archive(const TensorArchive& a);
/// Throws FormatError on bad magic, version mismatch, truncation or checksum failure.
TensorArchive decode_archive(const std::string& bytes);

/// Writes to a temporary sibling and renames it into place.
void save_archive(const std::filesystem::path& path, const TensorArchive& a);
TensorArchive load_archive(const std::filesystem::path& path);

/// Round-trippable decimal rendering of a double.
std::string format_double(double v);
double parse_double_strict(const std::string& s, const std::string& what);

}  // namespace fhvae
