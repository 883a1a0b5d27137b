#include "fhvae/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fhvae {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'F', 'H', 'V', 'A', 'E', 'C', 'K', 'P'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>(v >> (8 * b)));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>(v >> (8 * b)));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  void need(std::size_t n) const {
    if (pos_ + n > end_) throw FormatError("checkpoint is truncated");
  }
  std::uint64_t uint(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += width;
    return v;
  }
  std::string str() {
    const auto n = static_cast<std::size_t>(uint(4));
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

const std::string& TensorArchive::get(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint is missing metadata key '" + key + "'");
  return it->second;
}

const Mat& TensorArchive::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("checkpoint is missing tensor '" + name + "'");
  return it->second;
}

std::string encode_archive(const TensorArchive& a) {
  std::string out(kMagic, 8);
  put_u32(out, TensorArchive::kVersion);
  put_u32(out, static_cast<std::uint32_t>(a.meta.size()));
  for (const auto& [k, v] : a.meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(a.tensors.size()));
  for (const auto& [name, m] : a.tensors) {
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_u64(out, std::bit_cast<std::uint64_t>(m(r, c)));
  }
  put_u64(out, fnv1a(out.data(), out.size()));
  return out;
}

TensorArchive decode_archive(const std::string& bytes) {
  if (bytes.size() < 8 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError("not a checkpoint file (bad magic or too short)");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (int b = 0; b < 8; ++b) stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[body + b])) << (8 * b);

  Reader r(bytes, body);
  r.need(8);
  (void)r.uint(4);
  (void)r.uint(4);
  const auto version = static_cast<std::uint32_t>(r.uint(4));
  if (version != TensorArchive::kVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) + " does not match supported version " +
                      std::to_string(TensorArchive::kVersion));
  if (fnv1a(bytes.data(), body) != stored) throw FormatError("checkpoint checksum mismatch (corrupt or truncated)");

  TensorArchive a;
  const auto n_meta = r.uint(4);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    a.meta[k] = r.str();
  }
  const auto n_tensors = r.uint(4);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const auto rows = static_cast<Eigen::Index>(r.uint(4));
    const auto cols = static_cast<Eigen::Index>(r.uint(4));
    r.need(static_cast<std::size_t>(rows * cols) * 8);
    Mat m(rows, cols);
    for (Eigen::Index row = 0; row < rows; ++row)
      for (Eigen::Index c = 0; c < cols; ++c) m(row, c) = std::bit_cast<double>(r.uint(8));
    a.tensors.emplace(std::move(name), std::move(m));
  }
  if (r.pos() != body) throw FormatError("checkpoint has trailing bytes");
  return a;
}

void save_archive(const fs::path& path, const TensorArchive& a) {
  const std::string bytes = encode_archive(a);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

TensorArchive load_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_archive(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double_strict(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(what + ": cannot parse number '" + s + "'");
  }
}

}  // namespace fhvae
