#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "fhvae/corpus.hpp"

namespace fhvae {

namespace fs = std::filesystem;

Domain domain_from_int(int v) {
  if (v == 0) return Domain::kControl;
  if (v == 1) return Domain::kDysarthric;
  throw ContractError("domain label must be 0 or 1, got " + std::to_string(v));
}

void SpeakerMeta::validate() const {
  if (speaker_id.empty()) throw ContractError("speaker id must not be empty");
  if (intelligibility && !(*intelligibility >= 0.0 && *intelligibility <= 100.0))
    throw ContractError("speaker " + speaker_id + ": intelligibility must lie in [0, 100]");
}

void CorpusManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& [id, meta] : speakers) {
    meta.validate();
    if (id != meta.speaker_id) throw ContractError("speaker map key " + id + " differs from its speaker id");
  }
  for (const auto& e : entries) {
    if (e.utterance_id.empty()) throw ContractError("utterance id must not be empty");
    if (!seen.insert(e.utterance_id).second) throw ContractError("duplicate utterance id " + e.utterance_id);
    if (!speakers.contains(e.speaker_id))
      throw ContractError("utterance " + e.utterance_id + " refers to unknown speaker " + e.speaker_id);
    if (e.labels) {
      for (int l : *e.labels)
        if (l < 0 || l >= n_labels)
          throw ContractError("utterance " + e.utterance_id + ": label " + std::to_string(l) + " outside [0, " +
                              std::to_string(n_labels) + ")");
    }
    if (!e.features && e.path.empty()) throw ContractError("utterance " + e.utterance_id + " has no features or path");
  }
}

const SpeakerMeta& CorpusManifest::speaker_of(const ManifestEntry& e) const {
  auto it = speakers.find(e.speaker_id);
  if (it == speakers.end()) throw ContractError("unknown speaker " + e.speaker_id);
  return it->second;
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::vector<int> parse_labels(const std::string& s, const std::string& where) {
  std::vector<int> out;
  if (s == "-") return out;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FormatError(where + ": bad label id '" + tok + "'");
    }
  }
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": bad number '" + s + "'");
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(what + ": truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr char kFeatMagic[4] = {'F', 'H', 'V', 'F'};
constexpr std::uint32_t kFeatVersion = 1;

}  // namespace

CorpusManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  CorpusManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (tok[0] == "n_labels" && tok.size() == 2) {
      m.n_labels = static_cast<int>(parse_double(tok[1], where));
    } else if (tok[0] == "speaker" && tok.size() == 4) {
      SpeakerMeta s;
      s.speaker_id = tok[1];
      if (tok[2] != "0" && tok[2] != "1") throw FormatError(where + ": domain must be 0 or 1");
      s.domain = tok[2] == "1" ? Domain::kDysarthric : Domain::kControl;
      if (tok[3] != "-") s.intelligibility = parse_double(tok[3], where);
      if (!m.speakers.emplace(s.speaker_id, s).second) throw FormatError(where + ": duplicate speaker " + s.speaker_id);
    } else if (tok[0] == "utt" && (tok.size() == 4 || tok.size() == 5)) {
      ManifestEntry e;
      e.utterance_id = tok[1];
      fs::path p(tok[2]);
      e.path = (p.is_relative() ? base / p : p).lexically_normal().string();
      e.speaker_id = tok[3];
      if (tok.size() == 5 && tok[4] != "-") e.labels = parse_labels(tok[4], where);
      m.entries.push_back(std::move(e));
    } else {
      throw FormatError(where + ": unrecognized record '" + tok[0] + "'");
    }
  }
  m.validate();
  return m;
}

void write_manifest(const CorpusManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# fhvae corpus manifest v1\n";
  out << "n_labels " << manifest.n_labels << '\n';
  for (const auto& [id, s] : manifest.speakers) {
    out << "speaker " << id << ' ' << label_of(s.domain) << ' '
        << (s.intelligibility ? format_double(*s.intelligibility) : std::string("-")) << '\n';
  }
  const fs::path base = path.parent_path();
  for (const auto& e : manifest.entries) {
    if (e.path.empty()) throw ContractError("write_manifest: entry " + e.utterance_id + " has no path");
    fs::path p(e.path);
    std::string shown = p.string();
    if (p.is_absolute() && !base.empty()) {
      const auto rel = fs::relative(p, fs::absolute(base));
      if (!rel.empty()) shown = rel.string();
    }
    out << "utt " << e.utterance_id << ' ' << shown << ' ' << e.speaker_id << ' ';
    if (e.labels && !e.labels->empty()) {
      for (std::size_t i = 0; i < e.labels->size(); ++i) out << (i ? "," : "") << (*e.labels)[i];
    } else {
      out << '-';
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

void write_feature_file(const fs::path& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out.write(kFeatMagic, 4);
  put_u32(out, kFeatVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  std::vector<unsigned char> buf(static_cast<std::size_t>(m.size()) * 4);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c)));
      for (int b = 0; b < 4; ++b) buf[k++] = static_cast<unsigned char>(bits >> (8 * b));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing feature file " + path.string());
}

Mat read_feature_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatMagic, 4) != 0)
    throw FormatError(path.string() + ": not a feature file");
  const auto version = get_u32(in, path.string());
  if (version != kFeatVersion)
    throw FormatError(path.string() + ": unsupported feature file version " + std::to_string(version));
  const auto rows = get_u32(in, path.string());
  const auto cols = get_u32(in, path.string());
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw FormatError(path.string() + ": truncated data");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  Mat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[k++]) << (8 * b);
      m(r, c) = std::bit_cast<float>(bits);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

int segment_count(int frames, int seg_len, int shift) {
  require(shift >= 1, "segment shift must be >= 1");
  require(seg_len >= 1, "segment length must be >= 1");
  if (frames < seg_len) return 0;
  return (frames - seg_len) / shift + 1;
}

std::vector<SegmentRecord> segment_utterance(const FeatureMatrix& feat, int seg_len, int shift, int sequence_id,
                                             Domain domain) {
  const int n = segment_count(static_cast<int>(feat.rows()), seg_len, shift);
  std::vector<SegmentRecord> out;
  if (n == 0) {
    warn("utterance with " + std::to_string(feat.rows()) + " frames is shorter than one segment of " +
         std::to_string(seg_len) + "; dropped");
    return out;
  }
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    SegmentRecord s;
    s.frame_offset = k * shift;
    s.x = feat.middleRows(s.frame_offset, seg_len);
    s.sequence_id = sequence_id;
    s.domain = domain;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

NormStats fit_norm_stats(std::span<const FeatureMatrix> features) {
  require(!features.empty(), "fit_norm_stats: no features");
  const Eigen::Index D = features.front().cols();
  Vec sum = Vec::Zero(D), sq = Vec::Zero(D);
  double n = 0;
  for (const auto& f : features) {
    require(f.cols() == D, "fit_norm_stats: inconsistent feature dimension");
    sum += f.colwise().sum().transpose();
    n += static_cast<double>(f.rows());
  }
  require(n > 0, "fit_norm_stats: no frames");
  NormStats st;
  st.mean = sum / n;
  for (const auto& f : features) sq += (f.rowwise() - st.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  st.scale = (sq / n).array().sqrt();
  for (Eigen::Index d = 0; d < D; ++d) {
    if (!(st.scale(d) > 1e-12)) {
      warn("feature dimension " + std::to_string(d) + " has zero variance; using unit scale");
      st.scale(d) = 1.0;
    }
  }
  return st;
}

FeatureMatrix normalize(const FeatureMatrix& x, const NormStats& stats) {
  require(x.cols() == stats.mean.size(), "normalize: dimension mismatch");
  return ((x.rowwise() - stats.mean.transpose()).array().rowwise() / stats.scale.transpose().array()).matrix();
}

FeatureMatrix denormalize(const FeatureMatrix& x, const NormStats& stats) {
  require(x.cols() == stats.mean.size(), "denormalize: dimension mismatch");
  return ((x.array().rowwise() * stats.scale.transpose().array()).rowwise() + stats.mean.transpose().array()).matrix();
}

std::pair<std::vector<FeatureMatrix>, NormStats> normalize_corpus(std::span<const FeatureMatrix> features,
                                                                  const std::optional<NormStats>& stats) {
  NormStats st = stats ? *stats : fit_norm_stats(features);
  std::vector<FeatureMatrix> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(normalize(f, st));
  return {std::move(out), std::move(st)};
}

void save_norm_stats(const fs::path& path, const NormStats& stats) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write normalization stats " + path.string());
  out << "# fhvae norm stats v1\n" << stats.mean.size() << '\n';
  for (Eigen::Index d = 0; d < stats.mean.size(); ++d)
    out << format_double(stats.mean(d)) << ' ' << format_double(stats.scale(d)) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

NormStats load_norm_stats(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open normalization stats " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "# fhvae norm stats v1") throw FormatError(path.string() + ": not a norm stats file");
  long n = 0;
  if (!(in >> n) || n < 0) throw FormatError(path.string() + ": bad dimension");
  NormStats st;
  st.mean.resize(n);
  st.scale.resize(n);
  for (long d = 0; d < n; ++d)
    if (!(in >> st.mean(d) >> st.scale(d))) throw FormatError(path.string() + ": truncated");
  return st;
}

std::uint64_t corpus_digest(const CorpusManifest& manifest) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  auto feed_str = [&](const std::string& s) {
    feed(s.data(), s.size());
    feed("\0", 1);
  };
  feed(&manifest.n_labels, sizeof manifest.n_labels);
  for (const auto& [id, s] : manifest.speakers) {
    feed_str(id);
    const int d = label_of(s.domain);
    feed(&d, sizeof d);
    const double intel = s.intelligibility.value_or(-1.0);
    feed(&intel, sizeof intel);
  }
  for (const auto& e : manifest.entries) {
    feed_str(e.utterance_id);
    feed_str(e.speaker_id);
    if (e.labels)
      for (int l : *e.labels) feed(&l, sizeof l);
    if (e.features) feed(e.features->data(), static_cast<std::size_t>(e.features->size()) * sizeof(double));
  }
  return h;
}

}  // namespace fhvae
