#include "fhvae/extract.hpp"

#include <map>

namespace fhvae {

namespace fs = std::filesystem;

std::optional<UtteranceFeatures> extract_features(Fhvae& model, const std::string& utterance_id,
                                                  const FeatureMatrix& feat, int shift) {
  require(shift >= 1, "extract_features: shift must be >= 1");
  const ModelConfig& mc = model.config();
  require(feat.cols() == mc.feat_dim, "extract_features: feature dimension does not match the model");
  const auto segments = segment_utterance(feat, mc.seg_len, shift);
  if (segments.empty()) return std::nullopt;
  const auto S = static_cast<Eigen::Index>(segments.size());
  UtteranceFeatures out;
  out.utterance_id = utterance_id;
  out.mu_z1.resize(S, mc.z1_dim);
  out.mu_z2.resize(S, mc.z2_dim);
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index start = 0; start < S; start += kChunk) {
    const Eigen::Index n = std::min(kChunk, S - start);
    const Mat packed = pack_segments(std::span<const SegmentRecord>(segments.data() + start, static_cast<std::size_t>(n)));
    auto [m1, m2] = model.posterior_means(packed, static_cast<int>(n));
    out.mu_z1.middleRows(start, n) = m1;
    out.mu_z2.middleRows(start, n) = m2;
  }
  out.pooled_z1 = out.mu_z1.colwise().mean().transpose();
  out.pooled_z2 = out.mu_z2.colwise().mean().transpose();
  out.pooled_fbank = feat.colwise().mean().transpose();
  return out;
}

std::vector<UtteranceFeatures> extract_corpus(Fhvae& model, const CorpusManifest& manifest,
                                              const std::vector<FeatureMatrix>& features, int shift) {
  require(features.size() == manifest.entries.size(), "extract_corpus: one feature matrix per manifest entry");
  std::vector<UtteranceFeatures> out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    auto f = extract_features(model, manifest.entries[i].utterance_id, features[i], shift);
    if (f) out.push_back(std::move(*f));
  }
  return out;
}

FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "z1") return FeatureKind::kZ1;
  if (s == "z2") return FeatureKind::kZ2;
  if (s == "both") return FeatureKind::kBoth;
  if (s == "fbank") return FeatureKind::kFbank;
  throw ConfigError("unknown feature kind '" + s + "' (expected z1, z2, both or fbank)");
}

namespace {

fs::path write_kind(const std::vector<std::pair<std::string, const Mat*>>& items, const CorpusManifest& source,
                    const fs::path& out_dir, const std::string& tag) {
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : source.entries) by_id[e.utterance_id] = &e;
  CorpusManifest m;
  m.n_labels = source.n_labels;
  for (const auto& [id, mat] : items) {
    auto it = by_id.find(id);
    require(it != by_id.end(), "export_features: utterance " + id + " is not in the source manifest");
    const std::string file = id + "." + tag + ".fhvf";
    write_feature_file(out_dir / file, *mat);
    ManifestEntry e;
    e.utterance_id = id;
    e.path = file;
    e.speaker_id = it->second->speaker_id;
    e.labels = it->second->labels;
    if (!m.speakers.contains(e.speaker_id)) m.speakers[e.speaker_id] = source.speaker_of(*it->second);
    m.entries.push_back(std::move(e));
  }
  const fs::path manifest_path = out_dir / (tag + ".manifest");
  write_manifest(m, manifest_path);
  return manifest_path;
}

}  // namespace

std::vector<fs::path> export_features(const std::vector<UtteranceFeatures>& features, const CorpusManifest& source,
                                      const fs::path& out_dir, FeatureKind kind, const std::vector<FeatureMatrix>* fbank) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());
  std::vector<fs::path> written;
  if (kind == FeatureKind::kFbank) {
    require(fbank != nullptr && fbank->size() == source.entries.size(),
            "export_features: fbank export needs frames for every source entry");
    std::vector<std::pair<std::string, const Mat*>> items;
    for (std::size_t i = 0; i < source.entries.size(); ++i) items.emplace_back(source.entries[i].utterance_id, &(*fbank)[i]);
    written.push_back(write_kind(items, source, out_dir, "fbank"));
    return written;
  }
  if (kind == FeatureKind::kZ1 || kind == FeatureKind::kBoth) {
    std::vector<std::pair<std::string, const Mat*>> items;
    for (const auto& f : features) items.emplace_back(f.utterance_id, &f.mu_z1);
    written.push_back(write_kind(items, source, out_dir, "z1"));
  }
  if (kind == FeatureKind::kZ2 || kind == FeatureKind::kBoth) {
    std::vector<std::pair<std::string, const Mat*>> items;
    for (const auto& f : features) items.emplace_back(f.utterance_id, &f.mu_z2);
    written.push_back(write_kind(items, source, out_dir, "z2"));
  }
  return written;
}

}  // namespace fhvae
