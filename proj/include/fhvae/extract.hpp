#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fhvae/corpus.hpp"
#include "fhvae/model.hpp"

namespace fhvae {

struct UtteranceFeatures {
  std::string utterance_id;
  Mat mu_z1;  // S x z1_dim
  Mat mu_z2;  // S x z2_dim
  Vec pooled_z1;
  Vec pooled_z2;
  Vec pooled_fbank;  // mean over frames
};

/// Posterior means per segment: mu_z2 from the z2 encoder, then mu_z1 from the
/// z1 encoder conditioned on that mean. Returns nullopt (with a warning) when
/// the utterance is shorter than one segment.
std::optional<UtteranceFeatures> extract_features(Fhvae& model, const std::string& utterance_id,
                                                  const FeatureMatrix& feat, int shift = 1);

/// Extracts every manifest entry; `features` aligns with `manifest.entries`.
/// Skipped utterances are absent from the result.
std::vector<UtteranceFeatures> extract_corpus(Fhvae& model, const CorpusManifest& manifest,
                                              const std::vector<FeatureMatrix>& features, int shift = 1);

enum class FeatureKind { kZ1, kZ2, kBoth, kFbank };
FeatureKind feature_kind_from_string(const std::string& s);

/// Writes one feature file per utterance and kind (`<id>.z1.fhvf`,
/// `<id>.z2.fhvf`) plus a manifest per kind (`z1.manifest`, `z2.manifest`)
/// carrying the speakers and labels of `source`. For kFbank the raw frames in
/// `fbank` (aligned with `source.entries`) are written instead. Returns the
/// manifest paths written.
std::vector<std::filesystem::path> export_features(const std::vector<UtteranceFeatures>& features,
                                                   const CorpusManifest& source, const std::filesystem::path& out_dir,
                                                   FeatureKind kind,
                                                   const std::vector<FeatureMatrix>* fbank = nullptr);

}  // namespace fhvae
