#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <type_traits>

#include "fhvae/corpus.hpp"
#include "fhvae/losses.hpp"
#include "fhvae/model.hpp"
#include "fhvae/trainer.hpp"

namespace fhvae {

/// Flat `key = value` settings. Keys are dotted paths such as `train.lr_fhvae`.
using KeyValues = std::map<std::string, std::string>;

// Field visitors: each calls f(name, field&) for every configurable field.
template <class F>
void visit_fields(PriorConfig& c, F&& f) {
  f("var_z1", c.var_z1);
  f("var_z2", c.var_z2);
  f("var_mu2", c.var_mu2);
}

template <class F>
void visit_fields(ModelConfig& c, F&& f) {
  f("feat_dim", c.feat_dim);
  f("seg_len", c.seg_len);
  f("hidden", c.hidden);
  f("layers", c.layers);
  f("z1_dim", c.z1_dim);
  f("z2_dim", c.z2_dim);
  f("disc_hidden", c.disc_hidden);
  f("disc_leak", c.disc_leak);
  f("logvar_limit", c.logvar_limit);
}

template <class F>
void visit_fields(TrainingConfig& c, F&& f) {
  f("lr_fhvae", c.lr_fhvae);
  f("lr_disc", c.lr_disc);
  f("batch_size", c.batch_size);
  f("hier_sample_size", c.hier_sample_size);
  f("max_epochs", c.max_epochs);
  f("patience", c.patience);
  f("w_z2_disc", c.weights.z2_disc);
  f("w_gen", c.weights.gen);
  f("w_ref", c.weights.ref);
  f("w_dstg", c.weights.dstg);
  f("adversarial", c.flags.adversarial);
  f("reference", c.flags.reference);
  f("gen_dys_only", c.flags.gen_dys_only);
  f("disentangle", c.flags.disentangle);
  f("reference_reverse_kl", c.flags.reference_reverse_kl);
  f("seed", c.seed);
  f("n_disc_steps", c.n_disc_steps);
  f("refresh_mu2_per_step", c.refresh_mu2_per_step);
  f("validation_fraction", c.validation_fraction);
  f("train_shift", c.train_shift);
  f("warm_start_disc", c.warm_start_disc);
  f("check_isolation", c.check_isolation);
  f("log_steps", c.log_steps);
}

template <class F>
void visit_fields(FrontendConfig& c, F&& f) {
  f("sample_rate", c.sample_rate);
  f("window_ms", c.window_ms);
  f("hop_ms", c.hop_ms);
  f("n_mels", c.n_mels);
  f("fmin", c.fmin);
  f("fmax", c.fmax);
  f("log_floor", c.log_floor);
}

template <class F>
void visit_fields(SynthConfig& c, F&& f) {
  f("n_sequences", c.n_sequences);
  f("segments_per_sequence", c.segments_per_sequence);
  f("seq_factor_dim", c.seq_factor_dim);
  f("seg_factor_dim", c.seg_factor_dim);
  f("domain_shift_strength", c.domain_shift_strength);
  f("noise_std", c.noise_std);
  f("seed", c.seed);
  f("obs_dim", c.obs_dim);
  f("frames_per_segment", c.frames_per_segment);
  f("n_speakers", c.n_speakers);
  f("dysarthric_fraction", c.dysarthric_fraction);
  f("intelligibility_lo", c.intelligibility_lo);
  f("intelligibility_hi", c.intelligibility_hi);
  f("control_intelligibility", c.control_intelligibility);
  f("n_labels", c.n_labels);
  f("prototype_scale", c.prototype_scale);
  f("content_std", c.content_std);
  f("speaker_std", c.speaker_std);
  f("sequence_std", c.sequence_std);
  f("world_seed", c.world_seed);
  f("speaker_prefix", c.speaker_prefix);
}

std::string render_value(int v);
std::string render_value(double v);
std::string render_value(bool v);
std::string render_value(std::uint64_t v);
std::string render_value(const std::string& v);

/// Strict parsers; throw ConfigError naming `key`.
void parse_value(const std::string& key, const std::string& text, int& out);
void parse_value(const std::string& key, const std::string& text, double& out);
void parse_value(const std::string& key, const std::string& text, bool& out);
void parse_value(const std::string& key, const std::string& text, std::uint64_t& out);
void parse_value(const std::string& key, const std::string& text, std::string& out);

/// Writes every field of `c` as `prefix.name`.
template <class C>
void store_fields(KeyValues& kv, const std::string& prefix, const C& c) {
  visit_fields(const_cast<C&>(c), [&](const char* name, auto& field) { kv[prefix + "." + name] = render_value(field); });
}

/// Reads the fields of `c` present under `prefix`; other keys are ignored.
template <class C>
void load_fields(const KeyValues& kv, const std::string& prefix, C& c) {
  visit_fields(c, [&](const char* name, auto& field) {
    const std::string key = prefix + "." + name;
    auto it = kv.find(key);
    if (it != kv.end()) parse_value(key, it->second, field);
  });
}

/// Everything a CLI run can be configured with.
struct RunSettings {
  ModelConfig model;
  PriorConfig priors;
  TrainingConfig train;
  FrontendConfig frontend;
  SynthConfig synth;
  int workers = 1;

  KeyValues to_kv() const;
  /// Applies known keys; unknown keys raise ConfigError.
  void apply(const KeyValues& kv);
  void validate() const;
};

/// Reads `key = value` lines; `#` starts a comment; blank lines are skipped.
KeyValues read_config_file(const std::filesystem::path& path);
void write_config_file(const std::filesystem::path& path, const KeyValues& kv);
/// Parses "key=value" override strings.
KeyValues parse_overrides(const std::vector<std::string>& items);

}  // namespace fhvae
