#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <thread>

#include "fhvae/corpus.hpp"

namespace fhvae {

namespace fs = std::filesystem;

int FrontendConfig::window_samples() const {
  return static_cast<int>(std::lround(window_ms * 1e-3 * sample_rate));
}

int FrontendConfig::hop_samples() const { return static_cast<int>(std::lround(hop_ms * 1e-3 * sample_rate)); }

int FrontendConfig::fft_size() const {
  int n = 1;
  while (n < window_samples()) n <<= 1;
  return n;
}

int FrontendConfig::frame_count(std::size_t n_samples) const {
  const auto win = static_cast<std::size_t>(window_samples());
  const auto hop = static_cast<std::size_t>(hop_samples());
  if (n_samples == 0) return 0;
  if (n_samples < win) return 1;
  return static_cast<int>(1 + (n_samples - win) / hop);
}

void FrontendConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("frontend: sample_rate must be positive");
  if (window_samples() < 2 || hop_samples() < 1) throw ConfigError("frontend: window/hop too small for sample rate");
  if (n_mels < 1) throw ConfigError("frontend: n_mels must be >= 1");
  if (!(fmin >= 0.0 && fmax > fmin)) throw ConfigError("frontend: need 0 <= fmin < fmax");
  if (fmax > sample_rate / 2.0 + 1e-9)
    throw ConfigError("frontend: fmax " + std::to_string(fmax) + " exceeds Nyquist for sample rate " +
                      std::to_string(sample_rate));
  if (!(log_floor > 0.0)) throw ConfigError("frontend: log_floor must be positive");
}

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex g_plan_mutex;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// n_mels x (n_fft/2 + 1) triangular filters with centers evenly spaced in mel.
Mat mel_filterbank(const FrontendConfig& cfg) {
  const int n_fft = cfg.fft_size();
  const int n_bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m) edges[m] = mel_to_hz(lo + (hi - lo) * m / (cfg.n_mels + 1));
  Mat fb = Mat::Zero(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / n_fft;
      if (f > left && f < center) fb(m, k) = (f - left) / (center - left);
      else if (f >= center && f < right) fb(m, k) = (right - f) / (right - center);
    }
  }
  return fb;
}

struct FftwPlan {
  fftw_plan plan = nullptr;
  double* in = nullptr;
  fftw_complex* out = nullptr;

  explicit FftwPlan(int n) {
    std::lock_guard lock(g_plan_mutex);
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  ~FftwPlan() {
    std::lock_guard lock(g_plan_mutex);
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
};

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

FeatureMatrix compute_logmel(const Waveform& audio, const FrontendConfig& cfg) {
  cfg.validate();
  if (audio.sample_rate != cfg.sample_rate)
    throw ConfigError("audio sample rate " + std::to_string(audio.sample_rate) + " differs from frontend rate " +
                      std::to_string(cfg.sample_rate) + " and no resampler is available");
  if (audio.samples.empty()) throw EmptyInputError("compute_logmel: empty audio");

  const int win = cfg.window_samples(), hop = cfg.hop_samples(), n_fft = cfg.fft_size();
  const int frames = cfg.frame_count(audio.samples.size());
  const Mat fb = mel_filterbank(cfg);
  std::vector<double> window(win);
  for (int i = 0; i < win; ++i) window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (win - 1));

  FftwPlan fft(n_fft);
  Vec power(n_fft / 2 + 1);
  FeatureMatrix out(frames, cfg.n_mels);
  const double floor_log = std::log(cfg.log_floor);
  for (int t = 0; t < frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * hop;
    std::fill(fft.in, fft.in + n_fft, 0.0);
    for (int i = 0; i < win && start + i < audio.samples.size(); ++i) fft.in[i] = audio.samples[start + i] * window[i];
    fftw_execute_dft_r2c(fft.plan, fft.in, fft.out);
    for (int k = 0; k <= n_fft / 2; ++k) power(k) = fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
    const Vec energies = fb * power;
    for (int m = 0; m < cfg.n_mels; ++m)
      out(t, m) = energies(m) > cfg.log_floor ? std::log(energies(m)) : floor_log;
  }
  return out;
}

Waveform read_wav(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError(path.string() + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  int format = 0, channels = 0, bits = 0;
  Waveform w;
  bool have_fmt = false, have_data = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = le32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + size > bytes.size()) throw FormatError(path.string() + ": truncated chunk");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0 && size >= 16) {
      format = le16(body);
      channels = le16(body + 2);
      w.sample_rate = static_cast<int>(le32(body + 4));
      bits = le16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path.string() + ": data chunk before fmt chunk");
      if (channels != 1) throw ConfigError(path.string() + ": mono audio required");
      if (format == 1 && bits == 16) {
        w.samples.resize(size / 2);
        for (std::size_t i = 0; i < w.samples.size(); ++i)
          w.samples[i] = static_cast<std::int16_t>(le16(body + 2 * i)) / 32768.0;
      } else if (format == 3 && bits == 32) {
        w.samples.resize(size / 4);
        for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = std::bit_cast<float>(le32(body + 4 * i));
      } else {
        throw FormatError(path.string() + ": only PCM16 and float32 WAVE are supported");
      }
      have_data = true;
    }
    pos += 8 + size + (size & 1);
  }
  if (!have_data) throw FormatError(path.string() + ": no data chunk");
  return w;
}

void write_wav_pcm16(const fs::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  auto u32 = [&out](std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.put(static_cast<char>(v >> (8 * b)));
  };
  auto u16 = [&out](std::uint16_t v) {
    out.put(static_cast<char>(v));
    out.put(static_cast<char>(v >> 8));
  };
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  u32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(1);
  u32(static_cast<std::uint32_t>(w.sample_rate));
  u32(static_cast<std::uint32_t>(w.sample_rate) * 2);
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(data_bytes);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::pair<std::string, FeatureMatrix>> load_corpus_features(const CorpusManifest& manifest,
                                                                        const fs::path& base_dir,
                                                                        const FrontendConfig& frontend, int workers) {
  std::vector<const ManifestEntry*> order;
  for (const auto& e : manifest.entries) order.push_back(&e);
  std::sort(order.begin(), order.end(),
            [](const ManifestEntry* a, const ManifestEntry* b) { return a->utterance_id < b->utterance_id; });

  std::vector<std::pair<std::string, FeatureMatrix>> out(order.size());
  std::vector<std::exception_ptr> errors(order.size());
  auto load_one = [&](std::size_t i) {
    const ManifestEntry& e = *order[i];
    try {
      out[i].first = e.utterance_id;
      if (e.features) {
        out[i].second = *e.features;
        return;
      }
      fs::path p(e.path);
      if (p.is_relative()) p = base_dir / p;
      if (p.extension() == ".wav") out[i].second = compute_logmel(read_wav(p), frontend);
      else out[i].second = read_feature_file(p);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(order.size())));
  if (n_workers == 1) {
    for (std::size_t i = 0; i < order.size(); ++i) load_one(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < order.size(); i += n_workers) load_one(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace fhvae
