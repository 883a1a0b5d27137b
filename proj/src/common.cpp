#include "fhvae/common.hpp"
#include "fhvae/rng.hpp"

#include <cmath>
#include <iostream>
#include <numbers>

namespace fhvae {

namespace {
std::atomic<std::uint64_t> g_warnings{0};
std::atomic<bool> g_quiet{false};
}  // namespace

void warn(const std::string& message) {
  g_warnings.fetch_add(1, std::memory_order_relaxed);
  if (!g_quiet.load(std::memory_order_relaxed)) std::clog << "warning: " << message << '\n';
}

std::uint64_t warning_count() noexcept { return g_warnings.load(std::memory_order_relaxed); }

void set_warnings_quiet(bool quiet) noexcept { g_quiet.store(quiet, std::memory_order_relaxed); }

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t counter) noexcept {
  return mix64(mix64(mix64(root) ^ static_cast<std::uint64_t>(stream)) ^ counter);
}

Rng::Rng(std::uint64_t seed) noexcept {
  std::uint64_t x = seed;
  for (auto& s : s_) {
    x = mix64(x);
    s = x;
  }
}

std::uint64_t Rng::next_u64() noexcept {
  auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double Rng::normal() noexcept {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace fhvae
