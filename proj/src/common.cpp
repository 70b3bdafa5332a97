#include "steerlab/common.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace steerlab {

namespace {
// splitmix64 step; passes as a generator on its own and keeps the
// serialized run artifacts independent of libstdc++ internals.
uint64_t splitmix64(uint64_t& s) {
  s += 0x9e3779b97f4a7c15ull;
  uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace

Rng::Rng(uint64_t seed) : state_(seed ^ 0xa02bdbf7bb3c0a7ull) {
  // Warm up so that nearby seeds decorrelate.
  for (int i = 0; i < 4; ++i) splitmix64(state_);
}

uint64_t Rng::next() { return splitmix64(state_); }

double Rng::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

uint64_t Rng::below(uint64_t n) {
  return static_cast<uint64_t>(
      (static_cast<unsigned __int128>(next()) * n) >> 64);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
  uint64_t h = 1469598103934665603ull;
  for (uint64_t p : parts) h = fnv1a64(&p, sizeof(p), h);
  return h;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return std::string(buf);
}

std::string digest_bytes(std::string_view bytes) {
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

std::string digest_file(const std::filesystem::path& path) {
  return digest_bytes(read_file(path));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io-error", "cannot open file for reading: " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("io-error", "cannot open file for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail("io-error", "write failed: " + path.string());
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::string(buf);
}

}  // namespace steerlab
