#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace steerlab {

// Error with a stable machine-readable code, e.g. "invalid-config",
// "unknown-word", "missing-stage", "stale-artifact".
struct Error : std::runtime_error {
  std::string code;
  Error(std::string code_, const std::string& msg)
      : std::runtime_error(msg), code(std::move(code_)) {}
};

[[noreturn]] inline void fail(std::string code, const std::string& msg) {
  throw Error(std::move(code), msg);
}

// Deterministic RNG with portable draw helpers. All randomness in the
// project goes through this class so that runs reproduce bit-for-bit
// regardless of standard library distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next();
  // Uniform double in [0, 1).
  double uniform();
  // Uniform integer in [0, n), n > 0.
  uint64_t below(uint64_t n);
  // Standard normal via Box-Muller.
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Combine integers into a derived seed.
uint64_t mix_seed(std::initializer_list<uint64_t> parts);

// FNV-1a 64-bit, used for config hashes and manifest file digests.
uint64_t fnv1a64(const void* data, size_t len,
                 uint64_t h = 1469598103934665603ull);
std::string hex64(uint64_t v);
std::string digest_bytes(std::string_view bytes);
std::string digest_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// Fixed-precision float formatting for CSV output (deterministic bytes).
std::string format_real(double v);

}  // namespace steerlab
