#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace gsdm {

// Every random decision in the project flows from one root seed split into
// named streams (e.g. "synth/scene/0017"). Gaussian variates use an explicit
// Box-Muller transform so draws are bit-reproducible across standard
// libraries.
class RngStream {
 public:
  RngStream() : engine_(0) {}
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform() { return (engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a hash of (root seed, stream name) seeds the stream engine.
inline std::uint64_t stream_seed(std::uint64_t root_seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t x) {
    h ^= x;
    h *= 1099511628211ull;
  };
  for (int shift = 0; shift < 64; shift += 8) mix((root_seed >> shift) & 0xff);
  for (unsigned char c : name) mix(c);
  return h;
}

inline RngStream make_stream(std::uint64_t root_seed, const std::string& name) {
  return RngStream(stream_seed(root_seed, name));
}

}  // namespace gsdm
