#pragma once

#include <cstdint>
#include <vector>

namespace gotune {

// Splittable counter-based generator. Every draw is a pure function of
// (seed, stream, counter), so independent consumers can derive their own
// streams from one seed without sharing state, and the sequence is
// bit-identical across platforms (integer ops only).
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed, uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  static uint64_t hash(uint64_t seed, uint64_t stream, uint64_t counter) {
    return finalize(finalize(finalize(seed) ^ stream) ^ counter);
  }

  uint64_t next_u64() { return hash(seed_, stream_, counter_++); }

  // Uniform in [0, 1), 53 mantissa bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform in [0, n); n > 0. Lemire multiply-shift, deterministic.
  uint64_t next_below(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Fresh independent stream keyed by `substream`.
  CounterRng split(uint64_t substream) const {
    return CounterRng(seed_, hash(stream_, substream, 0xd1b54a32d192ed03ULL));
  }

 private:
  static uint64_t finalize(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t seed_ = 0;
  uint64_t stream_ = 0;
  uint64_t counter_ = 0;
};

// Fisher-Yates driven by a CounterRng stream.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, CounterRng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace gotune
