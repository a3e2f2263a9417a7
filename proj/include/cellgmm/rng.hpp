#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace cellgmm {

// Counter-based generator in the SplitMix64 family. Every consumer derives
// its own stream from (seed, stream id), so replicate results do not depend
// on thread scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed) {}

  // Independent stream keyed by (this stream's seed, stream id).
  Rng split(std::uint64_t stream) const {
    return Rng(mix(key_ ^ 0x5851F42D4C957F2DULL) + mix(stream + 0x14057B7EF767814FULL));
  }

  std::uint64_t next() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller; uniform01 can return 0, so flip to (0, 1].
    double u = 1.0 - uniform01();
    double v = uniform01();
    double r = std::sqrt(-2.0 * std::log(u));
    double theta = 6.283185307179586476925286766559 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n), n >= 1.
  int below(int n) {
    return static_cast<int>(next() % static_cast<std::uint64_t>(n));
  }

  // k distinct indices from {0..n-1}, ascending order.
  std::vector<int> sample_without_replacement(int n, int k) {
    // Partial Fisher-Yates over an index table.
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + below(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[below(i + 1)]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cellgmm
