#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sphereat {

/// Child seed for a named stream; unrelated labels give unrelated streams.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index = 0);

/// Seeded generator with distributions implemented here rather than taken
/// from <random>, whose distribution algorithms vary between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sphereat
