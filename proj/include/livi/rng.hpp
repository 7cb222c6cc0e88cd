#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace livi {

/// Counter-based random stream. Draw k of a stream is a pure function of
/// (seed, k), so sequences are identical across platforms and compilers.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  std::vector<double> normal_vector(std::size_t n);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent stream keyed by name, e.g. "data", "init", "training".
  RngStream derive(std::string_view name) const;
  RngStream derive(std::uint64_t index) const;

private:
  std::uint64_t seed_;
  std::uint64_t counter_;
  // Box-Muller produces pairs; the second value is cached.
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace livi
