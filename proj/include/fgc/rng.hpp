#pragma once

#include <array>
#include <cstdint>

namespace fgc {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32-10 block function.
PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

/// Reproducible random stream addressed by (seed, stream id).
///
/// The seed is the Philox key; the stream id occupies the upper half of the
/// counter and the lower half counts blocks. Two streams with distinct ids
/// never overlap, so a Monte-Carlo block or a minibatch sequence can draw from
/// its own stream regardless of which thread evaluates it.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// +1 or -1 with equal probability.
  int sign();

 private:
  void refill();

  PhiloxKey key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  PhiloxCounter buffer_{};
  int used_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fgc
