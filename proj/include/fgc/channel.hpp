#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fgc/rng.hpp"

namespace fgc {

using Symbol = std::int8_t;

/// Impulse response h_0..h_L of a cyclic ISI channel.
class ChannelSpec {
 public:
  /// Throws std::invalid_argument for an empty or all-zero response.
  explicit ChannelSpec(std::vector<double> taps);

  const std::vector<double>& taps() const { return taps_; }
  int memory() const { return static_cast<int>(taps_.size()) - 1; }

  /// h = [0.407, 0.100, 0.815, 0.100, 0.407].
  static ChannelSpec reference();

  bool operator==(const ChannelSpec&) const = default;

 private:
  std::vector<double> taps_;
};

/// BPSK symbols, every entry +1 or -1.
struct SymbolBlock {
  std::vector<Symbol> symbols;

  int size() const { return static_cast<int>(symbols.size()); }
  Symbol operator[](int k) const { return symbols[static_cast<std::size_t>(k)]; }
  bool operator==(const SymbolBlock&) const = default;
};

struct ObservationBlock {
  std::vector<double> samples;
  double noise_variance = 0.0;

  int size() const { return static_cast<int>(samples.size()); }
};

/// sigma^2 = (2 Es/N0)^-1 with Es = 1.
double noise_variance_from_esn0(double esn0_db);

SymbolBlock sample_symbols(int length, RandomStream& rng);

/// y_k = sum_l h_l x_[(k - l) mod K] + w_k, w_k ~ N(0, noise_variance).
ObservationBlock transmit(const SymbolBlock& x, const ChannelSpec& channel, double noise_variance,
                          RandomStream& rng);

/// Bit 0 maps to +1, bit 1 to -1.
SymbolBlock bits_to_symbols(std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> symbols_to_bits(const SymbolBlock& x);

}  // namespace fgc
