#include "fgc/channel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fgc {

ChannelSpec::ChannelSpec(std::vector<double> taps) : taps_(std::move(taps)) {
  if (taps_.empty()) throw std::invalid_argument("channel: impulse response is empty");
  if (std::all_of(taps_.begin(), taps_.end(), [](double t) { return t == 0.0; }))
    throw std::invalid_argument("channel: impulse response is all zero");
  for (double t : taps_)
    if (!std::isfinite(t)) throw std::invalid_argument("channel: non-finite tap");
}

ChannelSpec ChannelSpec::reference() { return ChannelSpec({0.407, 0.100, 0.815, 0.100, 0.407}); }

double noise_variance_from_esn0(double esn0_db) {
  return 1.0 / (2.0 * std::pow(10.0, esn0_db / 10.0));
}

SymbolBlock sample_symbols(int length, RandomStream& rng) {
  if (length < 1) throw std::invalid_argument("sample_symbols: block length must be >= 1");
  SymbolBlock block;
  block.symbols.resize(static_cast<std::size_t>(length));
  for (auto& s : block.symbols) s = static_cast<Symbol>(rng.sign());
  return block;
}

ObservationBlock transmit(const SymbolBlock& x, const ChannelSpec& channel, double noise_variance,
                          RandomStream& rng) {
  const int K = x.size();
  if (K < 1) throw std::invalid_argument("transmit: empty symbol block");
  if (!(noise_variance >= 0.0)) throw std::invalid_argument("transmit: negative noise variance");
  const auto& h = channel.taps();
  const double sigma = std::sqrt(noise_variance);

  ObservationBlock y;
  y.noise_variance = noise_variance;
  y.samples.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    double acc = 0.0;
    for (int l = 0; l <= channel.memory(); ++l) {
      const int idx = ((k - l) % K + K) % K;
      acc += h[static_cast<std::size_t>(l)] * x[idx];
    }
    y.samples[static_cast<std::size_t>(k)] = acc;
  }
  if (noise_variance > 0.0)
    for (auto& v : y.samples) v += sigma * rng.normal();
  return y;
}

SymbolBlock bits_to_symbols(std::span<const std::uint8_t> bits) {
  SymbolBlock block;
  block.symbols.reserve(bits.size());
  for (auto b : bits) {
    if (b > 1) throw std::invalid_argument("bits_to_symbols: bit value must be 0 or 1");
    block.symbols.push_back(b == 0 ? Symbol{1} : Symbol{-1});
  }
  return block;
}

std::vector<std::uint8_t> symbols_to_bits(const SymbolBlock& x) {
  std::vector<std::uint8_t> bits;
  bits.reserve(x.symbols.size());
  for (auto s : x.symbols) bits.push_back(s > 0 ? 0 : 1);
  return bits;
}

}  // namespace fgc
