#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace elemental {

// Deterministic random stream keyed by (seed, stream_id). Draws are built
// directly from the 64-bit engine output so that sequences do not depend on
// the standard library's distribution implementations.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  // Standard normal via Box-Muller (one value per call).
  double normal();
  // Index in [0, n).
  std::size_t uniform_index(std::size_t n);
  // Samples an index with probability proportional to `probs`.
  std::size_t categorical(std::span<const double> probs);

  // Independent child stream. Same parent and key always give the same child.
  RngStream derive(std::uint64_t key) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace elemental
