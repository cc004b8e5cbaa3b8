#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "rowguard/geometry.hpp"

namespace rowguard {

enum class AddressMode : uint8_t { Simple, Complex };
enum class RankParity : uint8_t { Even = 0, Odd = 1 };
enum class RowSide : uint8_t { A = 0, B = 1 };

// Vendor-style row-address transformations. Scrambling permutes row-ID bits
// [2:0] (an invertible 3x3 matrix over GF(2), plus optional xor taps fed by
// higher bits). Mirroring swaps bit pairs on odd ranks; inversion flips a bit
// mask on the B side of half-rows. Mirror pairs and the inversion mask must
// leave bits [2:0] alone, so groups of 8 rows keep their relative position.
struct TransformConfig {
  AddressMode mode = AddressMode::Simple;
  // Row j of the matrix: mask over input bits [2:0] producing output bit j.
  std::array<uint8_t, 3> scramble{1, 2, 4};  // identity
  // Optional tap mask per output bit, applied to the full row-ID (bits >= 3).
  std::array<uint64_t, 3> scramble_taps{0, 0, 0};
  std::vector<std::pair<uint32_t, uint32_t>> mirror_pairs;
  uint64_t inversion_mask = 0;
};

// Defaults: simple is all identity; complex uses
//   b2' = b2, b1' = b1 ^ b2, b0' = b0 ^ b1,
// mirror pair (6,7), inversion bit 3.
TransformConfig default_transforms(AddressMode mode);

// Throws ConfigError on a malformed config (non-bijective scramble, pairs or
// mask touching bits [2:0], out-of-range bit indices).
void validate_transforms(const TransformConfig& t, const DramGeometry& g);

// Logical row-ID to the physical row index inside one (rank parity, side)
// space: scramble, then mirror iff parity is odd, then inversion iff side B.
uint64_t physical_row(uint64_t row_id, RankParity parity, RowSide side, const TransformConfig& t);

// Inverse map: which row-ID occupies a physical row index in a given space.
uint64_t row_at_physical(uint64_t phys, RankParity parity, RowSide side, const TransformConfig& t);

}  // namespace rowguard
