#include "rowguard/transforms.hpp"

#include <bit>

namespace rowguard {

namespace {

inline uint32_t mat3_apply(const std::array<uint8_t, 3>& rows, uint32_t low) {
  uint32_t out = 0;
  for (int j = 0; j < 3; ++j)
    out |= static_cast<uint32_t>(std::popcount(static_cast<uint32_t>(rows[j] & low)) & 1) << j;
  return out;
}

inline uint32_t tap_bits(const std::array<uint64_t, 3>& taps, uint64_t row_id) {
  uint32_t out = 0;
  for (int j = 0; j < 3; ++j)
    out |= static_cast<uint32_t>(std::popcount(taps[j] & row_id) & 1) << j;
  return out;
}

inline uint64_t mirror_apply(const std::vector<std::pair<uint32_t, uint32_t>>& pairs, uint64_t v) {
  for (auto [a, b] : pairs) {
    uint64_t ba = (v >> a) & 1, bb = (v >> b) & 1;
    if (ba != bb) v ^= (1ull << a) | (1ull << b);
  }
  return v;
}

int log2_u64(uint64_t v) { return 63 - std::countl_zero(v); }

}  // namespace

TransformConfig default_transforms(AddressMode mode) {
  TransformConfig t;
  t.mode = mode;
  if (mode == AddressMode::Complex) {
    t.scramble = {0b011, 0b110, 0b100};  // b0'=b0^b1, b1'=b1^b2, b2'=b2
    t.mirror_pairs = {{6, 7}};
    t.inversion_mask = 0x8;  // bit 3
  }
  return t;
}

void validate_transforms(const TransformConfig& t, const DramGeometry& g) {
  if (t.mode == AddressMode::Simple) return;
  if (g.rows_per_bank < 8)
    throw ConfigError("transforms: complex mode needs rows_per_bank >= 8");

  bool seen[8] = {};
  for (uint32_t v = 0; v < 8; ++v) {
    uint32_t m = mat3_apply(t.scramble, v);
    if (seen[m]) throw ConfigError("transforms: scramble matrix is not invertible");
    seen[m] = true;
  }

  const int row_bits = log2_u64(g.rows_per_bank);
  uint64_t used = 0;
  for (auto [a, b] : t.mirror_pairs) {
    if (a == b) throw ConfigError("transforms: mirror pair repeats a bit index");
    for (uint32_t idx : {a, b}) {
      if (idx < 3)
        throw ConfigError("transforms: mirror pairs must not touch row bits [2:0]");
      if (static_cast<int>(idx) >= row_bits)
        throw ConfigError("transforms: mirror bit " + std::to_string(idx) +
                          " outside row-ID width " + std::to_string(row_bits));
      if (used & (1ull << idx))
        throw ConfigError("transforms: mirror pairs overlap at bit " + std::to_string(idx));
      used |= 1ull << idx;
    }
  }
  if (t.inversion_mask & 7)
    throw ConfigError("transforms: inversion mask must not touch row bits [2:0]");
  if (t.inversion_mask >= g.rows_per_bank)
    throw ConfigError("transforms: inversion mask outside row-ID width");
  for (uint64_t tap : t.scramble_taps) {
    if (tap & 7) throw ConfigError("transforms: scramble taps must not read row bits [2:0]");
    if (tap >= g.rows_per_bank) throw ConfigError("transforms: scramble tap outside row-ID width");
  }
}

uint64_t physical_row(uint64_t row_id, RankParity parity, RowSide side, const TransformConfig& t) {
  if (t.mode == AddressMode::Simple) return row_id;
  uint64_t r = (row_id & ~7ull) |
               (mat3_apply(t.scramble, row_id & 7) ^ tap_bits(t.scramble_taps, row_id & ~7ull));
  if (parity == RankParity::Odd) r = mirror_apply(t.mirror_pairs, r);
  if (side == RowSide::B) r ^= t.inversion_mask;
  return r;
}

uint64_t row_at_physical(uint64_t phys, RankParity parity, RowSide side, const TransformConfig& t) {
  if (t.mode == AddressMode::Simple) return phys;
  uint64_t r = phys;
  if (side == RowSide::B) r ^= t.inversion_mask;
  if (parity == RankParity::Odd) r = mirror_apply(t.mirror_pairs, r);  // involution
  uint32_t low = static_cast<uint32_t>(r & 7) ^ tap_bits(t.scramble_taps, r & ~7ull);
  // invert the 3x3 matrix by searching the 8-entry image
  for (uint32_t v = 0; v < 8; ++v)
    if (mat3_apply(t.scramble, v) == low) return (r & ~7ull) | v;
  return r;  // unreachable for validated configs
}

}  // namespace rowguard
