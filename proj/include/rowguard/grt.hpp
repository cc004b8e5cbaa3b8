#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rowguard/geometry.hpp"
#include "rowguard/transforms.hpp"

namespace rowguard {

// Groups row-IDs into logical global rows: the sets that mirroring and
// inversion shuffle among the same physical row locations. Simple mode (and a
// fully identity complex config) degenerates to one row per logical row.
//
// Complex structure: scrambling only permutes rows inside aligned groups of 8,
// so every aligned 8-row block moves as a unit under mirror/inversion. Blocks
// form orbits of up to 4 under {id, mirror, inversion, both}; each orbit of
// blocks yields 8 logical rows, one per physical position. Mirror fixed points
// produce half-size orbits; those are merged pairwise (ascending, adjacent in
// block order) into fixed-width records and flagged degenerate.
class GlobalRowTable {
 public:
  static constexpr uint32_t kGroupRows = 8;

  static GlobalRowTable build(const DramGeometry& g, const TransformConfig& t);

  uint32_t rows_per_logical() const { return rpl_; }
  uint64_t logical_rows() const { return logical_rows_; }
  uint64_t total_rows() const { return total_rows_; }
  bool identity() const { return identity_; }

  // Member row-IDs of a logical row, ascending. rows_per_logical() entries;
  // degenerate padded rows repeat members.
  std::array<uint32_t, 4> members(uint64_t logical) const;

  uint64_t logical_of_row(uint64_t row_id) const;

  // Physical position (same index in every rank/side space) -> logical row.
  uint64_t logical_of_physical(uint64_t phys) const;
  // Physical positions a logical row occupies, ascending; rpl entries, the
  // degenerate padded case repeats positions.
  std::array<uint64_t, 4> physical_rows(uint64_t logical) const;

  // 2 bytes per member entry.
  uint64_t serialized_bytes() const { return logical_rows_ * rpl_ * 2; }

  uint64_t group_count() const { return group_count_; }
  bool group_degenerate(uint64_t group) const;
  uint64_t degenerate_logical_rows() const;

  void dump_csv(std::ostream& os) const;

 private:
  bool identity_ = true;
  uint32_t rpl_ = 1;
  uint64_t total_rows_ = 0;
  uint64_t logical_rows_ = 0;
  uint64_t group_count_ = 0;

  // complex only
  std::array<uint8_t, 8> fwd_{};        // scramble on bits [2:0]
  std::array<uint8_t, 8> inv_{};        // its inverse
  std::vector<uint8_t> block_tap_;      // scramble tap parity vector per block
  std::vector<uint32_t> block_group_;   // block -> group
  std::vector<uint32_t> group_blocks_;  // group*rpl_, ascending per group
  std::vector<uint8_t> degenerate_;     // per group
};

struct TransformCheckReport {
  bool ok = false;
  uint64_t rows_checked = 0;
  uint64_t locations_checked = 0;
  uint64_t degenerate_logical_rows = 0;
  std::vector<std::string> failures;  // truncated; empty when ok
};

// Exhaustive check of the two structural invariants: (a) the row-ID sets
// found at a logical row's physical locations, across all rank/side spaces,
// close over exactly its members; (b) per position inside each 8-row group,
// every location is occupied by the same member set. Strict set equality is
// required for non-degenerate rows; merged rows are checked for closure.
TransformCheckReport verify_transform_invariants(const DramGeometry& g, const TransformConfig& t,
                                                 const GlobalRowTable& grt);

// Distinct chunks owning a physical row at distance 1 from any physical row
// of `chunk`, in any (rank parity, side) space. Chunks partition logical rows
// in index order: chunk = logical_row / chunk_rows.
std::vector<uint32_t> chunk_neighbors(uint32_t chunk, uint32_t chunk_rows,
                                      const GlobalRowTable& grt, const DramGeometry& g);

}  // namespace rowguard
