#include "rowguard/grt.hpp"

#include <algorithm>
#include <ostream>
#include <set>
#include <sstream>

namespace rowguard {

namespace {

// Orbit of a block under the mirror/inversion block maps, ascending.
// Throws if the closure exceeds 4 blocks (the maps do not commute).
std::vector<uint64_t> block_orbit(uint64_t block, const TransformConfig& t, uint64_t total_blocks) {
  auto mirror_block = [&](uint64_t b) {
    uint64_t r = b << 3;
    for (auto [i, j] : t.mirror_pairs) {
      uint64_t bi = (r >> i) & 1, bj = (r >> j) & 1;
      if (bi != bj) r ^= (uint64_t{1} << i) | (uint64_t{1} << j);
    }
    return r >> 3;
  };
  auto invert_block = [&](uint64_t b) { return ((b << 3) ^ t.inversion_mask) >> 3; };

  std::set<uint64_t> seen{block};
  std::vector<uint64_t> work{block};
  while (!work.empty()) {
    uint64_t b = work.back();
    work.pop_back();
    for (uint64_t n : {mirror_block(b), invert_block(b)}) {
      if (n >= total_blocks)
        throw ConfigError("transforms: mirror/inversion move a block out of range");
      if (seen.insert(n).second) work.push_back(n);
    }
    if (seen.size() > 4)
      throw ConfigError(
          "transforms: mirror and inversion do not commute, block orbit exceeds 4 members");
  }
  return {seen.begin(), seen.end()};
}

}  // namespace

GlobalRowTable GlobalRowTable::build(const DramGeometry& g, const TransformConfig& t) {
  GlobalRowTable grt;
  grt.total_rows_ = g.total_global_rows;
  if (t.mode == AddressMode::Simple) {
    grt.identity_ = true;
    grt.rpl_ = 1;
    grt.logical_rows_ = grt.total_rows_;
    grt.group_count_ = 0;
    return grt;
  }

  if (grt.total_rows_ < kGroupRows || grt.total_rows_ % kGroupRows != 0)
    throw ConfigError("grt: complex addressing needs a multiple of 8 global rows");
  uint64_t total_blocks = grt.total_rows_ / kGroupRows;

  // Scramble tables via the row map itself: block 0 has zero tap parity, so
  // row L of block 0 lands at position fwd[L].
  bool scramble_id = true;
  for (uint32_t l = 0; l < 8; ++l) {
    uint8_t p = static_cast<uint8_t>(physical_row(l, RankParity::Even, RowSide::A, t) & 7);
    grt.fwd_[l] = p;
    grt.inv_[p] = static_cast<uint8_t>(l);
    if (p != l) scramble_id = false;
  }
  grt.block_tap_.resize(total_blocks);
  bool taps_zero = true;
  for (uint64_t b = 0; b < total_blocks; ++b) {
    uint8_t tv = static_cast<uint8_t>(physical_row(b << 3, RankParity::Even, RowSide::A, t) & 7);
    grt.block_tap_[b] = tv;
    if (tv != 0) taps_zero = false;
  }

  grt.rpl_ = (t.mirror_pairs.empty() ? 1u : 2u) * (t.inversion_mask == 0 ? 1u : 2u);
  grt.identity_ = scramble_id && taps_zero && grt.rpl_ == 1;
  grt.logical_rows_ = grt.total_rows_ / grt.rpl_;

  grt.block_group_.assign(total_blocks, UINT32_MAX);
  grt.group_blocks_.reserve(total_blocks);
  grt.degenerate_.reserve(total_blocks / grt.rpl_);

  // Pass 1: full orbits become groups in encounter order; half-size orbits
  // (fixed points of mirror or of mirror-composed-with-inversion) are set
  // aside to be merged pairwise into fixed-width records.
  constexpr uint32_t kPooled = UINT32_MAX - 1;
  std::vector<std::vector<uint32_t>> halves;
  for (uint64_t b = 0; b < total_blocks; ++b) {
    if (grt.block_group_[b] != UINT32_MAX) continue;
    auto orbit = block_orbit(b, t, total_blocks);
    if (orbit.size() == grt.rpl_) {
      uint32_t gi = static_cast<uint32_t>(grt.degenerate_.size());
      for (uint64_t m : orbit) {
        grt.block_group_[m] = gi;
        grt.group_blocks_.push_back(static_cast<uint32_t>(m));
      }
      grt.degenerate_.push_back(0);
    } else if (orbit.size() * 2 == grt.rpl_) {
      std::vector<uint32_t> h(orbit.begin(), orbit.end());
      for (uint32_t m : h) grt.block_group_[m] = kPooled;
      halves.push_back(std::move(h));
    } else {
      throw ConfigError("grt: block orbit size incompatible with transform configuration");
    }
  }

  // Pass 2: merge half orbits pairwise. Any pairing yields a valid table, but
  // the partner choice decides what the merged group's surroundings look
  // like, so a uniform rule (always-adjacent, or any shift-invariant offset)
  // makes every merged group repeat one neighborhood shape. The schedule
  // below walks the halves in slots of four and stripes partner choice across
  // three local patterns:
  //   A: two adjacent pairs            -> compact groups
  //   B: one skip pair over a middle   -> groups straddling a shared boundary
  //   C: defer the whole slot          -> distant partners
  // Deferred halves pool up and are paired across the pool with a
  // multiplicative stride, which keeps pool neighbors from pairing with pool
  // neighbors (those twin pairs would otherwise enclose each other and see
  // identical surroundings).
  auto emit_merged = [&grt](const std::vector<uint32_t>& a, const std::vector<uint32_t>& b) {
    uint32_t gi = static_cast<uint32_t>(grt.degenerate_.size());
    std::vector<uint32_t> blocks(a);
    blocks.insert(blocks.end(), b.begin(), b.end());
    std::sort(blocks.begin(), blocks.end());
    for (uint32_t m : blocks) grt.block_group_[m] = gi;
    grt.group_blocks_.insert(grt.group_blocks_.end(), blocks.begin(), blocks.end());
    grt.degenerate_.push_back(1);
  };
  static constexpr char kRotation[12] = {'B', 'C', 'C', 'B', 'C', 'A',
                                         'C', 'B', 'C', 'C', 'B', 'C'};
  std::vector<size_t> pool_near, pool_far;
  auto flush_pools = [&]() {
    for (size_t k = 0; k + 1 < pool_near.size(); k += 2)
      emit_merged(halves[pool_near[k]], halves[pool_near[k + 1]]);
    if (pool_near.size() & 1) pool_far.push_back(pool_near.back());
    pool_near.clear();
    bool carry = pool_far.size() & 1;
    size_t half_n = pool_far.size() / 2;
    size_t stride = 1;
    for (size_t c : {size_t{3}, size_t{5}, size_t{7}})
      if (half_n % c != 0) {
        stride = c;
        break;
      }
    for (size_t k = 0; k < half_n; ++k)
      emit_merged(halves[pool_far[k]], halves[pool_far[half_n + (k * stride) % half_n]]);
    if (carry)
      pool_far.assign(1, pool_far.back());
    else
      pool_far.clear();
  };
  size_t i = 0;
  int rot = 0;
  while (i + 4 <= halves.size()) {
    switch (kRotation[rot]) {
      case 'A':
        emit_merged(halves[i], halves[i + 1]);
        emit_merged(halves[i + 2], halves[i + 3]);
        break;
      case 'B':
        emit_merged(halves[i], halves[i + 2]);
        pool_near.push_back(i + 1);
        pool_far.push_back(i + 3);
        break;
      default:
        for (size_t k = 0; k < 4; ++k) pool_far.push_back(i + k);
    }
    i += 4;
    if (++rot == 12) {
      rot = 0;
      flush_pools();
    }
  }
  flush_pools();  // leaves at most one carried half in pool_far
  std::vector<size_t> rest;
  if (!pool_far.empty()) rest.push_back(pool_far.front());
  for (; i < halves.size(); ++i) rest.push_back(i);
  for (size_t k = 0; k + 1 < rest.size(); k += 2)
    emit_merged(halves[rest[k]], halves[rest[k + 1]]);
  if (rest.size() & 1)
    emit_merged(halves[rest.back()], halves[rest.back()]);  // duplicated entries, still flagged
  grt.group_count_ = grt.degenerate_.size();
  return grt;
}

std::array<uint32_t, 4> GlobalRowTable::members(uint64_t logical) const {
  std::array<uint32_t, 4> out{};
  if (block_group_.empty()) {
    out[0] = static_cast<uint32_t>(logical);
    return out;
  }
  uint64_t g = logical / kGroupRows;
  uint32_t i = static_cast<uint32_t>(logical % kGroupRows);
  const uint32_t* blocks = &group_blocks_[g * rpl_];
  for (uint32_t k = 0; k < rpl_; ++k) {
    uint32_t b = blocks[k];
    out[k] = b * kGroupRows + inv_[(i ^ block_tap_[b]) & 7];
  }
  return out;
}

uint64_t GlobalRowTable::logical_of_row(uint64_t row_id) const {
  if (block_group_.empty()) return row_id;
  uint64_t b = row_id >> 3;
  uint32_t i = fwd_[row_id & 7] ^ block_tap_[b];
  return static_cast<uint64_t>(block_group_[b]) * kGroupRows + (i & 7);
}

uint64_t GlobalRowTable::logical_of_physical(uint64_t phys) const {
  if (block_group_.empty()) return phys;
  return static_cast<uint64_t>(block_group_[phys >> 3]) * kGroupRows + (phys & 7);
}

std::array<uint64_t, 4> GlobalRowTable::physical_rows(uint64_t logical) const {
  std::array<uint64_t, 4> out{};
  if (block_group_.empty()) {
    out[0] = logical;
    return out;
  }
  uint64_t g = logical / kGroupRows;
  uint64_t i = logical % kGroupRows;
  const uint32_t* blocks = &group_blocks_[g * rpl_];
  for (uint32_t k = 0; k < rpl_; ++k) out[k] = static_cast<uint64_t>(blocks[k]) * kGroupRows + i;
  return out;
}

bool GlobalRowTable::group_degenerate(uint64_t group) const {
  return !degenerate_.empty() && degenerate_[group] != 0;
}

uint64_t GlobalRowTable::degenerate_logical_rows() const {
  uint64_t n = 0;
  for (uint8_t d : degenerate_)
    if (d) n += kGroupRows;
  return n;
}

void GlobalRowTable::dump_csv(std::ostream& os) const {
  os << "logical_index";
  for (uint32_t k = 0; k < rpl_; ++k) os << ",rowid" << k;
  os << "\n";
  for (uint64_t l = 0; l < logical_rows_; ++l) {
    auto m = members(l);
    os << l;
    for (uint32_t k = 0; k < rpl_; ++k) os << "," << m[k];
    os << "\n";
  }
}

TransformCheckReport verify_transform_invariants(const DramGeometry& g, const TransformConfig& t,
                                                 const GlobalRowTable& grt) {
  TransformCheckReport rep;
  if (grt.total_rows() != g.total_global_rows)
    throw ConfigError("verify_transform_invariants: table does not match geometry");
  rep.degenerate_logical_rows = grt.degenerate_logical_rows();
  constexpr size_t kMaxFailures = 16;
  auto fail = [&](const std::string& msg) {
    if (rep.failures.size() < kMaxFailures) rep.failures.push_back(msg);
  };

  const std::pair<RankParity, RowSide> spaces[4] = {
      {RankParity::Even, RowSide::A},
      {RankParity::Even, RowSide::B},
      {RankParity::Odd, RowSide::A},
      {RankParity::Odd, RowSide::B},
  };

  if (grt.rows_per_logical() == 1 && grt.identity()) {
    // One location per logical row; check the physical map is the identity.
    for (uint64_t r = 0; r < grt.total_rows(); ++r) {
      for (auto [par, side] : spaces) {
        ++rep.locations_checked;
        if (physical_row(r, par, side, t) != r) {
          fail("row " + std::to_string(r) + ": transform not identity");
          break;
        }
      }
      ++rep.rows_checked;
    }
    rep.ok = rep.failures.empty();
    return rep;
  }

  uint32_t rpl = grt.rows_per_logical();
  for (uint64_t l = 0; l < grt.logical_rows(); ++l) {
    auto mem = grt.members(l);
    std::set<uint32_t> member_set(mem.begin(), mem.begin() + rpl);
    auto locs = grt.physical_rows(l);
    bool degen = grt.group_degenerate(l / GlobalRowTable::kGroupRows);

    std::set<uint32_t> occupant_union;
    for (uint32_t k = 0; k < rpl; ++k) {
      if (k > 0 && locs[k] == locs[k - 1]) continue;  // padded duplicate
      std::set<uint32_t> occupants;
      for (auto [par, side] : spaces) {
        ++rep.locations_checked;
        occupants.insert(static_cast<uint32_t>(row_at_physical(locs[k], par, side, t)));
      }
      // (b) index consistency: each location of this logical row is occupied,
      // across spaces, by member rows only; non-degenerate rows see the full
      // member set at every location.
      if (degen) {
        for (uint32_t r : occupants)
          if (!member_set.count(r))
            fail("logical " + std::to_string(l) + " loc " + std::to_string(locs[k]) +
                 ": occupant " + std::to_string(r) + " outside member set");
      } else if (occupants != member_set) {
        fail("logical " + std::to_string(l) + " loc " + std::to_string(locs[k]) +
             ": occupant set differs from member set");
      }
      occupant_union.insert(occupants.begin(), occupants.end());
    }
    // (a) orbit closure: the union over this logical row's locations is
    // exactly its member set.
    if (occupant_union != member_set)
      fail("logical " + std::to_string(l) + ": occupant union differs from member set");
    ++rep.rows_checked;
  }
  rep.ok = rep.failures.empty();
  return rep;
}

std::vector<uint32_t> chunk_neighbors(uint32_t chunk, uint32_t chunk_rows,
                                      const GlobalRowTable& grt, const DramGeometry& g) {
  if (grt.total_rows() != g.total_global_rows)
    throw ConfigError("chunk_neighbors: table does not match geometry");
  if (chunk_rows == 0 || grt.logical_rows() % chunk_rows != 0)
    throw ConfigError("chunk_neighbors: chunk_rows must divide the logical row count");
  uint64_t chunks = grt.logical_rows() / chunk_rows;
  if (chunk >= chunks) throw ConfigError("chunk_neighbors: chunk index out of range");

  std::set<uint32_t> out;
  uint64_t lo = static_cast<uint64_t>(chunk) * chunk_rows;
  for (uint64_t l = lo; l < lo + chunk_rows; ++l) {
    auto locs = grt.physical_rows(l);
    for (uint32_t k = 0; k < grt.rows_per_logical(); ++k) {
      if (k > 0 && locs[k] == locs[k - 1]) continue;
      for (uint64_t q : {locs[k] - 1, locs[k] + 1}) {
        if (q >= grt.total_rows()) continue;  // wraps below zero or off the top
        uint32_t oc = static_cast<uint32_t>(grt.logical_of_physical(q) / chunk_rows);
        if (oc != chunk) out.insert(oc);
      }
    }
  }
  return {out.begin(), out.end()};
}

}  // namespace rowguard
