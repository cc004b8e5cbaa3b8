#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rowguard/allocator.hpp"
#include "rowguard/baselines.hpp"
#include "rowguard/grt.hpp"
#include "rowguard/transforms.hpp"

namespace rowguard {

// One cross-domain proximity witness: inside the (parity, side) row space,
// data of domain1 sits at physical position row1 and data of domain2 at row2,
// with 1 <= |row1 - row2| <= the checked guard distance.
struct Violation {
  RankParity parity = RankParity::Even;
  RowSide side = RowSide::A;
  uint64_t row1 = 0;
  uint64_t row2 = 0;
  uint32_t domain1 = kNoId;
  uint32_t domain2 = kNoId;
  uint64_t pfn1 = 0;  // witness pages proving the ownership claims
  uint64_t pfn2 = 0;
};

struct ViolationReport {
  std::vector<Violation> violations;
  std::vector<std::string> findings;  // state-consistency audit results
  // True when the violation scan stopped early at the reporting cap.
  bool truncated = false;
  bool clean() const { return violations.empty() && findings.empty(); }
};

std::string to_json(const ViolationReport& r, int indent = -1);

// Brute-force isolation oracle. Rebuilds the physical-position -> owning
// domains map of each (rank parity, side) space from per-page ownership alone
// — never from zone or chunk bookkeeping — and reports every pair of
// positions at distance 1..n_guard whose owners span two distinct domains.
// Co-location within one row is not a violation. The row table is only
// cross-checked against the state's geometry.
ViolationReport check_isolation(const Allocator& a, const GlobalRowTable& grt,
                                const TransformConfig& t, uint32_t n_guard);
ViolationReport check_isolation(const BuddyState& b, const GlobalRowTable& grt,
                                const TransformConfig& t, uint32_t n_guard);

// State-consistency audit: recounts ownership page by page against the cached
// occupancy counters, and checks zone contiguity, guard-front placement, the
// shrink/split fixpoint, free-pool accounting, and counter conservation.
// Returns human-readable findings; empty means consistent.
std::vector<std::string> audit_state(const Allocator& a);
// Buddy variant: free lists and live blocks must exactly partition the pool.
std::vector<std::string> audit_state(const BuddyState& b);

}  // namespace rowguard
