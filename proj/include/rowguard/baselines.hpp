#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rowguard/allocator.hpp"
#include "rowguard/geometry.hpp"
#include "rowguard/grt.hpp"

namespace rowguard {

// Classic power-of-two buddy allocator over the whole physical page space.
// All domains share one pool; the domain tag on each block is recorded so the
// isolation verifier can ask who owns what, but placement never looks at it.
class BuddyState {
 public:
  explicit BuddyState(const DramGeometry& geo, uint32_t max_order = 11);

  uint32_t create_domain();
  void destroy_domain(uint32_t domain);

  // Returns the pages of the allocated block, ascending. The block is the
  // lowest-indexed free block that fits, split down to the requested order.
  std::vector<uint64_t> alloc_pages(uint32_t domain, uint32_t order);

  // Frees exactly one previously allocated block (same base, same order).
  // Buddies coalesce greedily. Returns the page count of the block.
  uint64_t free_pages(uint32_t domain, uint64_t pfn, uint32_t order);

  const DramGeometry& geometry() const { return geo_; }
  uint32_t max_order() const { return max_order_; }
  uint64_t total_pages() const { return geo_.total_pages; }
  uint64_t free_page_count() const { return free_pages_; }
  uint64_t allocated_pages() const { return geo_.total_pages - free_pages_; }
  uint64_t domain_footprint_pages(uint32_t domain) const;
  std::vector<uint32_t> domain_ids() const;

  // Free blocks of one order, ascending base PFN.
  std::vector<uint64_t> free_blocks(uint32_t order) const;

  struct AllocatedBlock {
    uint64_t base = 0;
    uint32_t order = 0;
    uint32_t domain = kNoId;
  };
  // Every live block, ascending base PFN.
  std::vector<AllocatedBlock> allocated_blocks() const;

  std::optional<uint32_t> page_owner(uint64_t pfn) const;
  // Distinct owners with at least one page in the global row, ascending.
  std::vector<uint32_t> row_owners(uint64_t row_id) const;

  std::string to_json(int indent = -1) const;

 private:
  struct Block {
    uint32_t order = 0;
    uint32_t domain = kNoId;
  };

  const std::map<uint64_t, Block>::const_iterator block_of(uint64_t pfn) const;

  DramGeometry geo_;
  uint32_t max_order_;
  uint64_t free_pages_ = 0;
  std::vector<std::set<uint64_t>> free_lists_;  // index = order, values = base PFNs
  std::map<uint64_t, Block> owners_;            // allocated blocks by base PFN
  std::map<uint32_t, uint64_t> footprints_;     // live pages per domain
  uint32_t next_domain_ = 0;
};

// Mode parameterization with the addressing style and logical row width taken
// from an existing row table.
AllocatorParams make_mode(AllocMode mode, const GlobalRowTable& grt);

}  // namespace rowguard
