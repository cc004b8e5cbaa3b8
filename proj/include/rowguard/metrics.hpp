#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rowguard/allocator.hpp"
#include "rowguard/baselines.hpp"

namespace rowguard {

// One point on a replay timeline. The four page counters partition
// total_pages; pt_pages / pt_loss_pages record how much of allocated_pages and
// guard_loss_pages was contributed by the page-table accounting fold (see
// apply_pt_adjustment) rather than by the allocator itself.
struct MetricsSnapshot {
  uint64_t tick = 0;
  uint64_t allocated_pages = 0;
  // Zone-front guards plus zonelet guard stripes and remainder rows.
  uint64_t guard_loss_pages = 0;
  // Reserved-but-unallocated data pages of zone chunks.
  uint64_t stranded_pages = 0;
  // Free chunks plus free zonelet data pages.
  uint64_t free_pages = 0;
  uint64_t total_pages = 0;
  uint64_t pt_pages = 0;
  uint64_t pt_loss_pages = 0;

  bool conserved() const {
    return allocated_pages + guard_loss_pages + stranded_pages + free_pages == total_pages;
  }
  uint64_t overhead_pages() const { return guard_loss_pages + stranded_pages; }
  // Both overheads are 0 when their denominator is 0.
  double overhead_vs_requested() const;
  double overhead_vs_total() const;
};

// Derived from chunk roles and cached occupancy counts alone; O(chunks).
MetricsSnapshot snapshot(const Allocator& a, uint64_t tick = 0);
// Buddy reserves nothing: loss and stranding are always zero.
MetricsSnapshot snapshot(const BuddyState& b, uint64_t tick = 0);

// Folds page-table footprint that was deliberately not instantiated as real
// domains into a snapshot: the pages count as allocated demand, and every
// started batch of pages_per_row pages is charged guard_rows_per_batch guard
// rows of loss. Both come out of free. Throws AllocError(OutOfMemory) when
// free_pages cannot cover the fold.
void apply_pt_adjustment(MetricsSnapshot& s, uint64_t pt_pages, uint64_t pages_per_row,
                         uint32_t guard_rows_per_batch);

struct RunSummary {
  bool supported = true;
  uint64_t samples = 0;
  uint64_t total_pages = 0;

  double avg_allocated_pages = 0;
  double avg_loss_pages = 0;
  double avg_stranded_pages = 0;
  double avg_free_pages = 0;
  uint64_t peak_allocated_pages = 0;
  uint64_t peak_loss_pages = 0;
  uint64_t peak_stranded_pages = 0;
  uint64_t peak_overhead_pages = 0;

  double avg_overhead_vs_requested = 0;
  double peak_overhead_vs_requested = 0;
  double avg_overhead_vs_total = 0;
  double peak_overhead_vs_total = 0;
};

// Per-sample means and peaks over a timeline. The supported flag is carried
// through from the replay. Throws std::invalid_argument on an empty timeline.
RunSummary summarize(const std::vector<MetricsSnapshot>& timeline, bool supported = true);

extern const char* const kTimelineCsvHeader;
void write_timeline_csv(std::ostream& os, const std::vector<MetricsSnapshot>& timeline);
// Parses what write_timeline_csv wrote. total_pages is reconstructed from the
// conservation identity. Throws ConfigError on malformed input.
std::vector<MetricsSnapshot> read_timeline_csv(std::istream& is);

std::string to_json(const MetricsSnapshot& s, int indent = -1);
MetricsSnapshot snapshot_from_json(const std::string& text);
std::string timeline_to_json(const std::vector<MetricsSnapshot>& timeline, int indent = -1);
std::vector<MetricsSnapshot> timeline_from_json(const std::string& text);
std::string to_json(const RunSummary& s, int indent = -1);

}  // namespace rowguard
