#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rowguard/geometry.hpp"
#include "rowguard/grt.hpp"
#include "rowguard/transforms.hpp"

namespace rowguard {

inline constexpr uint32_t kNoId = 0xFFFFFFFFu;

enum class AllocMode : uint8_t { Aegis, Zebram, Siloz, Buddy };

const char* to_string(AllocMode m);
AllocMode alloc_mode_from_string(std::string_view s);

struct AllocatorParams {
  // Rows per reservation chunk. Counts logical global rows, so under complex
  // addressing one chunk spans chunk_rows * rows_per_logical physical rows.
  uint32_t chunk_rows = 16;
  uint32_t n_guard = 2;  // blast radius in rows; guards per zone front
  uint64_t switch_threshold_bytes = 12ull << 20;
  bool zonelets_enabled = true;
  AllocMode mode = AllocMode::Aegis;
  uint32_t max_order = 11;
};

// Published per-mode presets. Siloz keeps its 512-global-row chunk under any
// addressing, so its chunk_rows shrinks by rows_per_logical in complex mode.
AllocatorParams mode_params(AllocMode mode, AddressMode addressing, uint32_t rows_per_logical = 1);

enum class AllocErrc : uint8_t {
  OutOfMemory,
  UnknownDomain,
  BadOrder,
  NotOwner,
  DomainBusy,
  ZoneletsDisabled,
  BadIndex,
};

struct AllocError : std::runtime_error {
  AllocErrc code;
  AllocError(AllocErrc c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

enum class ChunkKind : uint8_t { Free, ZoneMember, ZoneletRegion };

struct ChunkSummary {
  uint32_t index = 0;
  ChunkKind kind = ChunkKind::Free;
  uint32_t domain = kNoId;
  uint32_t zone_id = kNoId;
  uint32_t position = 0;    // within its zone
  uint32_t guard_rows = 0;  // zone-front guards, or stripe guard+remainder rows
  uint64_t pages = 0;
  uint64_t guard_pages = 0;     // permanently unusable while in this role
  uint64_t data_capacity = 0;   // pages - guard_pages
  uint64_t used_pages = 0;
};

struct ZoneInfo {
  uint32_t id = kNoId;
  uint32_t domain = kNoId;
  uint32_t first_chunk = 0;
  uint32_t chunk_count = 0;
  uint64_t used_pages = 0;
  uint64_t capacity_pages = 0;
};

struct DomainInfo {
  uint32_t id = kNoId;
  uint64_t footprint_bytes = 0;
  uint64_t zonelet_pages = 0;
  bool above_threshold = false;
  std::vector<uint32_t> zones;  // creation order
};

enum class ZoneActionKind : uint8_t { ShrinkFront, ReclaimLast, Split };

struct ZoneAction {
  ZoneActionKind kind;
  uint32_t zone_id;
  uint32_t chunk;        // the chunk released to the free pool
  uint32_t new_zone_id;  // split only; kNoId otherwise
};

struct MetadataSize {
  uint64_t bitvector_bytes = 0;     // occupancy bitvectors, all chunks
  uint64_t grt_bytes = 0;           // serialized row table
  uint64_t chunk_record_bytes = 0;  // fixed per-chunk state records
  uint64_t static_bytes = 0;        // sum of the above
  uint64_t dynamic_bytes = 0;       // live domain/zone/zonelet records
};

// Domain-isolating physical page allocator. Memory is carved into chunks of
// whole (logical) global rows; a domain's pages live either in zones (runs of
// contiguous chunks with n_guard guard rows at the front of the first chunk)
// or in zonelet regions (chunks striped into [n_guard guards, 1 data row]
// units whose data rows many domains share). Every chunk-role assignment passes a
// structural safety check so that no two rows within n_guard of each other
// can ever hold data of different domains.
class Allocator {
 public:
  Allocator(const DramGeometry& geo, const GlobalRowTable& grt, const AllocatorParams& p);

  uint32_t create_domain();
  void destroy_domain(uint32_t domain);

  // 2^order physically contiguous PFNs, ascending. Below the switch threshold
  // (and while zonelets are enabled) requests that fit one zonelet data row
  // are served from zonelets; everything else first-fits the domain's zones,
  // then tries zone expansion, then reserves a new chunk.
  std::vector<uint64_t> alloc_pages(uint32_t domain, uint32_t order);

  // count single pages from zonelet data rows, bypassing the threshold test.
  std::vector<uint64_t> alloc_from_zonelet(uint32_t domain, uint64_t count);

  // Frees the 2^order pages starting at pfn; they must all be live and owned
  // by the domain. Returns the number freed. Shrink/split runs on every
  // touched zone; empty zonelet regions are un-striped back to the pool.
  uint64_t free_pages(uint32_t domain, uint64_t pfn, uint32_t order);

  // Appends the logically-next free chunk to the first zone (creation order)
  // that can grow safely. Returns the grown zone's id, or nothing.
  std::optional<uint32_t> try_expand_zone(uint32_t domain);

  // Applies the three shrink/split rules until none fires. Safe to call on a
  // zone id that disappears mid-way (actions report what happened).
  std::vector<ZoneAction> shrink_or_split(uint32_t zone_id);

  // Stripes the lowest safe free chunk into zonelets; returns its index.
  uint32_t provision_zonelet_region();

  // Chunk-relative page index -> PFN. Index layout: logical row offset, then
  // member row, then page slot. Guard positions are rejected.
  uint64_t select_frame(uint32_t chunk, uint64_t rel_index) const;

  MetadataSize metadata_size() const;

  const AllocatorParams& params() const { return params_; }
  const DramGeometry& geometry() const { return geo_; }
  const GlobalRowTable& grt() const { return grt_; }
  uint32_t chunk_count() const { return chunk_count_; }
  uint64_t chunk_pages() const { return chunk_pages_; }
  uint64_t free_chunk_count() const { return free_set_.size(); }
  uint64_t zonelet_free_pages() const { return zonelet_free_pages_; }
  uint32_t zonelets_per_chunk() const { return zonelet_count_; }
  // Logical row offsets of zonelet data rows within a striped chunk.
  std::vector<uint32_t> data_row_offsets() const;

  ChunkSummary chunk_summary(uint32_t c) const;
  std::vector<uint32_t> zonelet_regions() const { return zonelet_chunks_; }
  std::optional<ZoneInfo> zone(uint32_t zone_id) const;
  std::vector<uint32_t> domain_ids() const;
  std::optional<DomainInfo> domain(uint32_t id) const;

  std::optional<uint32_t> page_owner(uint64_t pfn) const;
  // Sorted distinct domains owning at least one page in this physical row.
  std::vector<uint32_t> row_owners(uint64_t row_id) const;

  std::string to_json(int indent = -1) const;

  // Fault injection for exercising the state auditor: both corrupt internal
  // records on purpose and leave derived counters stale. Never call them in
  // normal operation.
  void debug_flip_occupancy(uint32_t chunk, uint64_t rel_page);
  void debug_extend_zone_record(uint32_t zone_id);

 private:
  struct ChunkRecord {
    ChunkKind kind = ChunkKind::Free;
    uint32_t domain = kNoId;
    uint32_t zone_id = kNoId;
    uint32_t guard_rows = 0;
    uint64_t used_pages = 0;
    std::vector<uint64_t> occupancy;      // chunk_pages_ bits
    std::vector<uint32_t> zonelet_owner;  // lazily sized; kNoId = free slot
  };

  struct ZoneRecord {
    uint32_t id = kNoId;
    uint32_t domain = kNoId;
    uint32_t first_chunk = 0;
    uint32_t chunk_count = 0;
    uint64_t used_pages = 0;
    uint64_t capacity_pages = 0;
  };

  struct DomainRecord {
    uint64_t footprint_bytes = 0;
    uint64_t zonelet_pages = 0;
    bool above_threshold = false;
    std::vector<uint32_t> zones;
  };

  // A cross-chunk proximity constraint: some physical row of this chunk at
  // logical offset `lof` lies within n_guard rows of `other`'s offset `olof`.
  struct CrossPair {
    uint16_t lof;
    uint16_t olof;
    uint32_t other;
  };

  struct ChunkGeo {
    std::vector<uint32_t> rows;      // member physical rows, ascending
    std::vector<uint32_t> rel_base;  // rel index of each row's slot 0
    std::vector<uint16_t> lofs;      // logical offset of each row
    std::vector<uint32_t> neighbors;   // distance-1 neighbor chunks
    std::vector<CrossPair> cross;      // all pairs within n_guard
  };

  enum class RowClass : uint8_t { Guarded, Data, Multi };
  struct Classified {
    RowClass cls;
    uint32_t domain;  // Data only
  };
  // Candidate roles for the structural safety check.
  enum class Role : uint8_t { ZoneFront, ZoneBody, Zonelet };

  DomainRecord& need_domain(uint32_t id, const char* op);
  bool is_stripe_data_offset(uint32_t lof) const;
  Classified classify_existing(uint32_t chunk, uint32_t lof) const;
  Classified classify_role(Role role, uint32_t domain, uint32_t lof) const;
  bool role_safe(uint32_t chunk, Role role, uint32_t domain) const;

  uint64_t rel_of_pfn(uint64_t pfn, uint32_t chunk) const;
  uint32_t chunk_of_pfn(uint64_t pfn) const;

  bool bits_free(const std::vector<uint64_t>& occ, uint64_t from, uint64_t count) const;
  static void fill_bits(std::vector<uint64_t>& occ, uint64_t from, uint64_t count, bool value);

  // First aligned free run of 2^order pages; returns its starting PFN.
  // guard_rows overrides the chunk's own count (probing free chunks).
  std::optional<uint64_t> find_run(uint32_t chunk, uint32_t order, uint32_t guard_rows) const;
  std::optional<uint64_t> find_zonelet_window(uint32_t chunk, uint32_t order) const;

  void place_run(uint32_t domain, uint32_t chunk, uint64_t pfn, uint64_t count);
  void place_zonelet_page(uint32_t domain, uint32_t chunk, uint64_t pfn);

  std::optional<uint32_t> pick_new_zone_chunk(uint32_t domain, uint32_t order) const;
  std::optional<uint32_t> expand_for(uint32_t domain, std::optional<uint32_t> order);
  uint32_t make_zone(uint32_t domain, uint32_t chunk);
  void release_chunk(uint32_t c);

  std::optional<uint64_t> zonelet_alloc_one(uint32_t domain, uint32_t order);

  AllocatorParams params_;
  DramGeometry geo_;
  GlobalRowTable grt_;

  uint32_t chunk_count_ = 0;
  uint64_t pps_ = 0;          // pages per physical global row
  uint64_t chunk_pages_ = 0;  // pages per chunk
  uint32_t rpl_ = 1;          // physical rows per logical row
  uint32_t zonelet_count_ = 0;
  uint64_t zonelet_capacity_ = 0;  // data pages per striped chunk

  std::vector<ChunkGeo> chunk_geo_;
  std::vector<ChunkRecord> chunks_;
  std::set<uint32_t> free_set_;
  std::map<uint32_t, ZoneRecord> zones_;
  std::map<uint32_t, DomainRecord> domains_;
  std::vector<uint32_t> zonelet_chunks_;  // provisioning order
  uint64_t zonelet_free_pages_ = 0;
  uint32_t next_domain_ = 0;
  uint32_t next_zone_ = 0;
};

}  // namespace rowguard
