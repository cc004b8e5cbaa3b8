#include "rowguard/verifier.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "json.hpp"

namespace rowguard {

namespace {

constexpr size_t kViolationCap = 4096;

// Find a page of `domain` inside global row `row` through per-page ownership.
template <class State>
uint64_t witness_pfn(const State& s, uint64_t row, uint32_t domain) {
  const uint64_t pps = s.geometry().pages_per_global_row;
  for (uint64_t k = 0; k < pps; ++k) {
    const uint64_t pfn = row * pps + k;
    const auto o = s.page_owner(pfn);
    if (o && *o == domain) return pfn;
  }
  return row * pps;  // unreachable for rows the owner map reported
}

template <class State>
ViolationReport check_isolation_impl(const State& s, const GlobalRowTable& grt,
                                     const TransformConfig& t, uint32_t n_guard) {
  ViolationReport rep;
  const DramGeometry& geo = s.geometry();
  if (grt.total_rows() != geo.total_global_rows) {
    rep.findings.push_back("row table covers " + std::to_string(grt.total_rows()) +
                           " rows but the geometry has " +
                           std::to_string(geo.total_global_rows));
    return rep;
  }
  const uint64_t rows = geo.total_global_rows;
  // Ownership rolled up per row-ID from the per-page map; zone and chunk
  // bookkeeping never enters the check.
  std::vector<std::vector<uint32_t>> owners(rows);
  for (uint64_t r = 0; r < rows; ++r) owners[r] = s.row_owners(r);
  // Distance 0 means isolation comes from reservation granularity alone;
  // there is no in-band guard distance to sweep.
  if (n_guard == 0) return rep;

  for (const RankParity parity : {RankParity::Even, RankParity::Odd}) {
    for (const RowSide side : {RowSide::A, RowSide::B}) {
      for (uint64_t pos = 0; pos < rows; ++pos) {
        const auto& oa = owners[row_at_physical(pos, parity, side, t)];
        if (oa.empty()) continue;
        for (uint64_t d = 1; d <= n_guard && pos + d < rows; ++d) {
          const uint64_t row_b = row_at_physical(pos + d, parity, side, t);
          const auto& ob = owners[row_b];
          if (ob.empty()) continue;
          uint32_t da = kNoId, db = kNoId;
          for (uint32_t x : oa) {
            for (uint32_t y : ob) {
              if (x != y) {
                da = x;
                db = y;
                break;
              }
            }
            if (da != kNoId) break;
          }
          if (da == kNoId) continue;  // rows share one single owner: co-location, allowed
          if (rep.violations.size() >= kViolationCap) {
            rep.truncated = true;
            return rep;
          }
          const uint64_t row_a = row_at_physical(pos, parity, side, t);
          rep.violations.push_back({parity, side, pos, pos + d, da, db,
                                    witness_pfn(s, row_a, da), witness_pfn(s, row_b, db)});
        }
      }
    }
  }
  return rep;
}

std::string chunk_tag(uint32_t c) { return "chunk " + std::to_string(c); }

}  // namespace

ViolationReport check_isolation(const Allocator& a, const GlobalRowTable& grt,
                                const TransformConfig& t, uint32_t n_guard) {
  return check_isolation_impl(a, grt, t, n_guard);
}

ViolationReport check_isolation(const BuddyState& b, const GlobalRowTable& grt,
                                const TransformConfig& t, uint32_t n_guard) {
  return check_isolation_impl(b, grt, t, n_guard);
}

std::vector<std::string> audit_state(const Allocator& a) {
  std::vector<std::string> f;
  const DramGeometry& geo = a.geometry();
  const GlobalRowTable& grt = a.grt();
  const AllocatorParams& p = a.params();
  const uint64_t pps = geo.pages_per_global_row;
  const uint32_t rpl = grt.rows_per_logical();

  // Zones, reached through their owning domains.
  std::map<uint32_t, uint32_t> zone_of_chunk;
  uint64_t zone_used_total = 0;
  uint64_t footprint_pages_total = 0;
  uint64_t zonelet_pages_total = 0;
  for (uint32_t d : a.domain_ids()) {
    const auto dom = a.domain(d);
    if (!dom) continue;
    footprint_pages_total += dom->footprint_bytes / geo.page_bytes;
    zonelet_pages_total += dom->zonelet_pages;
    for (uint32_t zid : dom->zones) {
      const auto z = a.zone(zid);
      const std::string ztag = "zone " + std::to_string(zid);
      if (!z) {
        f.push_back("domain " + std::to_string(d) + " lists " + ztag + " which does not exist");
        continue;
      }
      if (z->domain != d)
        f.push_back(ztag + " belongs to domain " + std::to_string(z->domain) +
                    " but is listed by domain " + std::to_string(d));
      if (z->chunk_count == 0) {
        f.push_back(ztag + " has no chunks");
        continue;
      }
      uint64_t used_sum = 0, cap_sum = 0;
      std::vector<uint32_t> empty_members;
      for (uint32_t c = z->first_chunk; c < z->first_chunk + z->chunk_count; ++c) {
        if (c >= a.chunk_count()) {
          f.push_back(ztag + " runs past the last chunk");
          break;
        }
        if (!zone_of_chunk.emplace(c, zid).second) {
          f.push_back(chunk_tag(c) + " is claimed by two zones");
          continue;
        }
        const ChunkSummary cs = a.chunk_summary(c);
        if (cs.kind != ChunkKind::ZoneMember || cs.zone_id != zid || cs.domain != z->domain) {
          f.push_back(ztag + ": " + chunk_tag(c) +
                      " is not one of its members; zone chunks must form one contiguous run");
          continue;
        }
        if (cs.position != c - z->first_chunk)
          f.push_back(ztag + ": " + chunk_tag(c) + " reports position " +
                      std::to_string(cs.position) + ", expected " +
                      std::to_string(c - z->first_chunk));
        const uint32_t expect_g = (c == z->first_chunk) ? p.n_guard : 0;
        if (cs.guard_rows != expect_g)
          f.push_back(ztag + ": " + chunk_tag(c) + " has " + std::to_string(cs.guard_rows) +
                      " guard rows, expected " + std::to_string(expect_g) +
                      " (guards sit at the zone front only)");
        if (cs.used_pages == 0) empty_members.push_back(c);
        used_sum += cs.used_pages;
        cap_sum += cs.data_capacity;
      }
      // Empty members are allowed only where the shrink/split rules are
      // genuinely blocked: dropping a first or interior chunk converts the
      // successor's front rows into guards, so those rows must be free.
      const auto front_clear = [&](uint32_t c) {
        const uint64_t span = uint64_t(p.n_guard) * rpl * pps;
        for (uint64_t rel = 0; rel < span; ++rel)
          if (a.page_owner(a.select_frame(c, rel)).has_value()) return false;
        return true;
      };
      const uint32_t last = z->first_chunk + z->chunk_count - 1;
      for (uint32_t c : empty_members) {
        if (z->chunk_count < 2) break;  // covered by the empty-zone finding
        if (c == last)
          f.push_back(ztag + ": " + chunk_tag(c) +
                      " is an empty last chunk; the tail reclaim rule should have fired");
        else if (front_clear(c + 1))
          f.push_back(ztag + ": " + chunk_tag(c) + " is empty and the next front is clear; the " +
                      (c == z->first_chunk ? "shrink" : "split") + " rule should have fired");
      }
      if (z->used_pages != used_sum)
        f.push_back(ztag + " caches " + std::to_string(z->used_pages) +
                    " used pages but its members hold " + std::to_string(used_sum));
      if (z->capacity_pages != cap_sum)
        f.push_back(ztag + " caches capacity " + std::to_string(z->capacity_pages) +
                    " but its members provide " + std::to_string(cap_sum));
      if (z->used_pages == 0) f.push_back(ztag + " is empty and should have been reclaimed");
      zone_used_total += used_sum;
    }
  }

  const std::vector<uint32_t> regions = a.zonelet_regions();
  const std::set<uint32_t> region_set(regions.begin(), regions.end());
  if (region_set.size() != regions.size()) f.push_back("zonelet region list has duplicates");
  const std::vector<uint32_t> offs = a.data_row_offsets();
  const std::set<uint32_t> data_lofs(offs.begin(), offs.end());

  uint64_t free_chunks = 0, zonelet_used_total = 0, zonelet_free_total = 0;
  for (uint32_t c = 0; c < a.chunk_count(); ++c) {
    const ChunkSummary cs = a.chunk_summary(c);
    uint64_t owned = 0;
    for (uint32_t lof = 0; lof < p.chunk_rows; ++lof) {
      const auto mem = grt.members(uint64_t{c} * p.chunk_rows + lof);
      uint64_t row_owned = 0;
      for (uint32_t m = 0; m < rpl; ++m) {
        const uint64_t base = uint64_t{mem[m]} * pps;
        for (uint64_t k = 0; k < pps; ++k)
          if (a.page_owner(base + k)) ++row_owned;
      }
      owned += row_owned;
      const bool must_be_empty =
          cs.kind == ChunkKind::Free ||
          (cs.kind == ChunkKind::ZoneMember && lof < cs.guard_rows) ||
          (cs.kind == ChunkKind::ZoneletRegion && data_lofs.count(lof) == 0);
      if (must_be_empty && row_owned != 0)
        f.push_back(chunk_tag(c) + ": row at offset " + std::to_string(lof) +
                    " must stay unowned (guard, remainder, or free) but has " +
                    std::to_string(row_owned) + " owned pages");
    }
    if (owned != cs.used_pages)
      f.push_back(chunk_tag(c) + ": ownership recount found " + std::to_string(owned) +
                  " pages but the cached occupancy counter says " +
                  std::to_string(cs.used_pages));
    switch (cs.kind) {
      case ChunkKind::Free:
        ++free_chunks;
        break;
      case ChunkKind::ZoneMember:
        if (zone_of_chunk.find(c) == zone_of_chunk.end())
          f.push_back(chunk_tag(c) + " is marked as a zone member but no zone covers it");
        break;
      case ChunkKind::ZoneletRegion:
        if (region_set.count(c) == 0)
          f.push_back(chunk_tag(c) + " is striped but missing from the region list");
        zonelet_used_total += cs.used_pages;
        zonelet_free_total += cs.data_capacity - cs.used_pages;
        break;
    }
    if (cs.kind != ChunkKind::ZoneletRegion && region_set.count(c) != 0)
      f.push_back("region list names " + chunk_tag(c) + " which is not striped");
  }
  if (free_chunks != a.free_chunk_count())
    f.push_back("free-chunk count: " + std::to_string(free_chunks) + " chunks are free but the pool says " +
                std::to_string(a.free_chunk_count()));
  if (zonelet_free_total != a.zonelet_free_pages())
    f.push_back("zonelet free-page counter: chunks hold " + std::to_string(zonelet_free_total) +
                ", counter says " + std::to_string(a.zonelet_free_pages()));
  if (zonelet_pages_total != zonelet_used_total)
    f.push_back("domains record " + std::to_string(zonelet_pages_total) +
                " zonelet pages but striped chunks hold " + std::to_string(zonelet_used_total));
  if (footprint_pages_total != zone_used_total + zonelet_used_total)
    f.push_back("domain footprints total " + std::to_string(footprint_pages_total) +
                " pages but zones and zonelets hold " +
                std::to_string(zone_used_total + zonelet_used_total));
  return f;
}

std::vector<std::string> audit_state(const BuddyState& b) {
  std::vector<std::string> f;
  struct Seg {
    uint64_t base;
    uint64_t size;
    bool free;
  };
  std::vector<Seg> segs;
  std::vector<std::set<uint64_t>> free_sets(b.max_order() + 1);
  for (uint32_t k = 0; k <= b.max_order(); ++k) {
    for (uint64_t base : b.free_blocks(k)) {
      segs.push_back({base, uint64_t{1} << k, true});
      free_sets[k].insert(base);
    }
  }
  uint64_t live = 0;
  std::map<uint32_t, uint64_t> foot;
  for (const auto& blk : b.allocated_blocks()) {
    segs.push_back({blk.base, uint64_t{1} << blk.order, false});
    live += uint64_t{1} << blk.order;
    foot[blk.domain] += uint64_t{1} << blk.order;
  }
  std::sort(segs.begin(), segs.end(), [](const Seg& x, const Seg& y) { return x.base < y.base; });
  uint64_t pos = 0, free_total = 0;
  for (const Seg& s : segs) {
    if (s.base % s.size != 0)
      f.push_back("block at " + std::to_string(s.base) + " is misaligned for its size " +
                  std::to_string(s.size));
    if (s.base != pos) {
      f.push_back("blocks do not partition the page space: expected next block at " +
                  std::to_string(pos) + ", found " + std::to_string(s.base));
      break;
    }
    pos = s.base + s.size;
    if (s.free) free_total += s.size;
  }
  if (pos != b.total_pages() && f.empty())
    f.push_back("blocks cover " + std::to_string(pos) + " of " + std::to_string(b.total_pages()) +
                " pages");
  if (free_total != b.free_page_count())
    f.push_back("free lists hold " + std::to_string(free_total) + " pages, counter says " +
                std::to_string(b.free_page_count()));
  if (live != b.allocated_pages())
    f.push_back("live blocks hold " + std::to_string(live) + " pages, counter says " +
                std::to_string(b.allocated_pages()));
  for (uint32_t d : b.domain_ids()) {
    const uint64_t expect = b.domain_footprint_pages(d);
    const uint64_t have = foot.count(d) ? foot.at(d) : 0;
    if (expect != have)
      f.push_back("domain " + std::to_string(d) + " footprint counter says " +
                  std::to_string(expect) + " pages, blocks hold " + std::to_string(have));
  }
  // Coalescing fixpoint: no two buddies may both sit free at the same order.
  for (uint32_t k = 0; k < b.max_order(); ++k) {
    for (uint64_t base : free_sets[k]) {
      const uint64_t buddy = base ^ (uint64_t{1} << k);
      if (base < buddy && free_sets[k].count(buddy) != 0)
        f.push_back("uncoalesced buddy pair at order " + std::to_string(k) + ": blocks " +
                    std::to_string(base) + " and " + std::to_string(buddy));
    }
  }
  return f;
}

std::string to_json(const ViolationReport& r, int indent) {
  nlohmann::json violations = nlohmann::json::array();
  for (const Violation& v : r.violations) {
    violations.push_back({{"rank_parity", v.parity == RankParity::Even ? "even" : "odd"},
                          {"side", v.side == RowSide::A ? "A" : "B"},
                          {"row1", v.row1},
                          {"row2", v.row2},
                          {"domain1", v.domain1},
                          {"domain2", v.domain2},
                          {"pfn1", v.pfn1},
                          {"pfn2", v.pfn2}});
  }
  nlohmann::json j{{"clean", r.clean()},
                   {"truncated", r.truncated},
                   {"violations", std::move(violations)},
                   {"findings", r.findings}};
  return j.dump(indent);
}

}  // namespace rowguard
