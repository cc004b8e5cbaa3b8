#include "rowguard/allocator.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <tuple>

#include "json.hpp"

namespace rowguard {

namespace {

// Modeled sizes of the fixed kernel-resident records, for metadata_size.
constexpr uint64_t kChunkRecordBytes = 16;
constexpr uint64_t kDomainRecordBytes = 48;
constexpr uint64_t kZoneRecordBytes = 24;
constexpr uint64_t kZoneletRecordBytes = 8;

}  // namespace

const char* to_string(AllocMode m) {
  switch (m) {
    case AllocMode::Aegis: return "aegis";
    case AllocMode::Zebram: return "zebram";
    case AllocMode::Siloz: return "siloz";
    case AllocMode::Buddy: return "buddy";
  }
  return "?";
}

AllocMode alloc_mode_from_string(std::string_view s) {
  if (s == "aegis") return AllocMode::Aegis;
  if (s == "zebram") return AllocMode::Zebram;
  if (s == "siloz") return AllocMode::Siloz;
  if (s == "buddy") return AllocMode::Buddy;
  throw ConfigError("unknown allocator mode: " + std::string(s));
}

AllocatorParams mode_params(AllocMode mode, AddressMode addressing, uint32_t rows_per_logical) {
  if (rows_per_logical == 0) throw ConfigError("rows_per_logical must be positive");
  AllocatorParams p;
  p.mode = mode;
  const bool cx = addressing == AddressMode::Complex;
  switch (mode) {
    case AllocMode::Aegis:
    case AllocMode::Zebram:
      p.chunk_rows = cx ? 8 : 16;
      break;
    case AllocMode::Siloz:
      if (512 % rows_per_logical)
        throw ConfigError("siloz chunk of 512 rows is not divisible by rows_per_logical");
      p.chunk_rows = 512 / rows_per_logical;
      p.n_guard = 0;
      p.zonelets_enabled = false;
      break;
    case AllocMode::Buddy:
      break;  // buddy ignores the zone machinery entirely
  }
  return p;
}

Allocator::Allocator(const DramGeometry& geo, const GlobalRowTable& grt, const AllocatorParams& p)
    : params_(p), geo_(geo), grt_(grt) {
  if (params_.mode == AllocMode::Buddy)
    throw ConfigError("buddy mode is served by the baseline allocator, not the zone allocator");
  if (grt_.total_rows() != geo_.total_global_rows)
    throw ConfigError("row table was built for a different geometry");
  if (params_.chunk_rows == 0 || params_.chunk_rows <= params_.n_guard)
    throw ConfigError("chunk_rows must exceed n_guard");
  rpl_ = grt_.rows_per_logical();
  if (!grt_.identity() && params_.chunk_rows > GlobalRowTable::kGroupRows && params_.n_guard > 0)
    throw ConfigError("complex addressing caps guarded chunks at 8 logical rows");
  if (grt_.logical_rows() % params_.chunk_rows)
    throw ConfigError("chunk_rows must divide the logical row count");
  if (params_.mode == AllocMode::Zebram && !params_.zonelets_enabled)
    throw ConfigError("zebram mode requires zonelets");
  if (params_.mode == AllocMode::Siloz && (params_.n_guard != 0 || params_.zonelets_enabled))
    throw ConfigError("siloz mode means no guard rows and no zonelets");
  if (params_.max_order > 30) throw ConfigError("max_order is implausibly large");

  pps_ = geo_.pages_per_global_row;
  chunk_count_ = static_cast<uint32_t>(grt_.logical_rows() / params_.chunk_rows);
  chunk_pages_ = uint64_t(params_.chunk_rows) * rpl_ * pps_;
  zonelet_count_ = params_.chunk_rows / (params_.n_guard + 1);
  zonelet_capacity_ = uint64_t(zonelet_count_) * rpl_ * pps_;

  const uint32_t cr = params_.chunk_rows;
  const uint64_t total_rows = grt_.total_rows();
  chunk_geo_.resize(chunk_count_);
  chunks_.resize(chunk_count_);

  for (uint32_t c = 0; c < chunk_count_; ++c) {
    ChunkGeo& cg = chunk_geo_[c];
    std::vector<std::array<uint32_t, 3>> ents;  // row, lof, member index
    ents.reserve(size_t(cr) * rpl_);
    for (uint32_t lof = 0; lof < cr; ++lof) {
      const uint64_t logical = uint64_t(c) * cr + lof;
      const auto mem = grt_.members(logical);
      for (uint32_t mi = 0; mi < rpl_; ++mi) {
        for (uint32_t mj = 0; mj < mi; ++mj)
          if (mem[mj] == mem[mi])
            throw ConfigError(
                "logical row with repeated member rows cannot back an allocator chunk");
        ents.push_back({mem[mi], lof, mi});
      }
    }
    std::sort(ents.begin(), ents.end());
    cg.rows.reserve(ents.size());
    cg.rel_base.reserve(ents.size());
    cg.lofs.reserve(ents.size());
    for (const auto& e : ents) {
      cg.rows.push_back(e[0]);
      cg.lofs.push_back(static_cast<uint16_t>(e[1]));
      cg.rel_base.push_back(static_cast<uint32_t>((uint64_t(e[1]) * rpl_ + e[2]) * pps_));
    }

    // Cross-chunk proximity pairs over physical positions (the locations the
    // chunk's logical rows occupy in every rank/side space), plus distance-1
    // chunk neighbors for placement decisions.
    std::set<std::tuple<uint16_t, uint16_t, uint32_t>> cross;
    std::set<uint32_t> nbrs;
    const uint32_t reach = std::max<uint32_t>(params_.n_guard, 1);
    for (uint32_t lof = 0; lof < cr; ++lof) {
      const uint64_t logical = uint64_t(c) * cr + lof;
      const auto pos = grt_.physical_rows(logical);
      for (uint32_t pi = 0; pi < rpl_; ++pi) {
        const uint64_t ppos = pos[pi];
        for (uint32_t d = 1; d <= reach; ++d) {
          for (int dir = -1; dir <= 1; dir += 2) {
            const int64_t q = int64_t(ppos) + dir * int64_t(d);
            if (q < 0 || q >= int64_t(total_rows)) continue;
            const uint64_t lq = grt_.logical_of_physical(uint64_t(q));
            const uint32_t qc = static_cast<uint32_t>(lq / cr);
            if (qc == c) continue;
            if (d == 1) nbrs.insert(qc);
            if (d <= params_.n_guard)
              cross.insert({static_cast<uint16_t>(lof), static_cast<uint16_t>(lq % cr), qc});
          }
        }
      }
    }
    cg.neighbors.assign(nbrs.begin(), nbrs.end());
    cg.cross.reserve(cross.size());
    for (const auto& [lof, olof, other] : cross) cg.cross.push_back({lof, olof, other});

    chunks_[c].occupancy.assign((chunk_pages_ + 63) / 64, 0);
    free_set_.insert(c);
  }
}

// ---------- classification and the structural safety check ----------

bool Allocator::is_stripe_data_offset(uint32_t lof) const {
  const uint32_t period = params_.n_guard + 1;
  return lof < zonelet_count_ * period && lof % period == params_.n_guard;
}

Allocator::Classified Allocator::classify_existing(uint32_t chunk, uint32_t lof) const {
  const ChunkRecord& rec = chunks_[chunk];
  switch (rec.kind) {
    case ChunkKind::Free:
      return {RowClass::Guarded, kNoId};  // callers skip free chunks
    case ChunkKind::ZoneMember:
      if (lof < rec.guard_rows) return {RowClass::Guarded, kNoId};
      return {RowClass::Data, rec.domain};
    case ChunkKind::ZoneletRegion:
      if (is_stripe_data_offset(lof)) return {RowClass::Multi, kNoId};
      return {RowClass::Guarded, kNoId};
  }
  return {RowClass::Guarded, kNoId};
}

Allocator::Classified Allocator::classify_role(Role role, uint32_t domain, uint32_t lof) const {
  switch (role) {
    case Role::ZoneFront:
      if (lof < params_.n_guard) return {RowClass::Guarded, kNoId};
      return {RowClass::Data, domain};
    case Role::ZoneBody:
      return {RowClass::Data, domain};
    case Role::Zonelet:
      if (is_stripe_data_offset(lof)) return {RowClass::Multi, kNoId};
      return {RowClass::Guarded, kNoId};
  }
  return {RowClass::Guarded, kNoId};
}

// Would giving `chunk` this role put any of its data rows within n_guard of a
// row that can hold another domain's data? Free neighbors are skipped: they
// are re-checked against our then-current role when they get assigned.
bool Allocator::role_safe(uint32_t chunk, Role role, uint32_t domain) const {
  for (const CrossPair& cp : chunk_geo_[chunk].cross) {
    if (chunks_[cp.other].kind == ChunkKind::Free) continue;
    const Classified mine = classify_role(role, domain, cp.lof);
    const Classified theirs = classify_existing(cp.other, cp.olof);
    if (mine.cls == RowClass::Guarded || theirs.cls == RowClass::Guarded) continue;
    if (mine.cls == RowClass::Data && theirs.cls == RowClass::Data && mine.domain == theirs.domain)
      continue;
    return false;
  }
  return true;
}

// ---------- bit vector helpers ----------

bool Allocator::bits_free(const std::vector<uint64_t>& occ, uint64_t from, uint64_t count) const {
  uint64_t i = from;
  const uint64_t end = from + count;
  while (i < end) {
    const uint64_t idx = i >> 6, off = i & 63;
    const uint64_t n = std::min<uint64_t>(64 - off, end - i);
    const uint64_t mask = (n == 64 ? ~0ull : ((1ull << n) - 1)) << off;
    if (occ[idx] & mask) return false;
    i += n;
  }
  return true;
}

void Allocator::fill_bits(std::vector<uint64_t>& occ, uint64_t from, uint64_t count, bool value) {
  uint64_t i = from;
  const uint64_t end = from + count;
  while (i < end) {
    const uint64_t idx = i >> 6, off = i & 63;
    const uint64_t n = std::min<uint64_t>(64 - off, end - i);
    const uint64_t mask = (n == 64 ? ~0ull : ((1ull << n) - 1)) << off;
    if (value)
      occ[idx] |= mask;
    else
      occ[idx] &= ~mask;
    i += n;
  }
}

// ---------- PFN resolution ----------

uint32_t Allocator::chunk_of_pfn(uint64_t pfn) const {
  if (pfn >= geo_.total_pages)
    throw AllocError(AllocErrc::BadIndex, "pfn " + std::to_string(pfn) + " out of range");
  return static_cast<uint32_t>(grt_.logical_of_row(pfn / pps_) / params_.chunk_rows);
}

uint64_t Allocator::rel_of_pfn(uint64_t pfn, uint32_t chunk) const {
  const ChunkGeo& cg = chunk_geo_[chunk];
  const uint32_t row = static_cast<uint32_t>(pfn / pps_);
  const auto it = std::lower_bound(cg.rows.begin(), cg.rows.end(), row);
  assert(it != cg.rows.end() && *it == row);
  return cg.rel_base[size_t(it - cg.rows.begin())] + pfn % pps_;
}

// ---------- run search ----------

namespace {
// First free aligned window of `want` bits inside [base, base+len), skipping
// whole occupied words. Returns the window's offset from base.
std::optional<uint64_t> find_window(const std::vector<uint64_t>& occ, uint64_t base, uint64_t len,
                                    uint64_t want) {
  for (uint64_t s = 0; s + want <= len;) {
    const uint64_t bit = base + s;
    const uint64_t idx = bit >> 6;
    if (occ[idx] == ~0ull) {
      // every window touching this word is blocked
      const uint64_t next = (idx + 1) << 6;
      const uint64_t rel = next > base ? next - base : 0;
      s = (rel + want - 1) / want * want;
      continue;
    }
    bool free_run = true;
    for (uint64_t k = 0; k < want; ++k)
      if (occ[(bit + k) >> 6] >> ((bit + k) & 63) & 1) {
        free_run = false;
        break;
      }
    if (free_run) return s;
    s += want;
  }
  return std::nullopt;
}
}  // namespace

std::optional<uint64_t> Allocator::find_run(uint32_t chunk, uint32_t order,
                                            uint32_t guard_rows) const {
  const ChunkGeo& cg = chunk_geo_[chunk];
  const ChunkRecord& rec = chunks_[chunk];
  const uint64_t want = 1ull << order;
  const size_t n = cg.rows.size();
  if (want <= pps_) {
    for (size_t i = 0; i < n; ++i) {
      if (cg.lofs[i] < guard_rows) continue;
      if (auto s = find_window(rec.occupancy, cg.rel_base[i], pps_, want))
        return uint64_t(cg.rows[i]) * pps_ + *s;
    }
    return std::nullopt;
  }
  // whole-row run: m consecutive row-ids, all in this chunk, aligned
  const uint64_t m = want / pps_;
  for (size_t i = 0; i < n; ++i) {
    const uint32_t r0 = cg.rows[i];
    if (r0 % m) continue;
    if (i + m > n || cg.rows[i + m - 1] != r0 + m - 1) continue;
    bool ok = true;
    for (uint64_t k = 0; k < m && ok; ++k)
      ok = cg.lofs[i + k] >= guard_rows && bits_free(rec.occupancy, cg.rel_base[i + k], pps_);
    if (ok) return uint64_t(r0) * pps_;
  }
  return std::nullopt;
}

std::optional<uint64_t> Allocator::find_zonelet_window(uint32_t chunk, uint32_t order) const {
  const ChunkGeo& cg = chunk_geo_[chunk];
  const ChunkRecord& rec = chunks_[chunk];
  const uint64_t want = 1ull << order;
  if (want > pps_) return std::nullopt;
  for (size_t i = 0; i < cg.rows.size(); ++i) {
    if (!is_stripe_data_offset(cg.lofs[i])) continue;
    if (auto s = find_window(rec.occupancy, cg.rel_base[i], pps_, want))
      return uint64_t(cg.rows[i]) * pps_ + *s;
  }
  return std::nullopt;
}

// ---------- placement ----------

void Allocator::place_run(uint32_t domain, uint32_t chunk, uint64_t pfn, uint64_t count) {
  ChunkRecord& rec = chunks_[chunk];
  uint64_t p = pfn, left = count;
  while (left) {
    const uint64_t n = std::min(left, pps_ - p % pps_);
    fill_bits(rec.occupancy, rel_of_pfn(p, chunk), n, true);
    p += n;
    left -= n;
  }
  rec.used_pages += count;
  zones_.at(rec.zone_id).used_pages += count;
  domains_.at(domain).footprint_bytes += count * geo_.page_bytes;
}

// ---------- zone management ----------

uint32_t Allocator::make_zone(uint32_t domain, uint32_t chunk) {
  const uint32_t zid = next_zone_++;
  ZoneRecord z;
  z.id = zid;
  z.domain = domain;
  z.first_chunk = chunk;
  z.chunk_count = 1;
  z.capacity_pages = chunk_pages_ - uint64_t(params_.n_guard) * rpl_ * pps_;
  zones_.emplace(zid, z);
  ChunkRecord& rec = chunks_[chunk];
  rec.kind = ChunkKind::ZoneMember;
  rec.domain = domain;
  rec.zone_id = zid;
  rec.guard_rows = params_.n_guard;
  free_set_.erase(chunk);
  domains_.at(domain).zones.push_back(zid);
  return zid;
}

std::optional<uint32_t> Allocator::pick_new_zone_chunk(uint32_t domain, uint32_t order) const {
  // Prefer a free chunk with every neighbor free, to keep expansion room.
  for (uint32_t c : free_set_) {
    bool clear = true;
    for (uint32_t nb : chunk_geo_[c].neighbors)
      if (chunks_[nb].kind != ChunkKind::Free) {
        clear = false;
        break;
      }
    if (clear && role_safe(c, Role::ZoneFront, domain) && find_run(c, order, 0)) return c;
  }
  for (uint32_t c : free_set_)
    if (role_safe(c, Role::ZoneFront, domain) && find_run(c, order, 0)) return c;
  return std::nullopt;
}

std::optional<uint32_t> Allocator::expand_for(uint32_t domain, std::optional<uint32_t> order) {
  DomainRecord& dom = domains_.at(domain);
  for (uint32_t zid : dom.zones) {
    ZoneRecord& z = zones_.at(zid);
    const uint64_t cand64 = uint64_t(z.first_chunk) + z.chunk_count;
    if (cand64 >= chunk_count_) continue;
    const uint32_t cand = static_cast<uint32_t>(cand64);
    if (chunks_[cand].kind != ChunkKind::Free) continue;
    if (order && !find_run(cand, *order, 0)) continue;
    if (!role_safe(cand, Role::ZoneBody, domain)) continue;
    ChunkRecord& rec = chunks_[cand];
    rec.kind = ChunkKind::ZoneMember;
    rec.domain = domain;
    rec.zone_id = zid;
    rec.guard_rows = 0;
    z.chunk_count += 1;
    z.capacity_pages += chunk_pages_;
    free_set_.erase(cand);
    return cand;
  }
  return std::nullopt;
}

void Allocator::release_chunk(uint32_t c) {
  ChunkRecord& rec = chunks_[c];
  assert(rec.used_pages == 0);
  rec.kind = ChunkKind::Free;
  rec.domain = kNoId;
  rec.zone_id = kNoId;
  rec.guard_rows = 0;
  rec.zonelet_owner.clear();
  rec.zonelet_owner.shrink_to_fit();
  free_set_.insert(c);
}

// ---------- zonelets ----------

uint32_t Allocator::provision_zonelet_region() {
  if (!params_.zonelets_enabled)
    throw AllocError(AllocErrc::ZoneletsDisabled, "zonelets are disabled in this configuration");
  uint32_t target = kNoId;
  for (uint32_t c : free_set_)
    if (role_safe(c, Role::Zonelet, kNoId)) {
      target = c;
      break;
    }
  if (target == kNoId)
    throw AllocError(AllocErrc::OutOfMemory, "no free chunk can be striped into zonelets");
  ChunkRecord& rec = chunks_[target];
  rec.kind = ChunkKind::ZoneletRegion;
  rec.guard_rows = params_.chunk_rows - zonelet_count_;  // stripe guards + remainder
  free_set_.erase(target);
  zonelet_chunks_.push_back(target);
  zonelet_free_pages_ += zonelet_capacity_;
  return target;
}

void Allocator::place_zonelet_page(uint32_t domain, uint32_t chunk, uint64_t pfn) {
  ChunkRecord& rec = chunks_[chunk];
  const uint64_t rel = rel_of_pfn(pfn, chunk);
  fill_bits(rec.occupancy, rel, 1, true);
  if (rec.zonelet_owner.empty()) rec.zonelet_owner.assign(chunk_pages_, kNoId);
  rec.zonelet_owner[rel] = domain;
  rec.used_pages += 1;
  zonelet_free_pages_ -= 1;
  DomainRecord& dom = domains_.at(domain);
  dom.footprint_bytes += geo_.page_bytes;
  dom.zonelet_pages += 1;
}

std::optional<uint64_t> Allocator::zonelet_alloc_one(uint32_t domain, uint32_t order) {
  const uint64_t want = 1ull << order;
  if (want > pps_) return std::nullopt;  // cannot fit one data row
  auto commit = [&](uint32_t c, uint64_t pfn) {
    for (uint64_t k = 0; k < want; ++k) place_zonelet_page(domain, c, pfn + k);
    return pfn;
  };
  for (uint32_t c : zonelet_chunks_) {
    if (chunks_[c].used_pages == zonelet_capacity_) continue;
    if (auto pfn = find_zonelet_window(c, order)) return commit(c, *pfn);
  }
  // Regions are provisioned only once every existing zonelet page is taken.
  if (zonelet_free_pages_ == 0 && !free_set_.empty()) {
    uint32_t c;
    try {
      c = provision_zonelet_region();
    } catch (const AllocError&) {
      return std::nullopt;  // no free chunk passes the safety check
    }
    if (auto pfn = find_zonelet_window(c, order)) return commit(c, *pfn);
  }
  return std::nullopt;
}

// ---------- domains ----------

Allocator::DomainRecord& Allocator::need_domain(uint32_t id, const char* op) {
  const auto it = domains_.find(id);
  if (it == domains_.end())
    throw AllocError(AllocErrc::UnknownDomain,
                     std::string(op) + ": unknown domain " + std::to_string(id));
  return it->second;
}

uint32_t Allocator::create_domain() {
  const uint32_t id = next_domain_++;
  domains_.emplace(id, DomainRecord{});
  return id;
}

void Allocator::destroy_domain(uint32_t domain) {
  DomainRecord& dom = need_domain(domain, "destroy_domain");
  if (dom.footprint_bytes != 0)
    throw AllocError(AllocErrc::DomainBusy,
                     "destroy_domain: domain " + std::to_string(domain) + " has live pages");
  // Empty zones normally self-reclaim on the last free; sweep up defensively.
  for (uint32_t zid : dom.zones) {
    const auto it = zones_.find(zid);
    if (it == zones_.end()) continue;
    const ZoneRecord& z = it->second;
    for (uint32_t c = z.first_chunk; c < z.first_chunk + z.chunk_count; ++c) release_chunk(c);
    zones_.erase(it);
  }
  domains_.erase(domain);
}

// ---------- allocation ----------

std::vector<uint64_t> Allocator::alloc_pages(uint32_t domain, uint32_t order) {
  DomainRecord& dom = need_domain(domain, "alloc_pages");
  if (order > params_.max_order)
    throw AllocError(AllocErrc::BadOrder, "order " + std::to_string(order) + " exceeds max_order " +
                                              std::to_string(params_.max_order));
  const uint64_t want = 1ull << order;
  std::optional<uint64_t> placed;

  if (params_.mode == AllocMode::Zebram) {
    placed = zonelet_alloc_one(domain, order);
    if (!placed)
      throw AllocError(AllocErrc::OutOfMemory, "no zonelet window for the request");
  } else {
    const bool below = !dom.above_threshold &&
                       dom.footprint_bytes < params_.switch_threshold_bytes;
    if (params_.zonelets_enabled && below) placed = zonelet_alloc_one(domain, order);
    // Requests a zonelet cannot hold, and zonelet misses, go to the zones.
    if (!placed) {
      // A zone seeded for this request can end up with nothing placed in it
      // when guards break run alignment; if the allocation fails outright,
      // reclaim such empty zones instead of leaking them.
      const auto reclaim_empty_seeds = [&] {
        const std::vector<uint32_t> zs(dom.zones.begin(), dom.zones.end());
        for (uint32_t zid : zs) {
          const auto it = zones_.find(zid);
          if (it != zones_.end() && it->second.used_pages == 0) shrink_or_split(zid);
        }
      };
      uint64_t spins = free_set_.size() + 2;
      while (!placed && spins--) {
        for (auto zit = dom.zones.begin(); zit != dom.zones.end() && !placed; ++zit) {
          ZoneRecord& z = zones_.at(*zit);
          if (z.used_pages + want > z.capacity_pages) continue;
          for (uint32_t pos = 0; pos < z.chunk_count && !placed; ++pos) {
            const uint32_t c = z.first_chunk + pos;
            const ChunkRecord& rec = chunks_[c];
            const uint64_t cap = chunk_pages_ - uint64_t(rec.guard_rows) * rpl_ * pps_;
            if (rec.used_pages + want > cap) continue;
            if (auto pfn = find_run(c, order, rec.guard_rows)) {
              place_run(domain, c, *pfn, want);
              placed = pfn;
            }
          }
        }
        if (placed) break;
        if (auto cand = expand_for(domain, order)) {
          const auto pfn = find_run(*cand, order, 0);
          assert(pfn);
          place_run(domain, *cand, *pfn, want);
          placed = pfn;
          break;
        }
        const auto c = pick_new_zone_chunk(domain, order);
        if (!c) {
          reclaim_empty_seeds();
          throw AllocError(AllocErrc::OutOfMemory, "no chunk can serve the request");
        }
        make_zone(domain, *c);
        if (auto pfn = find_run(*c, order, params_.n_guard)) {
          place_run(domain, *c, *pfn, want);
          placed = pfn;
        }
        // else: the fresh zone seeds expansion on the next pass
      }
      if (!placed) {
        reclaim_empty_seeds();
        throw AllocError(AllocErrc::OutOfMemory, "no chunk can serve the request");
      }
    }
  }

  if (dom.footprint_bytes > params_.switch_threshold_bytes) dom.above_threshold = true;
  std::vector<uint64_t> out(want);
  for (uint64_t k = 0; k < want; ++k) out[k] = *placed + k;
  return out;
}

std::vector<uint64_t> Allocator::alloc_from_zonelet(uint32_t domain, uint64_t count) {
  DomainRecord& dom = need_domain(domain, "alloc_from_zonelet");
  if (!params_.zonelets_enabled)
    throw AllocError(AllocErrc::ZoneletsDisabled, "zonelets are disabled in this configuration");
  std::vector<uint64_t> out;
  out.reserve(count);
  std::vector<uint32_t> provisioned;
  auto rollback = [&] {
    for (uint64_t pfn : out) {
      const uint32_t c = chunk_of_pfn(pfn);
      ChunkRecord& rec = chunks_[c];
      const uint64_t rel = rel_of_pfn(pfn, c);
      fill_bits(rec.occupancy, rel, 1, false);
      rec.zonelet_owner[rel] = kNoId;
      rec.used_pages -= 1;
      zonelet_free_pages_ += 1;
    }
    dom.footprint_bytes -= out.size() * geo_.page_bytes;
    dom.zonelet_pages -= out.size();
    for (uint32_t c : provisioned) {
      zonelet_free_pages_ -= zonelet_capacity_;
      zonelet_chunks_.erase(std::find(zonelet_chunks_.begin(), zonelet_chunks_.end(), c));
      release_chunk(c);
    }
  };
  while (out.size() < count) {
    bool got = false;
    for (uint32_t c : zonelet_chunks_) {
      const ChunkRecord& rec = chunks_[c];
      if (rec.used_pages == zonelet_capacity_) continue;
      const ChunkGeo& cg = chunk_geo_[c];
      for (size_t i = 0; i < cg.rows.size() && out.size() < count; ++i) {
        if (!is_stripe_data_offset(cg.lofs[i])) continue;
        for (uint64_t s = 0; s < pps_ && out.size() < count; ++s) {
          const uint64_t rel = cg.rel_base[i] + s;
          if (rec.occupancy[rel >> 6] >> (rel & 63) & 1) continue;
          const uint64_t pfn = uint64_t(cg.rows[i]) * pps_ + s;
          place_zonelet_page(domain, c, pfn);
          out.push_back(pfn);
          got = true;
        }
      }
      if (out.size() == count) break;
    }
    if (out.size() == count) break;
    if (zonelet_free_pages_ == 0 && !free_set_.empty()) {
      try {
        provisioned.push_back(provision_zonelet_region());
        continue;
      } catch (const AllocError&) {
        // fall through to out-of-memory below
      }
    }
    if (!got) {
      rollback();
      throw AllocError(AllocErrc::OutOfMemory, "zonelet capacity exhausted");
    }
  }
  if (dom.footprint_bytes > params_.switch_threshold_bytes) dom.above_threshold = true;
  return out;
}

// ---------- deallocation ----------

uint64_t Allocator::free_pages(uint32_t domain, uint64_t pfn, uint32_t order) {
  DomainRecord& dom = need_domain(domain, "free_pages");
  if (order > params_.max_order)
    throw AllocError(AllocErrc::BadOrder, "order " + std::to_string(order) + " exceeds max_order " +
                                              std::to_string(params_.max_order));
  const uint64_t want = 1ull << order;
  if (pfn >= geo_.total_pages || pfn + want > geo_.total_pages)
    throw AllocError(AllocErrc::BadIndex, "page range runs past the end of memory");

  // Validate the whole range before touching anything.
  for (uint64_t p = pfn; p < pfn + want;) {
    const uint32_t c = chunk_of_pfn(p);
    const ChunkRecord& rec = chunks_[c];
    const uint64_t n = std::min(pfn + want - p, pps_ - p % pps_);
    const uint64_t rel = rel_of_pfn(p, c);
    for (uint64_t k = 0; k < n; ++k) {
      const bool set = rec.occupancy[(rel + k) >> 6] >> ((rel + k) & 63) & 1;
      const bool mine =
          set && (rec.kind == ChunkKind::ZoneMember
                      ? rec.domain == domain
                      : rec.kind == ChunkKind::ZoneletRegion &&
                            !rec.zonelet_owner.empty() && rec.zonelet_owner[rel + k] == domain);
      if (!mine)
        throw AllocError(AllocErrc::NotOwner, "page " + std::to_string(p + k) +
                                                  " is not allocated to domain " +
                                                  std::to_string(domain));
    }
    p += n;
  }

  std::set<uint32_t> touched_zones;
  std::set<uint32_t> touched_regions;
  for (uint64_t p = pfn; p < pfn + want;) {
    const uint32_t c = chunk_of_pfn(p);
    ChunkRecord& rec = chunks_[c];
    const uint64_t n = std::min(pfn + want - p, pps_ - p % pps_);
    const uint64_t rel = rel_of_pfn(p, c);
    fill_bits(rec.occupancy, rel, n, false);
    rec.used_pages -= n;
    if (rec.kind == ChunkKind::ZoneMember) {
      zones_.at(rec.zone_id).used_pages -= n;
      touched_zones.insert(rec.zone_id);
    } else {
      for (uint64_t k = 0; k < n; ++k) rec.zonelet_owner[rel + k] = kNoId;
      zonelet_free_pages_ += n;
      dom.zonelet_pages -= n;
      touched_regions.insert(c);
    }
    p += n;
  }
  dom.footprint_bytes -= want * geo_.page_bytes;

  for (uint32_t c : touched_regions) {
    if (chunks_[c].used_pages != 0) continue;
    // un-stripe the now-empty region
    zonelet_free_pages_ -= zonelet_capacity_;
    zonelet_chunks_.erase(std::find(zonelet_chunks_.begin(), zonelet_chunks_.end(), c));
    release_chunk(c);
  }
  for (uint32_t zid : touched_zones) shrink_or_split(zid);
  return want;
}

// ---------- shrink / split ----------

namespace {
uint64_t guard_pages_of(uint32_t guard_rows, uint32_t rpl, uint64_t pps) {
  return uint64_t(guard_rows) * rpl * pps;
}
}  // namespace

std::vector<ZoneAction> Allocator::shrink_or_split(uint32_t zone_id) {
  std::vector<ZoneAction> actions;
  const uint64_t front_bits = guard_pages_of(params_.n_guard, rpl_, pps_);
  auto front_clear = [&](uint32_t c) { return bits_free(chunks_[c].occupancy, 0, front_bits); };
  auto recompute = [&](ZoneRecord& z) {
    z.used_pages = 0;
    z.capacity_pages = 0;
    for (uint32_t c = z.first_chunk; c < z.first_chunk + z.chunk_count; ++c) {
      z.used_pages += chunks_[c].used_pages;
      z.capacity_pages += chunk_pages_ - guard_pages_of(chunks_[c].guard_rows, rpl_, pps_);
    }
  };

  std::vector<uint32_t> work{zone_id};
  while (!work.empty()) {
    const uint32_t zid = work.back();
    const auto it = zones_.find(zid);
    if (it == zones_.end()) {
      work.pop_back();
      continue;
    }
    ZoneRecord& z = it->second;

    // Rule 1: empty first chunk folds into a converted front on the second.
    if (z.chunk_count >= 2 && chunks_[z.first_chunk].used_pages == 0 &&
        front_clear(z.first_chunk + 1)) {
      const uint32_t freed = z.first_chunk;
      release_chunk(freed);
      z.first_chunk += 1;
      z.chunk_count -= 1;
      chunks_[z.first_chunk].guard_rows = params_.n_guard;
      recompute(z);
      actions.push_back({ZoneActionKind::ShrinkFront, zid, freed, kNoId});
      continue;
    }

    // Rule 2: empty last chunk is reclaimed outright.
    if (z.chunk_count >= 1 && chunks_[z.first_chunk + z.chunk_count - 1].used_pages == 0) {
      const uint32_t freed = z.first_chunk + z.chunk_count - 1;
      release_chunk(freed);
      z.chunk_count -= 1;
      actions.push_back({ZoneActionKind::ReclaimLast, zid, freed, kNoId});
      if (z.chunk_count == 0) {
        DomainRecord& dom = domains_.at(z.domain);
        dom.zones.erase(std::find(dom.zones.begin(), dom.zones.end(), zid));
        zones_.erase(it);
        work.pop_back();
      } else {
        recompute(z);
      }
      continue;
    }

    // Rule 3: an empty interior chunk splits the zone in two.
    bool split = false;
    for (uint32_t i = 1; i + 1 < z.chunk_count; ++i) {
      const uint32_t mid = z.first_chunk + i;
      if (chunks_[mid].used_pages != 0 || !front_clear(mid + 1)) continue;
      release_chunk(mid);
      const uint32_t upper_first = mid + 1;
      const uint32_t upper_count = z.chunk_count - i - 1;
      z.chunk_count = i;
      const uint32_t nz = next_zone_++;
      ZoneRecord u;
      u.id = nz;
      u.domain = z.domain;
      u.first_chunk = upper_first;
      u.chunk_count = upper_count;
      chunks_[upper_first].guard_rows = params_.n_guard;
      for (uint32_t c = upper_first; c < upper_first + upper_count; ++c)
        chunks_[c].zone_id = nz;
      recompute(z);
      ZoneRecord& ur = zones_.emplace(nz, u).first->second;
      recompute(ur);
      domains_.at(z.domain).zones.push_back(nz);
      actions.push_back({ZoneActionKind::Split, zid, mid, nz});
      work.push_back(nz);
      split = true;
      break;
    }
    if (!split) work.pop_back();
  }
  return actions;
}

// ---------- remaining public operations ----------

std::optional<uint32_t> Allocator::try_expand_zone(uint32_t domain) {
  need_domain(domain, "try_expand_zone");
  if (const auto chunk = expand_for(domain, std::nullopt)) return chunks_[*chunk].zone_id;
  return std::nullopt;
}

uint64_t Allocator::select_frame(uint32_t chunk, uint64_t rel_index) const {
  if (chunk >= chunk_count_)
    throw AllocError(AllocErrc::BadIndex, "chunk index out of range");
  if (rel_index >= chunk_pages_)
    throw AllocError(AllocErrc::BadIndex, "relative page index out of range");
  const uint64_t per_lof = uint64_t(rpl_) * pps_;
  const uint32_t lof = static_cast<uint32_t>(rel_index / per_lof);
  const ChunkRecord& rec = chunks_[chunk];
  const bool guard = rec.kind == ChunkKind::ZoneletRegion ? !is_stripe_data_offset(lof)
                                                          : lof < rec.guard_rows;
  if (guard) throw AllocError(AllocErrc::BadIndex, "relative index lands on a guard position");
  const uint64_t within = rel_index % per_lof;
  const auto mem = grt_.members(uint64_t(chunk) * params_.chunk_rows + lof);
  return uint64_t(mem[within / pps_]) * pps_ + within % pps_;
}

MetadataSize Allocator::metadata_size() const {
  MetadataSize m;
  m.bitvector_bytes = uint64_t(chunk_count_) * ((chunk_pages_ + 7) / 8);
  m.grt_bytes = grt_.serialized_bytes();
  m.chunk_record_bytes = uint64_t(chunk_count_) * kChunkRecordBytes;
  m.static_bytes = m.bitvector_bytes + m.grt_bytes + m.chunk_record_bytes;
  m.dynamic_bytes = domains_.size() * kDomainRecordBytes + zones_.size() * kZoneRecordBytes +
                    zonelet_chunks_.size() * kZoneletRecordBytes;
  for (const auto& [id, dom] : domains_) m.dynamic_bytes += dom.zones.size() * 4;
  for (uint32_t c : zonelet_chunks_)
    if (!chunks_[c].zonelet_owner.empty()) m.dynamic_bytes += zonelet_capacity_ * 4;
  return m;
}

// ---------- observers ----------

std::vector<uint32_t> Allocator::data_row_offsets() const {
  std::vector<uint32_t> out;
  for (uint32_t lof = 0; lof < params_.chunk_rows; ++lof)
    if (is_stripe_data_offset(lof)) out.push_back(lof);
  return out;
}

ChunkSummary Allocator::chunk_summary(uint32_t c) const {
  if (c >= chunk_count_) throw AllocError(AllocErrc::BadIndex, "chunk index out of range");
  const ChunkRecord& rec = chunks_[c];
  ChunkSummary s;
  s.index = c;
  s.kind = rec.kind;
  s.domain = rec.domain;
  s.zone_id = rec.zone_id;
  s.guard_rows = rec.guard_rows;
  s.pages = chunk_pages_;
  s.used_pages = rec.used_pages;
  if (rec.kind == ChunkKind::ZoneMember) {
    s.position = c - zones_.at(rec.zone_id).first_chunk;
    s.guard_pages = guard_pages_of(rec.guard_rows, rpl_, pps_);
  } else if (rec.kind == ChunkKind::ZoneletRegion) {
    s.guard_pages = chunk_pages_ - zonelet_capacity_;
  }
  s.data_capacity = s.pages - s.guard_pages;
  return s;
}

std::optional<ZoneInfo> Allocator::zone(uint32_t zone_id) const {
  const auto it = zones_.find(zone_id);
  if (it == zones_.end()) return std::nullopt;
  const ZoneRecord& z = it->second;
  return ZoneInfo{z.id, z.domain, z.first_chunk, z.chunk_count, z.used_pages, z.capacity_pages};
}

std::vector<uint32_t> Allocator::domain_ids() const {
  std::vector<uint32_t> out;
  out.reserve(domains_.size());
  for (const auto& [id, dom] : domains_) out.push_back(id);
  return out;
}

std::optional<DomainInfo> Allocator::domain(uint32_t id) const {
  const auto it = domains_.find(id);
  if (it == domains_.end()) return std::nullopt;
  const DomainRecord& d = it->second;
  return DomainInfo{id, d.footprint_bytes, d.zonelet_pages, d.above_threshold, d.zones};
}

std::optional<uint32_t> Allocator::page_owner(uint64_t pfn) const {
  const uint32_t c = chunk_of_pfn(pfn);
  const ChunkRecord& rec = chunks_[c];
  if (rec.kind == ChunkKind::Free) return std::nullopt;
  const uint64_t rel = rel_of_pfn(pfn, c);
  if (!(rec.occupancy[rel >> 6] >> (rel & 63) & 1)) return std::nullopt;
  if (rec.kind == ChunkKind::ZoneMember) return rec.domain;
  return rec.zonelet_owner.empty() ? std::nullopt
                                   : std::make_optional(rec.zonelet_owner[rel]);
}

std::vector<uint32_t> Allocator::row_owners(uint64_t row_id) const {
  if (row_id >= geo_.total_global_rows)
    throw AllocError(AllocErrc::BadIndex, "row id out of range");
  const uint32_t c =
      static_cast<uint32_t>(grt_.logical_of_row(row_id) / params_.chunk_rows);
  const ChunkRecord& rec = chunks_[c];
  std::vector<uint32_t> out;
  if (rec.kind == ChunkKind::Free || rec.used_pages == 0) return out;
  const uint64_t rel = rel_of_pfn(row_id * pps_, c);
  if (rec.kind == ChunkKind::ZoneMember) {
    if (!bits_free(rec.occupancy, rel, pps_)) out.push_back(rec.domain);
    return out;
  }
  if (rec.zonelet_owner.empty()) return out;
  std::set<uint32_t> owners;
  for (uint64_t k = 0; k < pps_; ++k) {
    const uint32_t o = rec.zonelet_owner[rel + k];
    if (o != kNoId) owners.insert(o);
  }
  out.assign(owners.begin(), owners.end());
  return out;
}

std::string Allocator::to_json(int indent) const {
  nlohmann::json j;
  j["params"] = {{"mode", to_string(params_.mode)},
                 {"chunk_rows", params_.chunk_rows},
                 {"n_guard", params_.n_guard},
                 {"switch_threshold_bytes", params_.switch_threshold_bytes},
                 {"zonelets_enabled", params_.zonelets_enabled},
                 {"max_order", params_.max_order}};
  j["shape"] = {{"chunks", chunk_count_},
                {"chunk_pages", chunk_pages_},
                {"rows_per_logical", rpl_},
                {"pages_per_row", pps_},
                {"total_pages", geo_.total_pages},
                {"zonelets_per_chunk", zonelet_count_}};
  j["free_chunks"] = free_set_.size();
  j["zonelet_regions"] = zonelet_chunks_;
  j["zonelet_free_pages"] = zonelet_free_pages_;
  auto domains = nlohmann::json::array();
  for (const auto& [id, d] : domains_)
    domains.push_back({{"id", id},
                       {"footprint_bytes", d.footprint_bytes},
                       {"zonelet_pages", d.zonelet_pages},
                       {"above_threshold", d.above_threshold},
                       {"zones", d.zones}});
  j["domains"] = std::move(domains);
  auto zones = nlohmann::json::array();
  for (const auto& [id, z] : zones_)
    zones.push_back({{"id", id},
                     {"domain", z.domain},
                     {"first_chunk", z.first_chunk},
                     {"chunk_count", z.chunk_count},
                     {"used_pages", z.used_pages},
                     {"capacity_pages", z.capacity_pages}});
  j["zones"] = std::move(zones);
  auto chunks = nlohmann::json::array();
  for (uint32_t c = 0; c < chunk_count_; ++c) {
    const ChunkRecord& rec = chunks_[c];
    if (rec.kind == ChunkKind::Free) continue;
    nlohmann::json e = {{"index", c},
                        {"kind", rec.kind == ChunkKind::ZoneMember ? "zone_member" : "zonelet"},
                        {"guard_rows", rec.guard_rows},
                        {"used_pages", rec.used_pages}};
    if (rec.kind == ChunkKind::ZoneMember) {
      e["domain"] = rec.domain;
      e["zone"] = rec.zone_id;
    }
    chunks.push_back(std::move(e));
  }
  j["chunks"] = std::move(chunks);
  return j.dump(indent);
}

void Allocator::debug_flip_occupancy(uint32_t chunk, uint64_t rel_page) {
  if (chunk >= chunk_count_ || rel_page >= chunk_pages_)
    throw AllocError(AllocErrc::BadIndex, "debug_flip_occupancy: out of range");
  chunks_[chunk].occupancy[rel_page >> 6] ^= uint64_t{1} << (rel_page & 63);
}

void Allocator::debug_extend_zone_record(uint32_t zone_id) {
  const auto it = zones_.find(zone_id);
  if (it == zones_.end())
    throw AllocError(AllocErrc::BadIndex, "debug_extend_zone_record: no such zone");
  it->second.chunk_count += 1;
}

}  // namespace rowguard
