#include "rowguard/baselines.hpp"

#include <algorithm>

#include "json.hpp"

namespace rowguard {

BuddyState::BuddyState(const DramGeometry& geo, uint32_t max_order)
    : geo_(geo), max_order_(max_order) {
  if (max_order_ > 30) throw ConfigError("buddy max_order is implausibly large");
  free_lists_.resize(max_order_ + 1);
  // Carve the page space into maximal aligned blocks.
  uint64_t pos = 0;
  while (pos < geo_.total_pages) {
    uint32_t k = max_order_;
    while (pos % (1ull << k) != 0 || pos + (1ull << k) > geo_.total_pages) --k;
    free_lists_[k].insert(pos);
    pos += 1ull << k;
  }
  free_pages_ = geo_.total_pages;
}

uint32_t BuddyState::create_domain() { return next_domain_++; }

void BuddyState::destroy_domain(uint32_t domain) {
  const auto it = footprints_.find(domain);
  if (it != footprints_.end() && it->second != 0)
    throw AllocError(AllocErrc::DomainBusy,
                     "destroy_domain: domain " + std::to_string(domain) + " has live pages");
  footprints_.erase(domain);
}

std::vector<uint64_t> BuddyState::alloc_pages(uint32_t domain, uint32_t order) {
  if (order > max_order_)
    throw AllocError(AllocErrc::BadOrder, "order " + std::to_string(order) + " exceeds max_order " +
                                              std::to_string(max_order_));
  uint32_t k = order;
  while (k <= max_order_ && free_lists_[k].empty()) ++k;
  if (k > max_order_)
    throw AllocError(AllocErrc::OutOfMemory, "buddy: no free block of order >= " +
                                                 std::to_string(order));
  uint64_t base = *free_lists_[k].begin();
  free_lists_[k].erase(free_lists_[k].begin());
  while (k > order) {
    --k;
    free_lists_[k].insert(base + (1ull << k));  // keep the lower half
  }
  owners_.emplace(base, Block{order, domain});
  const uint64_t size = 1ull << order;
  free_pages_ -= size;
  footprints_[domain] += size;

  std::vector<uint64_t> out(size);
  for (uint64_t i = 0; i < size; ++i) out[i] = base + i;
  return out;
}

uint64_t BuddyState::free_pages(uint32_t domain, uint64_t pfn, uint32_t order) {
  if (order > max_order_)
    throw AllocError(AllocErrc::BadOrder, "order " + std::to_string(order) + " exceeds max_order " +
                                              std::to_string(max_order_));
  const uint64_t size = 1ull << order;
  if (pfn >= geo_.total_pages || pfn % size != 0)
    throw AllocError(AllocErrc::BadIndex, "buddy: free of a misaligned or out-of-range block");
  const auto it = owners_.find(pfn);
  if (it == owners_.end() || it->second.order != order)
    throw AllocError(AllocErrc::NotOwner, "buddy: block was not allocated at this base and order");
  if (it->second.domain != domain)
    throw AllocError(AllocErrc::NotOwner, "buddy: block belongs to another domain");
  owners_.erase(it);
  free_pages_ += size;
  footprints_[domain] -= size;

  uint64_t base = pfn;
  uint32_t k = order;
  while (k < max_order_) {
    const uint64_t buddy = base ^ (1ull << k);
    const auto bit = free_lists_[k].find(buddy);
    if (bit == free_lists_[k].end()) break;
    free_lists_[k].erase(bit);
    base = std::min(base, buddy);
    ++k;
  }
  free_lists_[k].insert(base);
  return size;
}

uint64_t BuddyState::domain_footprint_pages(uint32_t domain) const {
  const auto it = footprints_.find(domain);
  return it == footprints_.end() ? 0 : it->second;
}

std::vector<uint32_t> BuddyState::domain_ids() const {
  std::vector<uint32_t> out;
  out.reserve(footprints_.size());
  for (const auto& [id, pages] : footprints_) out.push_back(id);
  return out;
}

std::vector<uint64_t> BuddyState::free_blocks(uint32_t order) const {
  if (order > max_order_)
    throw AllocError(AllocErrc::BadOrder, "order out of range");
  return {free_lists_[order].begin(), free_lists_[order].end()};
}

std::vector<BuddyState::AllocatedBlock> BuddyState::allocated_blocks() const {
  std::vector<AllocatedBlock> out;
  out.reserve(owners_.size());
  for (const auto& [base, blk] : owners_) out.push_back({base, blk.order, blk.domain});
  return out;
}

const std::map<uint64_t, BuddyState::Block>::const_iterator BuddyState::block_of(
    uint64_t pfn) const {
  auto it = owners_.upper_bound(pfn);
  if (it == owners_.begin()) return owners_.end();
  --it;
  if (it->first + (1ull << it->second.order) <= pfn) return owners_.end();
  return it;
}

std::optional<uint32_t> BuddyState::page_owner(uint64_t pfn) const {
  if (pfn >= geo_.total_pages)
    throw AllocError(AllocErrc::BadIndex, "page index out of range");
  const auto it = block_of(pfn);
  if (it == owners_.end()) return std::nullopt;
  return it->second.domain;
}

std::vector<uint32_t> BuddyState::row_owners(uint64_t row_id) const {
  if (row_id >= geo_.total_global_rows)
    throw AllocError(AllocErrc::BadIndex, "row id out of range");
  const uint64_t lo = row_id * geo_.pages_per_global_row;
  const uint64_t hi = lo + geo_.pages_per_global_row;
  std::vector<uint32_t> out;
  auto it = owners_.lower_bound(lo);
  if (it != owners_.begin()) {
    auto prev = std::prev(it);
    if (prev->first + (1ull << prev->second.order) > lo) it = prev;
  }
  for (; it != owners_.end() && it->first < hi; ++it) out.push_back(it->second.domain);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string BuddyState::to_json(int indent) const {
  nlohmann::json j;
  j["mode"] = "buddy";
  j["max_order"] = max_order_;
  j["total_pages"] = geo_.total_pages;
  j["free_pages"] = free_pages_;
  nlohmann::json lists = nlohmann::json::array();
  for (uint32_t k = 0; k <= max_order_; ++k)
    lists.push_back({{"order", k}, {"blocks", free_blocks(k)}});
  j["free_lists"] = std::move(lists);
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& [base, blk] : owners_)
    blocks.push_back({{"base", base}, {"order", blk.order}, {"domain", blk.domain}});
  j["allocated"] = std::move(blocks);
  return j.dump(indent);
}

AllocatorParams make_mode(AllocMode mode, const GlobalRowTable& grt) {
  return mode_params(mode, grt.identity() ? AddressMode::Simple : AddressMode::Complex,
                     grt.rows_per_logical());
}

}  // namespace rowguard
