#include "rowguard/geometry.hpp"

namespace rowguard {

namespace {

bool pow2(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

void need_pow2(uint64_t v, const char* field) {
  if (!pow2(v))
    throw ConfigError(std::string("geometry: ") + field + " must be a positive power of two, got " +
                      std::to_string(v));
}

}  // namespace

DramGeometry build_geometry(const GeometryConfig& cfg) {
  need_pow2(cfg.row_bytes, "row_bytes");
  need_pow2(cfg.rows_per_bank, "rows_per_bank");
  need_pow2(cfg.banks, "banks");
  need_pow2(cfg.page_bytes, "page_bytes");
  if (cfg.ranks_per_dimm == 0)
    throw ConfigError("geometry: ranks_per_dimm must be positive");
  if (cfg.page_bytes > cfg.row_bytes || cfg.row_bytes % cfg.page_bytes != 0)
    throw ConfigError("geometry: page_bytes must divide row_bytes");

  DramGeometry g;
  g.row_bytes = cfg.row_bytes;
  g.rows_per_bank = cfg.rows_per_bank;
  g.banks = cfg.banks;
  g.page_bytes = cfg.page_bytes;
  g.ranks_per_dimm = cfg.ranks_per_dimm;

  g.global_row_bytes = cfg.global_row_bytes ? cfg.global_row_bytes : cfg.row_bytes * cfg.banks;
  need_pow2(g.global_row_bytes, "global_row_bytes");
  if (g.global_row_bytes % cfg.page_bytes != 0 || g.global_row_bytes < cfg.page_bytes)
    throw ConfigError("geometry: global_row_bytes must be a multiple of page_bytes");

  g.pages_per_global_row = g.global_row_bytes / g.page_bytes;
  g.total_global_rows = g.rows_per_bank;
  g.total_pages = g.total_global_rows * g.pages_per_global_row;
  g.total_bytes = g.total_global_rows * g.global_row_bytes;
  return g;
}

uint64_t page_to_global_row(uint64_t pfn, const DramGeometry& g) {
  if (pfn >= g.total_pages)
    throw ConfigError("pfn " + std::to_string(pfn) + " out of range (total_pages=" +
                      std::to_string(g.total_pages) + ")");
  return pfn / g.pages_per_global_row;
}

}  // namespace rowguard
