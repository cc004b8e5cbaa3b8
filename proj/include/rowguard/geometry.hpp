#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rowguard {

// Configuration or input that cannot be acted on. Carries the offending field.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GeometryConfig {
  uint64_t row_bytes = 8192;
  uint64_t rows_per_bank = 131072;
  uint64_t banks = 128;
  uint64_t page_bytes = 4096;
  uint64_t ranks_per_dimm = 2;
  // 0 means derive as row_bytes * banks. Tests use small overrides.
  uint64_t global_row_bytes = 0;
};

struct DramGeometry {
  uint64_t row_bytes = 0;
  uint64_t rows_per_bank = 0;
  uint64_t banks = 0;
  uint64_t page_bytes = 0;
  uint64_t ranks_per_dimm = 0;

  uint64_t global_row_bytes = 0;
  uint64_t pages_per_global_row = 0;
  uint64_t total_global_rows = 0;  // == rows_per_bank
  uint64_t total_pages = 0;
  uint64_t total_bytes = 0;
};

DramGeometry build_geometry(const GeometryConfig& cfg);

// pfn -> global row index. Throws ConfigError when pfn is out of range.
uint64_t page_to_global_row(uint64_t pfn, const DramGeometry& g);

}  // namespace rowguard
