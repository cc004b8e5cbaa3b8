#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "rowguard/allocator.hpp"
#include "rowguard/baselines.hpp"
#include "rowguard/geometry.hpp"
#include "rowguard/metrics.hpp"
#include "rowguard/verifier.hpp"

namespace rowguard {

// ---------------------------------------------------------------------------
// Trace events
// ---------------------------------------------------------------------------

enum class TraceAction : uint8_t { Spawn, Alloc, Free, Exit };

const char* to_string(TraceAction a);
TraceAction trace_action_from_string(std::string_view s);  // throws ConfigError

struct TraceEvent {
  uint64_t time = 0;    // abstract tick; non-decreasing across a trace
  uint32_t domain = 0;  // trace-local identifier, never reused
  TraceAction action = TraceAction::Spawn;
  uint32_t order = 0;   // alloc/free only: block size 2^order pages
  uint64_t count = 1;   // alloc/free only: repetitions of the block
  bool pt = false;      // spawn only: page-table-emulation dummy domain

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

// One JSON object per line, keys {t, dom, act, order, n, pt}; order/n appear
// on alloc/free lines, pt only on spawn lines and only when true.
std::string trace_to_jsonl(const std::vector<TraceEvent>& events);
void write_trace(std::ostream& os, const std::vector<TraceEvent>& events);

// Parses and validates. Diagnostics name the offending line ("line 3: ...").
std::vector<TraceEvent> parse_trace(std::istream& is);
std::vector<TraceEvent> parse_trace_text(const std::string& text);

// Structural validation of an in-memory sequence: non-decreasing times,
// alloc/free only between spawn and exit, per-order frees never exceeding
// live allocations, exits only with zero live pages. Diagnostics name the
// event ordinal. Domains need not exit before the trace ends.
void validate_trace(const std::vector<TraceEvent>& events);

// ---------------------------------------------------------------------------
// Workload mixes
// ---------------------------------------------------------------------------

// One entry of the application mix. `cls` picks a footprint range preset:
//   spec-s  uniform   4..250 MiB     spec-m  uniform 250..750 MiB
//   spec-l  uniform 750..1200 MiB    gap     one of {1100, 8192} MiB
//   custom  uniform min_mib..max_mib
struct AppSpec {
  std::string name;          // optional label
  std::string cls = "custom";
  uint32_t count = 1;
  double min_mib = 0;
  double max_mib = 0;
};

struct MixSpec {
  std::vector<AppSpec> apps;
  uint32_t background_count = 0;   // long-lived single-page processes
  double background_mean_mib = 4.9;  // exponential footprint mean
  bool page_table_emulation = false;  // spawn K/2 one-page domains per K-MiB app
  uint64_t duration_events = 1'000'000;
  bool restart_on_completion = true;
  double churn_min = 0.01;  // fraction of footprint recycled per steady round
  double churn_max = 0.10;
  uint32_t max_order = 8;  // largest block order the trace may request
  uint64_t seed = 0;
};

MixSpec mix_from_json(const std::string& text);  // throws ConfigError
std::string to_json(const MixSpec& spec, int indent = -1);

struct GeneratedTrace {
  std::vector<TraceEvent> events;
  std::vector<std::string> warnings;  // e.g. demand exceeds the safety factor
};

// Deterministic under spec.seed: same spec and geometry give a byte-identical
// serialized trace. Each process spawns, ramps to its footprint in grain-order
// blocks plus a single-page tail, then churns (frees and reallocates a random
// 1-10% slice per round); applications restart as fresh domains after a few
// rounds when restart_on_completion is set, background processes churn until
// the event budget runs out, and everything is torn down at the end.
GeneratedTrace generate_mix(const MixSpec& spec, const DramGeometry& geo);

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

struct ReplayOptions {
  // Snapshot cadence in ticks; 0 keeps only the initial and final snapshots.
  uint64_t sample_interval = 0;

  // Isolation checkpoints run when all three of grt/transforms/verify_n_guard
  // are set: always on the final state, and additionally at every sample whose
  // tick crosses a multiple of verify_interval (when that is non-zero).
  const GlobalRowTable* grt = nullptr;
  const TransformConfig* transforms = nullptr;
  uint32_t verify_n_guard = 0;
  uint64_t verify_interval = 0;

  // Reservation-granularity accounting: page-table dummy domains are not
  // instantiated; their pages are folded into every snapshot as allocated
  // pages plus per-batch guard-row loss.
  bool siloz_pt_accounting = false;
  uint32_t pt_guard_rows_per_batch = 2;
};

struct ReplayResult {
  std::vector<MetricsSnapshot> timeline;
  bool supported = true;      // false once any event hit out-of-memory
  uint64_t oom_events = 0;    // events cut short by out-of-memory
  uint64_t applied_events = 0;
  uint64_t violation_count = 0;           // across all isolation checkpoints
  std::vector<Violation> violations;      // retained from checkpoints (capped)
  std::vector<std::string> findings;      // checkpoint diagnostics
};

// Applies the trace in order. Frees pick the oldest live block of the event's
// (domain, order); out-of-memory skips the rest of the event, flags the run
// unsupported, and keeps going. Ownership errors propagate as AllocError.
ReplayResult replay(const std::vector<TraceEvent>& trace, Allocator& state,
                    const ReplayOptions& opts = {});
ReplayResult replay(const std::vector<TraceEvent>& trace, BuddyState& state,
                    const ReplayOptions& opts = {});

}  // namespace rowguard
