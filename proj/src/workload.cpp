#include "rowguard/workload.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

namespace rowguard {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Trace events: names, serialization, parsing, validation
// ---------------------------------------------------------------------------

const char* to_string(TraceAction a) {
  switch (a) {
    case TraceAction::Spawn: return "spawn";
    case TraceAction::Alloc: return "alloc";
    case TraceAction::Free: return "free";
    case TraceAction::Exit: return "exit";
  }
  return "?";
}

TraceAction trace_action_from_string(std::string_view s) {
  if (s == "spawn") return TraceAction::Spawn;
  if (s == "alloc") return TraceAction::Alloc;
  if (s == "free") return TraceAction::Free;
  if (s == "exit") return TraceAction::Exit;
  throw ConfigError("unknown trace action \"" + std::string(s) + "\"");
}

namespace {

json event_to_json(const TraceEvent& e) {
  json j{{"t", e.time}, {"dom", e.domain}, {"act", to_string(e.action)}};
  if (e.action == TraceAction::Alloc || e.action == TraceAction::Free) {
    j["order"] = e.order;
    j["n"] = e.count;
  }
  if (e.action == TraceAction::Spawn && e.pt) j["pt"] = true;
  return j;
}

// Incremental structural validator shared by the stream parser and the
// in-memory checker. `where` names the event for diagnostics.
class TraceValidator {
 public:
  void feed(const TraceEvent& e, const std::string& where) {
    if (e.time < last_time_)
      throw ConfigError(where + ": time " + std::to_string(e.time) +
                        " regresses below " + std::to_string(last_time_));
    last_time_ = e.time;
    auto it = doms_.find(e.domain);
    const std::string dom = "domain " + std::to_string(e.domain);
    switch (e.action) {
      case TraceAction::Spawn:
        if (it != doms_.end())
          throw ConfigError(where + ": " + dom +
                            (it->second.exited ? " was already used and has exited"
                                               : " spawned twice"));
        doms_.emplace(e.domain, DomState{});
        break;
      case TraceAction::Alloc: {
        DomState& d = live(it, where, dom);
        if (e.count == 0) throw ConfigError(where + ": count must be positive");
        if (e.order > 30) throw ConfigError(where + ": order " + std::to_string(e.order) +
                                            " is out of range");
        d.live_blocks[e.order] += e.count;
        d.live_pages += e.count << e.order;
        break;
      }
      case TraceAction::Free: {
        DomState& d = live(it, where, dom);
        if (e.count == 0) throw ConfigError(where + ": count must be positive");
        if (e.order > 30) throw ConfigError(where + ": order " + std::to_string(e.order) +
                                            " is out of range");
        uint64_t& n = d.live_blocks[e.order];
        if (n < e.count)
          throw ConfigError(where + ": " + dom + " frees " + std::to_string(e.count) +
                            " blocks of order " + std::to_string(e.order) + " but only " +
                            std::to_string(n) + " are live");
        n -= e.count;
        d.live_pages -= e.count << e.order;
        break;
      }
      case TraceAction::Exit: {
        DomState& d = live(it, where, dom);
        if (d.live_pages != 0)
          throw ConfigError(where + ": " + dom + " exits with " +
                            std::to_string(d.live_pages) + " pages still live");
        d.exited = true;
        break;
      }
    }
  }

 private:
  struct DomState {
    std::map<uint32_t, uint64_t> live_blocks;  // order -> live block count
    uint64_t live_pages = 0;
    bool exited = false;
  };

  DomState& live(std::map<uint32_t, DomState>::iterator it, const std::string& where,
                 const std::string& dom) {
    if (it == doms_.end())
      throw ConfigError(where + ": " + dom + " is used before it spawns");
    if (it->second.exited)
      throw ConfigError(where + ": " + dom + " is used after it exits");
    return it->second;
  }

  std::map<uint32_t, DomState> doms_;
  uint64_t last_time_ = 0;
};

uint64_t require_u64(const json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError(where + ": missing field \"" + key + "\"");
  if (!it->is_number_unsigned())
    throw ConfigError(where + ": field \"" + key + "\" must be a non-negative integer");
  return it->get<uint64_t>();
}

TraceEvent event_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": event must be a JSON object");
  static const std::set<std::string> known{"t", "dom", "act", "order", "n", "pt"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) throw ConfigError(where + ": unknown field \"" + key + "\"");
  }
  TraceEvent e;
  e.time = require_u64(j, "t", where);
  const uint64_t dom = require_u64(j, "dom", where);
  if (dom >= kNoId) throw ConfigError(where + ": domain id out of range");
  e.domain = static_cast<uint32_t>(dom);
  const auto act = j.find("act");
  if (act == j.end() || !act->is_string())
    throw ConfigError(where + ": missing or non-string field \"act\"");
  e.action = trace_action_from_string(act->get<std::string>());
  const bool sized = e.action == TraceAction::Alloc || e.action == TraceAction::Free;
  if (sized) {
    const uint64_t order = require_u64(j, "order", where);
    if (order > 30) throw ConfigError(where + ": order " + std::to_string(order) +
                                      " is out of range");
    e.order = static_cast<uint32_t>(order);
    e.count = require_u64(j, "n", where);
  } else {
    if (j.contains("order") || j.contains("n"))
      throw ConfigError(where + ": \"order\"/\"n\" only belong on alloc and free events");
  }
  if (const auto pt = j.find("pt"); pt != j.end()) {
    if (e.action != TraceAction::Spawn)
      throw ConfigError(where + ": \"pt\" only belongs on spawn events");
    if (!pt->is_boolean()) throw ConfigError(where + ": field \"pt\" must be a boolean");
    e.pt = pt->get<bool>();
  }
  return e;
}

}  // namespace

std::string trace_to_jsonl(const std::vector<TraceEvent>& events) {
  std::string out;
  for (const TraceEvent& e : events) {
    out += event_to_json(e).dump();
    out += '\n';
  }
  return out;
}

void write_trace(std::ostream& os, const std::vector<TraceEvent>& events) {
  for (const TraceEvent& e : events) os << event_to_json(e).dump() << '\n';
}

std::vector<TraceEvent> parse_trace(std::istream& is) {
  std::vector<TraceEvent> events;
  TraceValidator v;
  std::string line;
  for (uint64_t no = 1; std::getline(is, line); ++no) {
    const std::string where = "line " + std::to_string(no);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& ex) {
      throw ConfigError(where + ": " + ex.what());
    }
    TraceEvent e = event_from_json(j, where);
    v.feed(e, where);
    events.push_back(e);
  }
  return events;
}

std::vector<TraceEvent> parse_trace_text(const std::string& text) {
  std::istringstream is(text);
  return parse_trace(is);
}

void validate_trace(const std::vector<TraceEvent>& events) {
  TraceValidator v;
  for (size_t i = 0; i < events.size(); ++i)
    v.feed(events[i], "event " + std::to_string(i + 1));
}

// ---------------------------------------------------------------------------
// Mix specifications
// ---------------------------------------------------------------------------

namespace {

struct ClassRange {
  double min_mib;
  double max_mib;
  bool two_point;  // draw one of the endpoints instead of the range
};

ClassRange class_range(const AppSpec& a) {
  if (a.cls == "spec-s") return {4, 250, false};
  if (a.cls == "spec-m") return {250, 750, false};
  if (a.cls == "spec-l") return {750, 1200, false};
  if (a.cls == "gap") return {1100, 8192, true};
  if (a.cls == "custom") return {a.min_mib, a.max_mib, false};
  throw ConfigError("unknown application class \"" + a.cls + "\"");
}

void validate_mix(const MixSpec& m) {
  for (const AppSpec& a : m.apps) {
    const ClassRange r = class_range(a);
    if (!(r.min_mib > 0) || !(r.max_mib >= r.min_mib))
      throw ConfigError("application \"" + (a.name.empty() ? a.cls : a.name) +
                        "\": footprint range must be positive and ordered");
    if (a.count == 0)
      throw ConfigError("application \"" + (a.name.empty() ? a.cls : a.name) +
                        "\": count must be positive");
  }
  if (!(m.background_mean_mib > 0))
    throw ConfigError("background mean footprint must be positive");
  if (!(m.churn_min >= 0 && m.churn_min <= m.churn_max && m.churn_max <= 1))
    throw ConfigError("churn fractions must satisfy 0 <= min <= max <= 1");
  if (m.max_order > 30) throw ConfigError("max_order is out of range");
  if (m.duration_events == 0) throw ConfigError("duration_events must be positive");
}

template <class T>
T opt_field(const json& j, const char* key, T fallback, const char* kind) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("field \"") + key + "\" must be " + kind);
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) throw ConfigError(where + ": unknown field \"" + key + "\"");
  }
}

}  // namespace

MixSpec mix_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("mix spec: ") + ex.what());
  }
  if (!j.is_object()) throw ConfigError("mix spec: top level must be a JSON object");
  reject_unknown(j,
                 {"apps", "background", "page_table_emulation", "duration_events",
                  "restart_on_completion", "churn", "max_order", "seed"},
                 "mix spec");
  MixSpec m;
  if (const auto apps = j.find("apps"); apps != j.end()) {
    if (!apps->is_array()) throw ConfigError("mix spec: \"apps\" must be an array");
    for (const json& aj : *apps) {
      if (!aj.is_object()) throw ConfigError("mix spec: each app must be a JSON object");
      reject_unknown(aj, {"name", "class", "count", "min_mib", "max_mib", "footprint_mib"},
                     "mix spec app");
      AppSpec a;
      a.name = opt_field<std::string>(aj, "name", "", "a string");
      a.cls = opt_field<std::string>(aj, "class", "custom", "a string");
      a.count = opt_field<uint32_t>(aj, "count", 1, "an integer");
      if (aj.contains("footprint_mib")) {
        if (aj.contains("min_mib") || aj.contains("max_mib"))
          throw ConfigError("mix spec app: give either footprint_mib or min/max_mib, not both");
        a.min_mib = a.max_mib = opt_field<double>(aj, "footprint_mib", 0, "a number");
      } else {
        a.min_mib = opt_field<double>(aj, "min_mib", 0, "a number");
        a.max_mib = opt_field<double>(aj, "max_mib", a.min_mib, "a number");
      }
      m.apps.push_back(std::move(a));
    }
  }
  if (const auto bg = j.find("background"); bg != j.end()) {
    if (!bg->is_object()) throw ConfigError("mix spec: \"background\" must be an object");
    reject_unknown(*bg, {"count", "mean_mib"}, "mix spec background");
    m.background_count = opt_field<uint32_t>(*bg, "count", 0, "an integer");
    m.background_mean_mib = opt_field<double>(*bg, "mean_mib", 4.9, "a number");
  }
  m.page_table_emulation = opt_field<bool>(j, "page_table_emulation", false, "a boolean");
  m.duration_events = opt_field<uint64_t>(j, "duration_events", 1'000'000, "an integer");
  m.restart_on_completion = opt_field<bool>(j, "restart_on_completion", true, "a boolean");
  if (const auto churn = j.find("churn"); churn != j.end()) {
    if (!churn->is_object()) throw ConfigError("mix spec: \"churn\" must be an object");
    reject_unknown(*churn, {"min", "max"}, "mix spec churn");
    m.churn_min = opt_field<double>(*churn, "min", 0.01, "a number");
    m.churn_max = opt_field<double>(*churn, "max", 0.10, "a number");
  }
  m.max_order = opt_field<uint32_t>(j, "max_order", 8, "an integer");
  m.seed = opt_field<uint64_t>(j, "seed", 0, "an integer");
  validate_mix(m);
  return m;
}

std::string to_json(const MixSpec& m, int indent) {
  json apps = json::array();
  for (const AppSpec& a : m.apps) {
    json aj{{"class", a.cls}, {"count", a.count}};
    if (!a.name.empty()) aj["name"] = a.name;
    if (a.cls == "custom") {
      aj["min_mib"] = a.min_mib;
      aj["max_mib"] = a.max_mib;
    }
    apps.push_back(std::move(aj));
  }
  const json j{{"apps", std::move(apps)},
               {"background", {{"count", m.background_count}, {"mean_mib", m.background_mean_mib}}},
               {"page_table_emulation", m.page_table_emulation},
               {"duration_events", m.duration_events},
               {"restart_on_completion", m.restart_on_completion},
               {"churn", {{"min", m.churn_min}, {"max", m.churn_max}}},
               {"max_order", m.max_order},
               {"seed", m.seed}};
  return j.dump(indent);
}

// ---------------------------------------------------------------------------
// Trace generation
// ---------------------------------------------------------------------------

namespace {

// Deterministic RNG with hand-rolled draws so traces are byte-identical on
// every platform regardless of the standard library's distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {  // splitmix64
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double uniform01() { return double(next() >> 11) * 0x1.0p-53; }

  uint64_t below(uint64_t n) {  // uniform in [0, n)
    return static_cast<uint64_t>((static_cast<__uint128_t>(next()) * n) >> 64);
  }

  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  double exponential(double mean) { return -mean * std::log1p(-uniform01()); }

 private:
  uint64_t state_;
};

constexpr uint64_t kPagesPerMiB = 256;     // 4 KiB pages
constexpr uint64_t kPagesPerPtUnit = 512;  // one dummy domain per 2 MiB
constexpr double kFeasibilityFactor = 0.9;

struct Proc {
  enum class Phase : uint8_t { Respawn, Ramp, Steady, Done };

  Phase phase = Phase::Respawn;
  uint32_t dom = 0;  // valid once spawned
  uint64_t target_pages = 0;
  uint32_t grain = 0;  // block order used for ramp and churn
  bool is_app = false;  // applications restart; background never does
  uint32_t cycles_left = 0;

  uint64_t live_grain_blocks = 0;
  uint64_t live_tail_pages = 0;
  std::vector<uint32_t> pt_doms;  // live page-table dummies, one page each

  uint64_t grain_blocks_target() const { return target_pages >> grain; }
  uint64_t tail_target() const { return target_pages - (grain_blocks_target() << grain); }
};

class Generator {
 public:
  Generator(const MixSpec& spec, const DramGeometry& geo) : spec_(spec), rng_(spec.seed) {
    validate_mix(spec);
    build_procs();
    check_feasibility(geo);
    run();
  }

  GeneratedTrace take() { return {std::move(events_), std::move(warnings_)}; }

 private:
  void build_procs() {
    for (const AppSpec& a : spec_.apps) {
      const ClassRange r = class_range(a);
      for (uint32_t i = 0; i < a.count; ++i) {
        Proc p;
        p.is_app = true;
        const double mib = r.two_point ? (rng_.below(2) ? r.max_mib : r.min_mib)
                                       : rng_.uniform(r.min_mib, r.max_mib);
        p.target_pages = std::max<uint64_t>(1, std::llround(mib * kPagesPerMiB));
        p.grain = app_grain();
        procs_.push_back(p);
      }
    }
    for (uint32_t i = 0; i < spec_.background_count; ++i) {
      Proc p;
      p.is_app = false;
      const double mib = rng_.exponential(spec_.background_mean_mib);
      p.target_pages = std::max<uint64_t>(1, std::llround(mib * kPagesPerMiB));
      p.grain = 0;  // daemons allocate single pages
      procs_.push_back(p);
    }
  }

  uint32_t app_grain() {
    const uint32_t hi = spec_.max_order;
    const uint32_t lo = std::min<uint32_t>(6, hi);
    return lo + static_cast<uint32_t>(rng_.below(hi - lo + 1));
  }

  void check_feasibility(const DramGeometry& geo) {
    double demand = 0;
    for (const Proc& p : procs_) {
      demand += double(p.target_pages);
      if (spec_.page_table_emulation) demand += double(p.target_pages / kPagesPerPtUnit);
    }
    if (demand > double(geo.total_pages) * kFeasibilityFactor) {
      std::ostringstream w;
      w << "demand of " << uint64_t(demand) << " pages exceeds " << kFeasibilityFactor
        << " of the " << geo.total_pages
        << " available; expect out-of-memory (run will be flagged unsupported)";
      warnings_.push_back(w.str());
    }
  }

  // -- event emission helpers (one visit's events share one tick) --

  void emit(TraceAction act, uint32_t dom, uint32_t order = 0, uint64_t count = 1,
            bool pt = false) {
    TraceEvent e;
    e.time = tick_;
    e.domain = dom;
    e.action = act;
    if (act == TraceAction::Alloc || act == TraceAction::Free) {
      e.order = order;
      e.count = count;
    }
    e.pt = pt;
    events_.push_back(e);
  }

  void spawn_proc(Proc& p) {
    p.dom = next_dom_++;
    emit(TraceAction::Spawn, p.dom);
    p.phase = Proc::Phase::Ramp;
    p.cycles_left = p.is_app ? 3 + static_cast<uint32_t>(rng_.below(6)) : 0;
    ++alive_;
  }

  // Page-table emulation: one single-page domain per 2 MiB ramped so far.
  void top_up_dummies(Proc& p, uint64_t ramped_pages) {
    if (!spec_.page_table_emulation) return;
    const uint64_t want = ramped_pages / kPagesPerPtUnit;
    while (p.pt_doms.size() < want) {
      const uint32_t d = next_dom_++;
      emit(TraceAction::Spawn, d, 0, 1, /*pt=*/true);
      emit(TraceAction::Alloc, d, 0, 1);
      p.pt_doms.push_back(d);
      ++live_dummies_;
    }
  }

  void drop_dummies(Proc& p) {
    for (uint32_t d : p.pt_doms) {
      emit(TraceAction::Free, d, 0, 1);
      emit(TraceAction::Exit, d);
      --live_dummies_;
    }
    p.pt_doms.clear();
  }

  void free_all(Proc& p) {
    if (p.live_grain_blocks) emit(TraceAction::Free, p.dom, p.grain, p.live_grain_blocks);
    if (p.live_tail_pages) emit(TraceAction::Free, p.dom, 0, p.live_tail_pages);
    p.live_grain_blocks = 0;
    p.live_tail_pages = 0;
    drop_dummies(p);
    emit(TraceAction::Exit, p.dom);
    --alive_;
  }

  uint64_t live_pages(const Proc& p) const {
    return (p.live_grain_blocks << p.grain) + p.live_tail_pages;
  }

  // -- per-visit behavior --

  void visit(Proc& p) {
    switch (p.phase) {
      case Proc::Phase::Respawn:
        spawn_proc(p);
        return;
      case Proc::Phase::Ramp: {
        const uint64_t blocks_target = p.grain_blocks_target();
        if (p.live_grain_blocks < blocks_target) {
          const uint64_t step = std::max<uint64_t>(1, blocks_target / 8);
          const uint64_t n = std::min(step, blocks_target - p.live_grain_blocks);
          emit(TraceAction::Alloc, p.dom, p.grain, n);
          p.live_grain_blocks += n;
        } else if (p.tail_target() > p.live_tail_pages) {
          emit(TraceAction::Alloc, p.dom, 0, p.tail_target() - p.live_tail_pages);
          p.live_tail_pages = p.tail_target();
        }
        top_up_dummies(p, live_pages(p));
        if (p.live_grain_blocks == blocks_target && p.live_tail_pages == p.tail_target())
          p.phase = Proc::Phase::Steady;
        return;
      }
      case Proc::Phase::Steady: {
        if (p.is_app && p.cycles_left == 0) {
          free_all(p);
          p.phase = spec_.restart_on_completion ? Proc::Phase::Respawn : Proc::Phase::Done;
          return;
        }
        if (p.cycles_left) --p.cycles_left;
        const double frac = rng_.uniform(spec_.churn_min, spec_.churn_max);
        if (p.live_grain_blocks > 0) {
          const uint64_t k = std::max<uint64_t>(
              1, std::llround(frac * double(p.live_grain_blocks)));
          emit(TraceAction::Free, p.dom, p.grain, k);
          emit(TraceAction::Alloc, p.dom, p.grain, k);
        }
        return;
      }
      case Proc::Phase::Done:
        return;
    }
  }

  // Exact teardown cost if we stopped now: per live process up to two frees
  // plus an exit, plus two events per live dummy domain.
  uint64_t teardown_budget() const { return alive_ * 3 + live_dummies_ * 2; }

  void run() {
    std::vector<uint32_t> idx(procs_.size());
    for (uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;

    bool out_of_budget = procs_.empty();
    while (!out_of_budget) {
      // Fisher-Yates reshuffle of the visit order each round.
      for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng_.below(i)]);
      bool any_active = false;
      for (uint32_t i : idx) {
        if (events_.size() + teardown_budget() + 4 >= spec_.duration_events) {
          out_of_budget = true;
          break;
        }
        Proc& p = procs_[i];
        if (p.phase == Proc::Phase::Done) continue;
        any_active = true;
        visit(p);
        ++tick_;
      }
      if (!any_active) break;
    }

    for (Proc& p : procs_) {
      if (p.phase == Proc::Phase::Done || p.phase == Proc::Phase::Respawn) continue;
      free_all(p);
      p.phase = Proc::Phase::Done;
      ++tick_;
    }
  }

  const MixSpec& spec_;
  Rng rng_;
  std::vector<Proc> procs_;
  std::vector<TraceEvent> events_;
  std::vector<std::string> warnings_;
  uint64_t tick_ = 0;
  uint32_t next_dom_ = 0;
  uint64_t alive_ = 0;
  uint64_t live_dummies_ = 0;
};

}  // namespace

GeneratedTrace generate_mix(const MixSpec& spec, const DramGeometry& geo) {
  Generator g(spec, geo);
  return g.take();
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

namespace {

template <class State>
ReplayResult replay_impl(const std::vector<TraceEvent>& trace, State& state,
                         const ReplayOptions& opts) {
  validate_trace(trace);
  ReplayResult res;

  const bool fold_pt = opts.siloz_pt_accounting;
  const uint64_t pages_per_row = state.geometry().pages_per_global_row;
  const bool checks = opts.grt && opts.transforms && opts.verify_n_guard > 0;

  std::map<uint32_t, uint32_t> dom_map;            // trace domain -> state domain
  std::map<uint32_t, uint64_t> folded_live;        // pt domain -> live pages
  uint64_t pt_live_total = 0;
  // Oldest-first live blocks per (trace domain, order): frees carry no frame
  // numbers, so they release the longest-lived matching block.
  std::map<std::pair<uint32_t, uint32_t>, std::deque<uint64_t>> fifo;

  const auto take_snapshot = [&](uint64_t tick) {
    MetricsSnapshot s = snapshot(state, tick);
    if (fold_pt && pt_live_total) {
      try {
        apply_pt_adjustment(s, pt_live_total, pages_per_row, opts.pt_guard_rows_per_batch);
      } catch (const AllocError&) {
        res.supported = false;
        res.findings.push_back("tick " + std::to_string(tick) +
                               ": page-table fold overdraws the free pool");
      }
    }
    res.timeline.push_back(s);
  };

  const auto checkpoint = [&](uint64_t tick) {
    if (!checks) return;
    ViolationReport rep = check_isolation(state, *opts.grt, *opts.transforms,
                                          opts.verify_n_guard);
    res.violation_count += rep.violations.size();
    for (Violation& v : rep.violations)
      if (res.violations.size() < 4096) res.violations.push_back(v);
    for (std::string& f : rep.findings)
      res.findings.push_back("tick " + std::to_string(tick) + ": " + std::move(f));
  };

  take_snapshot(0);
  uint64_t next_sample = opts.sample_interval;
  uint64_t next_verify = opts.verify_interval;
  uint64_t last_time = 0;

  const auto cross_boundaries = [&](uint64_t now) {
    if (opts.sample_interval)
      while (next_sample <= now) {
        take_snapshot(next_sample);
        if (checks && opts.verify_interval && next_verify <= next_sample) {
          checkpoint(next_sample);
          while (next_verify <= next_sample) next_verify += opts.verify_interval;
        }
        next_sample += opts.sample_interval;
      }
  };

  for (const TraceEvent& e : trace) {
    if (e.time != last_time) {
      cross_boundaries(e.time - 1);
      last_time = e.time;
    }
    ++res.applied_events;
    switch (e.action) {
      case TraceAction::Spawn:
        if (fold_pt && e.pt) {
          folded_live.emplace(e.domain, 0);
        } else {
          dom_map.emplace(e.domain, state.create_domain());
        }
        break;
      case TraceAction::Alloc: {
        if (const auto f = folded_live.find(e.domain); f != folded_live.end()) {
          const uint64_t pages = e.count << e.order;
          f->second += pages;
          pt_live_total += pages;
          break;
        }
        const uint32_t dom = dom_map.at(e.domain);
        auto& q = fifo[{e.domain, e.order}];
        for (uint64_t k = 0; k < e.count; ++k) {
          try {
            q.push_back(state.alloc_pages(dom, e.order).front());
          } catch (const AllocError& ex) {
            if (ex.code != AllocErrc::OutOfMemory) throw;
            res.supported = false;
            ++res.oom_events;
            break;  // skip the rest of this event
          }
        }
        break;
      }
      case TraceAction::Free: {
        if (const auto f = folded_live.find(e.domain); f != folded_live.end()) {
          const uint64_t pages = std::min(e.count << e.order, f->second);
          f->second -= pages;
          pt_live_total -= pages;
          break;
        }
        const uint32_t dom = dom_map.at(e.domain);
        auto& q = fifo[{e.domain, e.order}];
        // Blocks whose allocation was cut short by out-of-memory never
        // materialized; freeing them is a no-op.
        for (uint64_t k = 0; k < e.count && !q.empty(); ++k) {
          state.free_pages(dom, q.front(), e.order);
          q.pop_front();
        }
        break;
      }
      case TraceAction::Exit: {
        if (const auto f = folded_live.find(e.domain); f != folded_live.end()) {
          pt_live_total -= f->second;
          folded_live.erase(f);
          break;
        }
        const uint32_t dom = dom_map.at(e.domain);
        auto it = fifo.lower_bound({e.domain, 0});
        while (it != fifo.end() && it->first.first == e.domain) {
          for (uint64_t pfn : it->second) state.free_pages(dom, pfn, it->first.second);
          it = fifo.erase(it);
        }
        state.destroy_domain(dom);
        dom_map.erase(e.domain);
        break;
      }
    }
  }

  if (!trace.empty()) cross_boundaries(trace.back().time);
  const uint64_t final_tick = trace.empty() ? 0 : trace.back().time + 1;
  take_snapshot(final_tick);
  checkpoint(final_tick);
  return res;
}

}  // namespace

ReplayResult replay(const std::vector<TraceEvent>& trace, Allocator& state,
                    const ReplayOptions& opts) {
  return replay_impl(trace, state, opts);
}

ReplayResult replay(const std::vector<TraceEvent>& trace, BuddyState& state,
                    const ReplayOptions& opts) {
  return replay_impl(trace, state, opts);
}

}  // namespace rowguard
