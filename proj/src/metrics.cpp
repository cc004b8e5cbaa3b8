#include "rowguard/metrics.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rowguard {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json snapshot_to_json_obj(const MetricsSnapshot& s) {
  return json{{"tick", s.tick},
              {"allocated", s.allocated_pages},
              {"loss", s.guard_loss_pages},
              {"stranded", s.stranded_pages},
              {"free", s.free_pages},
              {"total", s.total_pages},
              {"pt_pages", s.pt_pages},
              {"pt_loss", s.pt_loss_pages},
              {"overhead_vs_requested", s.overhead_vs_requested()},
              {"overhead_vs_total", s.overhead_vs_total()}};
}

MetricsSnapshot snapshot_from_json_obj(const json& j) {
  MetricsSnapshot s;
  s.tick = j.at("tick").get<uint64_t>();
  s.allocated_pages = j.at("allocated").get<uint64_t>();
  s.guard_loss_pages = j.at("loss").get<uint64_t>();
  s.stranded_pages = j.at("stranded").get<uint64_t>();
  s.free_pages = j.at("free").get<uint64_t>();
  s.total_pages = j.at("total").get<uint64_t>();
  s.pt_pages = j.value("pt_pages", uint64_t{0});
  s.pt_loss_pages = j.value("pt_loss", uint64_t{0});
  return s;
}

}  // namespace

double MetricsSnapshot::overhead_vs_requested() const {
  if (allocated_pages == 0) return 0.0;
  return static_cast<double>(overhead_pages()) / static_cast<double>(allocated_pages);
}

double MetricsSnapshot::overhead_vs_total() const {
  if (total_pages == 0) return 0.0;
  return static_cast<double>(overhead_pages()) / static_cast<double>(total_pages);
}

MetricsSnapshot snapshot(const Allocator& a, uint64_t tick) {
  MetricsSnapshot s;
  s.tick = tick;
  s.total_pages = a.geometry().total_pages;
  uint64_t covered = 0;
  for (uint32_t c = 0; c < a.chunk_count(); ++c) {
    const ChunkSummary cs = a.chunk_summary(c);
    covered += cs.pages;
    switch (cs.kind) {
      case ChunkKind::Free:
        s.free_pages += cs.pages;
        break;
      case ChunkKind::ZoneMember:
        s.guard_loss_pages += cs.guard_pages;
        s.allocated_pages += cs.used_pages;
        s.stranded_pages += cs.data_capacity - cs.used_pages;
        break;
      case ChunkKind::ZoneletRegion:
        s.guard_loss_pages += cs.guard_pages;
        s.allocated_pages += cs.used_pages;
        s.free_pages += cs.data_capacity - cs.used_pages;
        break;
    }
  }
  // Rows outside the chunk partition (geometries whose row count is not a
  // multiple of the chunk size) are never handed out; count them free.
  s.free_pages += s.total_pages - covered;
  return s;
}

MetricsSnapshot snapshot(const BuddyState& b, uint64_t tick) {
  MetricsSnapshot s;
  s.tick = tick;
  s.total_pages = b.total_pages();
  s.allocated_pages = b.allocated_pages();
  s.free_pages = b.free_page_count();
  return s;
}

void apply_pt_adjustment(MetricsSnapshot& s, uint64_t pt_pages, uint64_t pages_per_row,
                         uint32_t guard_rows_per_batch) {
  if (pt_pages == 0) return;
  if (pages_per_row == 0) throw ConfigError("apply_pt_adjustment: pages_per_row must be positive");
  const uint64_t batches = (pt_pages + pages_per_row - 1) / pages_per_row;
  const uint64_t loss = batches * guard_rows_per_batch * pages_per_row;
  if (s.free_pages < pt_pages + loss) {
    throw AllocError(AllocErrc::OutOfMemory,
                     "page-table accounting fold exceeds free pages: need " +
                         std::to_string(pt_pages + loss) + ", have " +
                         std::to_string(s.free_pages));
  }
  s.allocated_pages += pt_pages;
  s.guard_loss_pages += loss;
  s.free_pages -= pt_pages + loss;
  s.pt_pages += pt_pages;
  s.pt_loss_pages += loss;
}

RunSummary summarize(const std::vector<MetricsSnapshot>& timeline, bool supported) {
  if (timeline.empty()) throw std::invalid_argument("summarize: empty timeline");
  RunSummary r;
  r.supported = supported;
  r.samples = timeline.size();
  r.total_pages = timeline.front().total_pages;
  long double sum_alloc = 0, sum_loss = 0, sum_stranded = 0, sum_free = 0;
  long double sum_ov_req = 0, sum_ov_total = 0;
  for (const MetricsSnapshot& s : timeline) {
    sum_alloc += s.allocated_pages;
    sum_loss += s.guard_loss_pages;
    sum_stranded += s.stranded_pages;
    sum_free += s.free_pages;
    sum_ov_req += s.overhead_vs_requested();
    sum_ov_total += s.overhead_vs_total();
    r.peak_allocated_pages = std::max(r.peak_allocated_pages, s.allocated_pages);
    r.peak_loss_pages = std::max(r.peak_loss_pages, s.guard_loss_pages);
    r.peak_stranded_pages = std::max(r.peak_stranded_pages, s.stranded_pages);
    r.peak_overhead_pages = std::max(r.peak_overhead_pages, s.overhead_pages());
    r.peak_overhead_vs_requested = std::max(r.peak_overhead_vs_requested, s.overhead_vs_requested());
    r.peak_overhead_vs_total = std::max(r.peak_overhead_vs_total, s.overhead_vs_total());
  }
  const long double n = static_cast<long double>(r.samples);
  r.avg_allocated_pages = static_cast<double>(sum_alloc / n);
  r.avg_loss_pages = static_cast<double>(sum_loss / n);
  r.avg_stranded_pages = static_cast<double>(sum_stranded / n);
  r.avg_free_pages = static_cast<double>(sum_free / n);
  r.avg_overhead_vs_requested = static_cast<double>(sum_ov_req / n);
  r.avg_overhead_vs_total = static_cast<double>(sum_ov_total / n);
  return r;
}

const char* const kTimelineCsvHeader =
    "tick,allocated,loss,stranded,free,overhead_vs_requested,overhead_vs_total";

void write_timeline_csv(std::ostream& os, const std::vector<MetricsSnapshot>& timeline) {
  os << kTimelineCsvHeader << '\n';
  for (const MetricsSnapshot& s : timeline) {
    os << s.tick << ',' << s.allocated_pages << ',' << s.guard_loss_pages << ','
       << s.stranded_pages << ',' << s.free_pages << ',' << fmt_double(s.overhead_vs_requested())
       << ',' << fmt_double(s.overhead_vs_total()) << '\n';
  }
}

std::vector<MetricsSnapshot> read_timeline_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("timeline csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTimelineCsvHeader) {
    throw ConfigError("timeline csv: unexpected header '" + line + "'");
  }
  std::vector<MetricsSnapshot> out;
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    if (cols.size() != 7) {
      throw ConfigError("timeline csv line " + std::to_string(lineno) + ": expected 7 columns, got " +
                        std::to_string(cols.size()));
    }
    MetricsSnapshot s;
    try {
      s.tick = std::stoull(cols[0]);
      s.allocated_pages = std::stoull(cols[1]);
      s.guard_loss_pages = std::stoull(cols[2]);
      s.stranded_pages = std::stoull(cols[3]);
      s.free_pages = std::stoull(cols[4]);
      (void)std::stod(cols[5]);
      (void)std::stod(cols[6]);
    } catch (const std::exception&) {
      throw ConfigError("timeline csv line " + std::to_string(lineno) + ": malformed number");
    }
    s.total_pages = s.allocated_pages + s.guard_loss_pages + s.stranded_pages + s.free_pages;
    out.push_back(s);
  }
  return out;
}

std::string to_json(const MetricsSnapshot& s, int indent) {
  return snapshot_to_json_obj(s).dump(indent);
}

MetricsSnapshot snapshot_from_json(const std::string& text) {
  return snapshot_from_json_obj(json::parse(text));
}

std::string timeline_to_json(const std::vector<MetricsSnapshot>& timeline, int indent) {
  json arr = json::array();
  for (const MetricsSnapshot& s : timeline) arr.push_back(snapshot_to_json_obj(s));
  return arr.dump(indent);
}

std::vector<MetricsSnapshot> timeline_from_json(const std::string& text) {
  const json arr = json::parse(text);
  if (!arr.is_array()) throw ConfigError("timeline json: expected an array");
  std::vector<MetricsSnapshot> out;
  out.reserve(arr.size());
  for (const json& j : arr) out.push_back(snapshot_from_json_obj(j));
  return out;
}

std::string to_json(const RunSummary& s, int indent) {
  json j{{"supported", s.supported},
         {"samples", s.samples},
         {"total_pages", s.total_pages},
         {"avg",
          {{"allocated_pages", s.avg_allocated_pages},
           {"loss_pages", s.avg_loss_pages},
           {"stranded_pages", s.avg_stranded_pages},
           {"free_pages", s.avg_free_pages},
           {"overhead_vs_requested", s.avg_overhead_vs_requested},
           {"overhead_vs_total", s.avg_overhead_vs_total}}},
         {"peak",
          {{"allocated_pages", s.peak_allocated_pages},
           {"loss_pages", s.peak_loss_pages},
           {"stranded_pages", s.peak_stranded_pages},
           {"overhead_pages", s.peak_overhead_pages},
           {"overhead_vs_requested", s.peak_overhead_vs_requested},
           {"overhead_vs_total", s.peak_overhead_vs_total}}}};
  return j.dump(indent);
}

}  // namespace rowguard
