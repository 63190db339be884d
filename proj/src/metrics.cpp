#include "dmlsim/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace dmlsim {

void AnalyticParams::validate(Architecture arch) const {
  if (client_count == 0)
    fail(ErrorKind::config, "analytic: client count missing");
  if (arch == Architecture::cl) return;
  if (model_bytes == 0) fail(ErrorKind::config, "analytic: model bytes missing");
  if (arch == Architecture::hsfl) {
    if (segment_count < 1 || segments_sent < 1 || segments_sent > segment_count)
      fail(ErrorKind::config, "analytic: need 1 <= m <= M");
  }
  if (arch == Architecture::sl || arch == Architecture::hfsl) {
    if (cut_width == 0) fail(ErrorKind::config, "analytic: cut width missing");
    if (!(client_model_fraction > 0.0) || !(client_model_fraction < 1.0))
      fail(ErrorKind::config, "analytic: client model fraction must be in (0,1)");
  }
}

double analytic_comm(Architecture arch, const AnalyticParams& p) {
  p.validate(arch);
  // Extended precision keeps integer-valued inputs exact; the split-protocol
  // formulas share their terms so the hfsl - sl identity holds structurally.
  long double n = p.client_count;
  long double w = p.model_bytes;
  switch (arch) {
    case Architecture::cl:
      return 0.0;
    case Architecture::fl:
      return double(2.0L * n * w);
    case Architecture::hsfl:
      return double(2.0L * n * (long double)p.segments_sent * w /
                    (long double)p.segment_count);
    case Architecture::sl:
    case Architecture::hfsl: {
      long double activation_total = 2.0L * (long double)p.cut_width *
                                     (long double)p.scalar_bytes *
                                     (long double)p.samples_per_round;
      long double sync_total = n * (long double)p.client_model_fraction * w;
      if (arch == Architecture::sl)
        return double(activation_total + sync_total);
      return double(activation_total + 2.0L * sync_total);
    }
  }
  fail(ErrorKind::config, "analytic_comm: bad architecture");
}

double analytic_comp(Architecture arch, const AnalyticParams& p) {
  p.validate(arch);
  long double n = p.client_count;
  long double f = p.flops_per_client_round;
  switch (arch) {
    case Architecture::cl:
      return double(f);
    case Architecture::fl:
    case Architecture::hsfl:
      return double(n * f);
    case Architecture::sl:
    case Architecture::hfsl:
      return double(n * (long double)p.client_flop_fraction * f);
  }
  fail(ErrorKind::config, "analytic_comp: bad architecture");
}

AnalyticParams derive_params(const ExperimentSetup& setup) {
  AnalyticParams p;
  p.client_count = uint32_t(setup.topology.clients().size());
  uint64_t samples = 0;
  for (const Shard& s : setup.shards) samples += s.indices.size();
  p.samples_per_round = samples * setup.knobs.local_epochs;
  p.model_bytes = setup.spec.param_bytes();
  p.scalar_bytes = setup.spec.param_dtype_bytes;
  p.segment_count = setup.knobs.segment_count;
  p.segments_sent = setup.knobs.segments_sent;
  p.flops_per_client_round =
      p.client_count == 0
          ? 0.0
          : double(count_flops(setup.spec,
                               p.samples_per_round / p.client_count));
  if (setup.arch == Architecture::sl || setup.arch == Architecture::hfsl) {
    CutPlan cut = cut_at_layer(setup.spec, setup.knobs.cut_layer,
                               setup.knobs.label_sharing);
    p.cut_width = cut.cut_width;
    p.client_model_fraction = cut.client_fraction;
    p.client_flop_fraction = cut.client_flop_fraction;
  }
  return p;
}

namespace {

uint64_t counted_client_bytes(const RoundTrace& t,
                              const AccountingOptions& acct) {
  return t.client_bytes(acct.count_handoff_bytes);
}

}  // namespace

ValidationCheck validate_accounting(const std::vector<RoundTrace>& rounds,
                                    Architecture arch,
                                    const AnalyticParams& params,
                                    const AccountingOptions& acct,
                                    uint64_t injected_phantom_bytes) {
  if (rounds.empty())
    fail(ErrorKind::config, "validate: no rounds to validate");
  ValidationCheck check;
  check.arch = arch;
  check.rounds = uint32_t(rounds.size());
  check.convention = to_string(acct.downlink);
  for (const RoundTrace& t : rounds) {
    check.simulated_bytes += counted_client_bytes(t, acct);
    check.simulated_client_flops += t.client_flops();
  }
  check.simulated_bytes += injected_phantom_bytes;
  check.analytic_bytes = analytic_comm(arch, params) * double(rounds.size());
  check.analytic_flops = analytic_comp(arch, params) * double(rounds.size());
  check.byte_delta =
      int64_t(check.simulated_bytes) - int64_t(std::llround(check.analytic_bytes));
  // cl's analytic computation is a single full-data epoch by definition, not
  // the simulated node's total work, so only the byte side is gated.
  check.flops_checked = arch != Architecture::cl;
  check.flop_delta =
      double(check.simulated_client_flops) - check.analytic_flops;
  // Only the per-client downlink convention is an exact-match convention;
  // under broadcast the delta is reported, not gated.
  bool exact = acct.downlink == DownlinkConvention::per_client;
  check.passed = !exact || (check.byte_delta == 0 &&
                            (!check.flops_checked || check.flop_delta == 0.0));
  if (!check.passed) {
    // Group delivered transmissions by (label, class) so the residual can be
    // pinned to the responsible events.
    std::map<std::string, uint64_t> groups;
    for (const RoundTrace& t : rounds)
      for (const Event& e : t.timing.events)
        if (e.kind == EventKind::transmit && e.ok)
          groups[e.label + " [" + to_string(e.link_class) + "]"] += e.bytes;
    for (const auto& [label, bytes] : groups)
      check.offending_events.push_back(label + ": " + std::to_string(bytes) +
                                       " bytes");
    if (injected_phantom_bytes > 0)
      check.offending_events.push_back(
          "phantom injection: " + std::to_string(injected_phantom_bytes) +
          " bytes");
  }
  return check;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Report summarize(
    const std::vector<std::pair<Architecture, std::vector<RoundResult>>>& runs,
    const AccountingOptions& acct,
    const std::vector<std::pair<Architecture, AnalyticParams>>& analytic) {
  if (runs.empty()) fail(ErrorKind::config, "summarize: no rounds");
  Report report;
  report.downlink_convention = to_string(acct.downlink);
  report.handoff_counted = acct.count_handoff_bytes;
  for (const auto& [arch, results] : runs) {
    if (results.empty()) fail(ErrorKind::config, "summarize: no rounds");
    ArchSummary summary;
    summary.arch = arch;
    Ratio total_time;
    for (const RoundResult& r : results) {
      ReportRow row;
      row.arch = arch;
      row.round = r.trace.round;
      row.comm_bytes = counted_client_bytes(r.trace, acct);
      row.client_flops = r.trace.client_flops();
      row.sim_seconds = r.trace.duration().to_double();
      row.accuracy = r.accuracy;
      report.rows.push_back(row);
      summary.comm_bytes += row.comm_bytes;
      summary.client_flops += row.client_flops;
      total_time += r.trace.duration();
      summary.final_accuracy = row.accuracy;
    }
    summary.rounds = uint32_t(results.size());
    summary.sim_seconds = total_time.to_double();
    for (const auto& [a, p] : analytic) {
      if (a != arch) continue;
      summary.analytic_comm_bytes = analytic_comm(a, p) * summary.rounds;
      summary.analytic_client_flops = analytic_comp(a, p) * summary.rounds;
    }
    report.summaries.push_back(summary);
  }
  return report;
}

void export_csv(const Report& report, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path);
  os << "arch,round,comm_bytes,client_flops,sim_seconds,accuracy\n";
  for (const ReportRow& r : report.rows)
    os << to_string(r.arch) << ',' << r.round << ',' << r.comm_bytes << ','
       << r.client_flops << ',' << format_double(r.sim_seconds) << ','
       << format_double(r.accuracy) << '\n';
  for (const ArchSummary& s : report.summaries)
    os << to_string(s.arch) << ",total," << s.comm_bytes << ','
       << s.client_flops << ',' << format_double(s.sim_seconds) << ','
       << format_double(s.final_accuracy) << '\n';
  if (!os) fail(ErrorKind::io, "write failed: " + path);
}

void export_json(const Report& report, const std::string& path) {
  nlohmann::ordered_json j;
  j["downlink_convention"] = report.downlink_convention;
  j["handoff_counted"] = report.handoff_counted;
  j["rounds"] = nlohmann::ordered_json::array();
  for (const ReportRow& r : report.rows) {
    nlohmann::ordered_json row;
    row["arch"] = to_string(r.arch);
    row["round"] = r.round;
    row["comm_bytes"] = r.comm_bytes;
    row["client_flops"] = r.client_flops;
    row["sim_seconds"] = r.sim_seconds;
    row["accuracy"] = r.accuracy;
    j["rounds"].push_back(row);
  }
  j["summary"] = nlohmann::ordered_json::array();
  for (const ArchSummary& s : report.summaries) {
    nlohmann::ordered_json row;
    row["arch"] = to_string(s.arch);
    row["rounds"] = s.rounds;
    row["comm_bytes"] = s.comm_bytes;
    row["client_flops"] = s.client_flops;
    row["sim_seconds"] = s.sim_seconds;
    row["final_accuracy"] = s.final_accuracy;
    if (s.analytic_comm_bytes) {
      row["analytic_comm_bytes"] = *s.analytic_comm_bytes;
      row["analytic_client_flops"] = *s.analytic_client_flops;
    }
    j["summary"].push_back(row);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path);
  os << j.dump(2) << '\n';
  if (!os) fail(ErrorKind::io, "write failed: " + path);
}

void export_trace_json(const std::vector<RoundTrace>& traces,
                       const std::string& path) {
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const RoundTrace& t : traces) {
    nlohmann::ordered_json round;
    round["arch"] = to_string(t.arch);
    round["round"] = t.round;
    round["aborted"] = t.aborted;
    round["duration_seconds"] = t.duration().to_double();
    round["duration_exact"] = t.duration().str();
    round["events"] = nlohmann::ordered_json::array();
    for (size_t i = 0; i < t.timing.events.size(); ++i) {
      const Event& e = t.timing.events[i];
      nlohmann::ordered_json ev;
      ev["kind"] = e.kind == EventKind::transmit ? "tx" : "compute";
      ev["node"] = e.node;
      if (e.kind == EventKind::transmit) {
        ev["dst"] = e.dst;
        ev["bytes"] = e.bytes;
        ev["link_class"] = to_string(e.link_class);
        ev["ok"] = e.ok;
      } else {
        ev["flops"] = e.flops;
        ev["client_side"] = e.client_side;
      }
      ev["label"] = e.label;
      ev["start"] = t.timing.start[i].to_double();
      ev["end"] = t.timing.end[i].to_double();
      round["events"].push_back(ev);
    }
    all.push_back(round);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path);
  os << all.dump(2) << '\n';
  if (!os) fail(ErrorKind::io, "write failed: " + path);
}

}  // namespace dmlsim
