#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "churnline/checker.hpp"
#include "churnline/sim.hpp"

namespace churnline {

// Packaged adversarial constructions. Each one drives the simulator into a
// hand-built corner case, runs the full checker, and reports whether the
// outcome matches the expected signature of passes and failures.
struct demo_result {
  std::string name;
  bool pattern_ok = false;
  std::string narrative;
  std::vector<std::pair<std::string, run_report>> reports;  // labeled phases
  std::vector<std::pair<std::string, trace>> traces;        // same labels

  std::string render() const {
    std::ostringstream os;
    os << "demo " << name << '\n' << narrative << '\n';
    for (const auto& [label, rep] : reports) {
      os << "--- " << label << " ---\n" << rep.render();
    }
    os << "pattern " << (pattern_ok ? "ok" : "MISMATCH") << '\n';
    return os.str();
  }
};

inline const verdict* find_verdict(const run_report& rep, const std::string& prop) {
  for (const auto& v : rep.verdicts)
    if (v.property == prop)
      return &v;
  return nullptr;
}

inline bool verdict_is(const run_report& rep, const std::string& prop, verdict::state s) {
  const verdict* v = find_verdict(rep, prop);
  return v && v->s == s;
}

// One fail-stop crash during churn handling versus the cooperative handshake.
// Phase "holes": process 20 crashes while a join request addressed to it is
// still in flight and while it is the only bridge between its neighbours; the
// request is lost, the line splits, and a search that must cross the crash
// site can never resolve. Phase "repair": the same departure done
// cooperatively leaves a clean shorter line where every property holds.
inline demo_result run_partition_demo() {
  demo_result out;
  out.name = "partition";
  out.narrative =
      "A single uncooperative crash breaks delivery, connectivity and search at\n"
      "once; the cooperative handshake removing the same process keeps all of\n"
      "them. Phase holes: 20 crashes with a join(25) still addressed to it and\n"
      "with the line 10-20-30 passing through it. Phase repair: 20 leaves by\n"
      "announcing, splicing and tearing down instead.";

  sim_config cfg;
  cfg.seed = 1;
  cfg.init = {10, 20, 30};

  // Phase A: crash mid-churn.
  {
    simulator sim(cfg);
    sim.inject_join(25, 20);
    sim.adversarial_exit(20);
    sim.inject_search(30, 10);
    sim.run();
    sim.seal();
    snapshot snap = sim.take_snapshot();
    trace_index ix = build_index(sim.records());
    run_report rep = run_checks(ix, &snap, nullptr);
    out.reports.emplace_back("holes", rep);
    out.traces.emplace_back("holes", sim.records());
  }

  // Phase B: the same departure, cooperatively.
  {
    simulator sim(cfg);
    sim.inject_leave_intent(20);
    sim.run();
    sim.seal();
    snapshot snap = sim.take_snapshot();
    trace_index ix = build_index(sim.records());
    std::vector<process_id> expect = {10, 30};
    run_report rep = run_checks(ix, &snap, &expect);
    out.reports.emplace_back("repair", rep);
    out.traces.emplace_back("repair", sim.records());
  }

  const run_report& holes = out.reports[0].second;
  const run_report& repair = out.reports[1].second;
  out.pattern_ok = verdict_is(holes, "partition", verdict::state::fail) &&
                   verdict_is(holes, "message-safety", verdict::state::fail) &&
                   verdict_is(holes, "search-resolution", verdict::state::fail) &&
                   !repair.any_fail() &&
                   verdict_is(repair, "linearization", verdict::state::pass) &&
                   verdict_is(repair, "membership", verdict::state::pass) &&
                   verdict_is(repair, "partition", verdict::state::pass);
  return out;
}

// A leave announcement kept permanently in flight by an adversarial
// scheduler. Between any two deliveries of the starved message a fresh join
// lands just short of its destination, so there is always something else to
// schedule. Every hop the message does take moves it strictly closer
// (message progress holds), every join completes (request progress holds for
// everything satisfied), yet the leave is never handled: fairness of the
// scheduler, not per-message progress, is what bounds request latency.
inline demo_result run_starvation_demo() {
  demo_result out;
  out.name = "starvation";

  const process_id c0 = 1;
  const process_id h = 1 + (static_cast<process_id>(1) << 60);
  const process_id x = h + 1;
  const int rounds = 56;

  out.narrative =
      "A leave request for the last process is dropped into the far end of the\n"
      "line and an adversarial scheduler serves it only when nothing else is\n"
      "enabled. Before each of its deliveries, one join is placed halfway\n"
      "between the message's position and its destination; the gap between\n"
      "consecutive ids starts near 2^60, so this halving sustains 56 rounds.\n"
      "Each hop still shortens the remaining distance, and every join\n"
      "completes, but the leave starves forever.";

  sim_config cfg;
  cfg.seed = 1;
  cfg.init = {c0, h, x};
  cfg.sched = sched_policy::scripted;
  simulator sim(cfg);

  auto starve = [x](const std::vector<enabled_item>& items) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const enabled_item& it = items[i];
      if (!it.guard && it.head.type == msg_type::leave && it.head.id && *it.head.id == x)
        continue;
      return i;
    }
    return std::nullopt;
  };
  auto hop = [x](const std::vector<enabled_item>& items) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const enabled_item& it = items[i];
      if (!it.guard && it.head.type == msg_type::leave && it.head.id && *it.head.id == x)
        return i;
    }
    return std::nullopt;
  };

  sim.inject_leave_message(x, c0);
  sim.set_policy(starve);
  process_id p = c0;
  for (int k = 1; k <= rounds; ++k) {
    process_id j = p + (h - p) / 2;
    sim.inject_join(j, h);  // one exempt bounce left of h, handled at p
    sim.run();              // drains everything except the starved lane
    if (k < rounds) {
      sim.set_policy(hop);
      sim.step();  // deliver the leave once: bounce + forward
      sim.set_policy(starve);
    }
    p = j;
  }
  sim.seal();

  snapshot snap = sim.take_snapshot();
  trace_index ix = build_index(sim.records());
  run_report rep = run_checks(ix, &snap, nullptr);
  out.reports.emplace_back("starved", rep);
  out.traces.emplace_back("starved", sim.records());

  std::uint64_t joins_done = 0;
  std::uint64_t leave_bounces = 0;
  bool leave_unsatisfied = false;
  for (const auto& tk : ix.tickets) {
    if (tk.kind == msg_type::join && tk.satisfied())
      ++joins_done;
    if (tk.kind == msg_type::leave && tk.churn_id == x) {
      leave_bounces = tk.bounces;
      leave_unsatisfied = !tk.satisfied();
    }
  }
  const verdict* fr = find_verdict(rep, "fair-request");
  bool fr_names_leave = fr && fr->s == verdict::state::fail &&
                        fr->witness.find(format_id(x)) != std::string::npos;
  out.pattern_ok = fr_names_leave && leave_unsatisfied && joins_done >= 50 &&
                   leave_bounces >= 50 && ix.unfair && !ix.truncated &&
                   verdict_is(rep, "request-progress", verdict::state::pass) &&
                   verdict_is(rep, "message-progress", verdict::state::pass) &&
                   verdict_is(rep, "locality", verdict::state::pass) &&
                   verdict_is(rep, "td-last", verdict::state::pass) &&
                   verdict_is(rep, "single-transition", verdict::state::pass) &&
                   verdict_is(rep, "terminating-transition", verdict::state::pass) &&
                   verdict_is(rep, "message-safety", verdict::state::pass) &&
                   verdict_is(rep, "partition", verdict::state::pass);

  std::ostringstream tail;
  tail << "\njoins satisfied: " << joins_done << ", starved-leave hops: " << leave_bounces
       << ", unfair: " << (ix.unfair ? 1 : 0);
  out.narrative += tail.str();
  return out;
}

inline std::optional<demo_result> run_demo(const std::string& name) {
  if (name == "partition")
    return run_partition_demo();
  if (name == "starvation")
    return run_starvation_demo();
  return std::nullopt;
}

}  // namespace churnline
