#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "churnline/checker.hpp"
#include "churnline/demos.hpp"
#include "churnline/scenario.hpp"
#include "churnline/stats.hpp"

namespace {

using namespace churnline;

constexpr int exit_ok = 0;
constexpr int exit_check_fail = 1;
constexpr int exit_usage = 2;

std::set<std::string> parse_check_list(const std::string& csv) {
  std::set<std::string> out;
  if (csv.empty() || csv == "all")
    return out;  // empty selection = run everything
  std::stringstream ss(csv);
  std::string name;
  auto known = all_check_names();
  while (std::getline(ss, name, ',')) {
    if (name.empty())
      continue;
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw CLI::ValidationError("--check", "unknown property: " + name);
    out.insert(name);
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write " + path);
  os << text;
}

struct run_opts {
  std::uint64_t seed = 1;
  std::string scenario_path;
  std::string mode = "line";
  int max_level = 4;
  std::uint64_t max_events = 0;  // 0 = scenario/default budget
  std::string sched;             // default when the scenario has none
  std::string trace_out, snap_out, stats_out;
  std::string check_csv;
  std::string demo_name;
  unsigned batch = 0;
};

sim_config base_config(const run_opts& o) {
  sim_config cfg;
  cfg.seed = o.seed;
  cfg.max_level = o.mode == "skiplist" ? o.max_level : 0;
  if (!o.sched.empty())
    cfg.sched = *parse_sched_policy(o.sched);
  if (o.max_events > 0)
    cfg.max_events = o.max_events;
  return cfg;
}

int do_demo(const run_opts& o) {
  auto res = run_demo(o.demo_name);
  if (!res) {
    std::cerr << "unknown demo: " << o.demo_name << '\n';
    return exit_usage;
  }
  std::cout << res->render();
  if (!o.trace_out.empty())
    for (const auto& [label, tr] : res->traces)
      write_trace_file(tr, o.trace_out + "." + label);
  return res->pattern_ok ? exit_ok : exit_check_fail;
}

int do_batch(const run_opts& o, const scenario& sc, const std::set<std::string>& selected,
             bool checking) {
  if (!o.trace_out.empty() || !o.snap_out.empty() || !o.stats_out.empty())
    std::cerr << "note: artifact outputs are ignored in batch mode\n";
  struct row {
    std::uint64_t seed = 0;
    std::string text;
    bool failed = false;
  };
  std::vector<row> rows(o.batch);
  std::vector<std::thread> pool;
  for (unsigned i = 0; i < o.batch; ++i) {
    pool.emplace_back([&, i]() {
      row& r = rows[i];
      r.seed = o.seed + i;
      try {
        sim_config cfg = base_config(o);
        cfg.seed = r.seed;
        simulator sim = build_sim(sc, cfg);
        sim.run();
        sim.seal();
        std::ostringstream os;
        os << "seed=" << r.seed << " stop=" << stop_reason_name(sim.stopped())
           << " quiescent=" << (sim.quiescent() ? 1 : 0)
           << " records=" << sim.records().size();
        if (checking) {
          trace_index ix = build_index(sim.records());
          snapshot snap = sim.take_snapshot();
          auto ref = reference_membership(sc);
          run_report rep = run_checks(ix, &snap, &ref, selected);
          r.failed = rep.any_fail();
          os << " checks=" << (r.failed ? "FAIL" : "ok");
          if (r.failed)
            for (const auto& v : rep.verdicts)
              if (v.s == verdict::state::fail)
                os << "\n  " << v.property << " fail " << v.witness;
        }
        r.text = os.str();
      } catch (const std::exception& e) {
        r.failed = true;
        r.text = "seed=" + std::to_string(r.seed) + " error: " + e.what();
      }
    });
  }
  for (auto& t : pool)
    t.join();
  bool any = false;
  for (const auto& r : rows) {
    std::cout << r.text << '\n';
    any = any || r.failed;
  }
  return any ? exit_check_fail : exit_ok;
}

int do_run(const run_opts& o) {
  if (!o.demo_name.empty())
    return do_demo(o);
  if (o.scenario_path.empty()) {
    std::cerr << "run needs --scenario or --demo\n";
    return exit_usage;
  }
  scenario sc = read_scenario_file(o.scenario_path);
  std::set<std::string> selected = parse_check_list(o.check_csv);
  bool checking = !o.check_csv.empty();
  if (o.batch > 0)
    return do_batch(o, sc, selected, checking);

  simulator sim = build_sim(sc, base_config(o));
  sim.run();
  sim.seal();
  if (!o.trace_out.empty())
    write_trace_file(sim.records(), o.trace_out);
  if (!o.snap_out.empty())
    write_snapshot_file(sim.take_snapshot(), o.snap_out);

  std::cout << "stop=" << stop_reason_name(sim.stopped())
            << " quiescent=" << (sim.quiescent() ? 1 : 0)
            << " records=" << sim.records().size() << " unfair=" << (sim.unfair() ? 1 : 0)
            << '\n';
  if (o.stats_out.empty() && !checking)
    return exit_ok;

  trace_index ix = build_index(sim.records());
  if (!o.stats_out.empty())
    write_text_file(o.stats_out, compute_stats(ix).render());
  if (!checking)
    return exit_ok;
  snapshot snap = sim.take_snapshot();
  auto ref = reference_membership(sc);
  run_report rep = run_checks(ix, &snap, &ref, selected);
  std::cout << rep.render();
  return rep.any_fail() ? exit_check_fail : exit_ok;
}

struct gen_opts {
  std::uint64_t seed = 1;
  std::size_t size = 100;
  double join_rate = 1.0;
  double leave_rate = 1.0;
  double search_rate = 0.5;
  std::size_t cap = 0;  // 0 = unbounded concurrency
  std::size_t init_count = 10;
  std::string out_path;
};

int do_gen(const gen_opts& o) {
  std::vector<process_id> init;
  for (std::size_t i = 0; i < o.init_count; ++i)
    init.push_back(static_cast<process_id>((i + 1) * 1000));
  std::optional<std::size_t> cap;
  if (o.cap > 0)
    cap = o.cap;
  scenario sc = generate_workload(o.seed, o.size, o.join_rate, o.leave_rate, o.search_rate,
                                  cap, std::move(init));
  std::string text = render_scenario(sc);
  if (o.out_path.empty())
    std::cout << text;
  else
    write_text_file(o.out_path, text);
  return exit_ok;
}

struct check_opts {
  std::string trace_path, snap_path, scenario_path, check_csv = "all";
};

int do_check(const check_opts& o) {
  trace tr = read_trace_file(o.trace_path);
  trace_index ix = build_index(tr);
  std::optional<snapshot> snap;
  if (!o.snap_path.empty())
    snap = read_snapshot_file(o.snap_path);
  std::optional<std::vector<process_id>> ref;
  if (!o.scenario_path.empty())
    ref = reference_membership(read_scenario_file(o.scenario_path));
  run_report rep = run_checks(ix, snap ? &*snap : nullptr, ref ? &*ref : nullptr,
                              parse_check_list(o.check_csv));
  std::cout << rep.render();
  return rep.any_fail() ? exit_check_fail : exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"churnline: linearized-overlay churn simulator and trace checker"};
  app.require_subcommand(1);

  run_opts ro;
  auto* run = app.add_subcommand("run", "simulate a scenario file or a packaged demo");
  run->add_option("--seed", ro.seed, "rng seed (default 1)");
  run->add_option("--scenario", ro.scenario_path, "scenario file to execute")
      ->check(CLI::ExistingFile);
  run->add_option("--mode", ro.mode, "line | skiplist (default line)")
      ->check(CLI::IsMember({"line", "skiplist"}));
  run->add_option("--max-level", ro.max_level, "tower height cap in skiplist mode (default 4)")
      ->check(CLI::PositiveNumber);
  run->add_option("--max-events", ro.max_events, "record budget override");
  run->add_option("--sched", ro.sched, "scheduler when the scenario names none")
      ->check(CLI::IsMember({"fair-random", "round-robin", "scripted"}));
  run->add_option("--trace", ro.trace_out, "write the event trace here");
  run->add_option("--snapshot", ro.snap_out, "write the final snapshot here");
  run->add_option("--stats", ro.stats_out, "write run statistics here");
  run->add_option("--check", ro.check_csv, "'all' or comma-separated property names");
  run->add_option("--demo", ro.demo_name, "packaged construction: partition | starvation")
      ->check(CLI::IsMember({"partition", "starvation"}));
  run->add_option("--batch", ro.batch, "run this many consecutive seeds in parallel");

  gen_opts go;
  auto* gen = app.add_subcommand("gen", "emit a seeded random workload scenario");
  gen->add_option("--seed", go.seed, "rng seed (default 1)");
  gen->add_option("--size", go.size, "number of directives (default 100)");
  gen->add_option("--join-rate", go.join_rate, "relative join weight (default 1)");
  gen->add_option("--leave-rate", go.leave_rate, "relative leave weight (default 1)");
  gen->add_option("--search-rate", go.search_rate, "relative search weight (default 0.5)");
  gen->add_option("--cap", go.cap, "stagger churn so at most this many overlap");
  gen->add_option("--init-count", go.init_count, "size of the initial line (default 10)");
  gen->add_option("--out", go.out_path, "write the scenario here instead of stdout");

  check_opts co;
  auto* chk = app.add_subcommand("check", "verify a previously written trace");
  chk->add_option("--trace", co.trace_path, "trace file to verify")
      ->required()
      ->check(CLI::ExistingFile);
  chk->add_option("--snapshot", co.snap_path, "final snapshot for the structural checks")
      ->check(CLI::ExistingFile);
  chk->add_option("--scenario", co.scenario_path, "scenario file for the membership check")
      ->check(CLI::ExistingFile);
  chk->add_option("--check", co.check_csv, "'all' or comma-separated property names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? exit_ok : exit_usage;
  }

  try {
    if (run->parsed())
      return do_run(ro);
    if (gen->parsed())
      return do_gen(go);
    return do_check(co);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  }
}
