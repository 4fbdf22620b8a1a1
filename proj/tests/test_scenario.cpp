// Scenario text format, the reference membership interpretation, seeded
// workload generation, and run statistics.

#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <string>
#include <vector>

#include "churnline/scenario.hpp"
#include "churnline/stats.hpp"
#include "churnline/tickets.hpp"

using namespace churnline;

namespace {

void expect_error(const std::string& text, std::size_t line, const std::string& needle) {
  try {
    parse_scenario_text(text);
    FAIL("expected a parse error for: " + text);
  } catch (const scenario_error& e) {
    CHECK(e.line_no == line);
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}

std::string stat_of(const run_stats& st, const std::string& key) {
  for (const auto& [k, v] : st.kv)
    if (k == key)
      return v;
  FAIL("missing stat: " + key);
  return {};
}

}  // namespace

TEST_CASE("a full scenario parses and renders back to itself") {
  const std::string text =
      "# three members, one of everything\n"
      "init 10 20 30\n"
      "sched scripted\n"
      "stop events 500\n"
      "\n"
      "at 0 join 15 via 10\n"
      "at 0 leave 20\n"
      "at 10 leave 30 via 10\n"
      "at 10 search 25\n"
      "at 20 adversarial-exit 15   # mid-run crash\n"
      "pick chan 10 15\n"
      "pick guard 10\n";
  scenario sc = parse_scenario_text(text);

  CHECK(sc.init == std::vector<process_id>{10, 20, 30});
  REQUIRE(sc.sched.has_value());
  CHECK(*sc.sched == sched_policy::scripted);
  REQUIRE(sc.stop_events.has_value());
  CHECK(*sc.stop_events == 500);
  REQUIRE(sc.injections.size() == 5);
  CHECK(sc.injections[0].what == injection::op::join);
  CHECK(sc.injections[0].via == std::optional<process_id>(10));
  CHECK(sc.injections[1].what == injection::op::leave_intent);
  CHECK(sc.injections[2].what == injection::op::leave_message);
  CHECK(sc.injections[3].what == injection::op::search);
  CHECK_FALSE(sc.injections[3].via.has_value());
  CHECK(sc.injections[4].what == injection::op::adversarial_exit);
  REQUIRE(sc.picks.size() == 2);
  CHECK_FALSE(sc.picks[0].guard);
  CHECK(sc.picks[1].guard);

  std::string once = render_scenario(sc);
  CHECK(render_scenario(parse_scenario_text(once)) == once);
}

TEST_CASE("parse errors carry their line number") {
  expect_error("init 10\nfoo bar\n", 2, "unknown keyword: foo");
  expect_error("sched turbo\n", 1, "unknown scheduler: turbo");
  expect_error("init\n", 1, "at least one id");
  expect_error("at 0 join\n", 1, "join takes");
  expect_error("at 0 join ten\n", 1, "");  // bad id, wrapped with the line number
  expect_error("at 0 vanish 10\n", 1, "unknown directive: vanish");
  expect_error("# fine\n\npick chan 5\n", 3, "pick takes");
  expect_error("stop events\n", 1, "stop takes");
}

TEST_CASE("sentinel ids render and parse in scenario directives") {
  scenario sc = parse_scenario_text("init -inf +inf 10\n");
  CHECK(sc.init == std::vector<process_id>{neg_inf, pos_inf, 10});
}

TEST_CASE("reference membership counts every id ever used") {
  scenario sc = parse_scenario_text(
      "init 10 20\n"
      "at 0 join 15\n"
      "at 0 leave 20\n"
      "at 0 join 20\n"   // 20 was already used: a rejoin would be rejected
      "at 0 join +inf\n"  // sentinels never count as members
      "at 0 search 40\n");
  CHECK(reference_membership(sc) == std::vector<process_id>{10, 15});
}

TEST_CASE("generated workloads are deterministic and well-formed") {
  std::vector<process_id> init{10, 20, 30};
  scenario a = generate_workload(17, 50, 1.0, 1.0, 1.0, std::nullopt, init);
  scenario b = generate_workload(17, 50, 1.0, 1.0, 1.0, std::nullopt, init);
  CHECK(render_scenario(a) == render_scenario(b));
  CHECK(render_scenario(a) !=
        render_scenario(generate_workload(18, 50, 1.0, 1.0, 1.0, std::nullopt, init)));

  REQUIRE(a.injections.size() == 50);
  std::set<process_id> used(init.begin(), init.end());
  std::set<process_id> alive(init.begin(), init.end());
  int joins = 0, leaves = 0, searches = 0;
  for (const auto& inj : a.injections) {
    switch (inj.what) {
      case injection::op::join:
        ++joins;
        CHECK(used.insert(inj.id).second);  // fresh, never-seen id
        alive.insert(inj.id);
        break;
      case injection::op::leave_intent:
        ++leaves;
        CHECK(alive.count(inj.id) == 1);  // only alive processes leave
        alive.erase(inj.id);
        break;
      case injection::op::search:
        ++searches;
        break;
      default:
        FAIL("unexpected injection kind");
    }
    CHECK(inj.at == 0);  // no cap: everything lands at once
  }
  CHECK(joins + leaves + searches == 50);
  CHECK(joins > 0);
  CHECK(leaves > 0);
  CHECK(searches > 0);
}

TEST_CASE("a concurrency cap staggers churn into spaced waves") {
  scenario sc = generate_workload(17, 40, 1.0, 1.0, 1.0, 5, {10, 20, 30});
  std::map<seq_t, int> churn_per_wave;
  for (const auto& inj : sc.injections) {
    CHECK(inj.at % 500 == 0);
    if (inj.what != injection::op::search)
      ++churn_per_wave[inj.at];
  }
  REQUIRE(churn_per_wave.size() > 1);
  for (const auto& [at, n] : churn_per_wave) {
    CAPTURE(at);
    CHECK(n <= 5);
  }
}

TEST_CASE("scenario settings override the caller's defaults") {
  scenario sc = parse_scenario_text(
      "init 10 20\n"
      "sched round-robin\n"
      "at 0 join 15\n"
      "at 0 join 25\n");

  sim_config base_a, base_b;
  base_a.seed = 5;
  base_b.seed = 5;
  base_a.sched = sched_policy::fair_random;
  base_b.sched = sched_policy::round_robin;
  simulator sa = build_sim(sc, base_a);
  simulator sb = build_sim(sc, base_b);
  sa.run();
  sb.run();
  // The scenario pins the scheduler, so both runs are identical.
  CHECK(render_trace(sa.records()) == render_trace(sb.records()));

  scenario capped = parse_scenario_text(
      "init 10 20\n"
      "stop events 12\n"
      "at 0 join 15\n");
  simulator sim = build_sim(capped, base_a);
  CHECK(sim.run() == stop_reason::max_events);
  CHECK(sim.truncated());
  CHECK(sim.records().size() >= 12);
}

TEST_CASE("run statistics summarize a mixed workload") {
  std::vector<process_id> init;
  for (int i = 1; i <= 10; ++i)
    init.push_back(i * 100);
  scenario sc = generate_workload(23, 30, 1.0, 1.0, 1.0, std::nullopt, init);
  sim_config base;
  base.seed = 23;
  simulator sim = build_sim(sc, base);
  REQUIRE(sim.run() == stop_reason::idle);
  sim.seal();

  std::size_t joins = 0, leaves = 0, searches = 0;
  for (const auto& inj : sc.injections) {
    joins += inj.what == injection::op::join;
    leaves += inj.what == injection::op::leave_intent;
    searches += inj.what == injection::op::search;
  }

  trace_index ix = build_index(sim.records());
  run_stats st = compute_stats(ix);
  CHECK(stat_of(st, "records") == std::to_string(sim.records().size()));
  CHECK(stat_of(st, "injects") == std::to_string(sc.injections.size()));
  CHECK(stat_of(st, "join-requests") == std::to_string(joins));
  CHECK(stat_of(st, "join-satisfied") == std::to_string(joins));
  CHECK(stat_of(st, "leave-requests") == std::to_string(leaves));
  CHECK(stat_of(st, "leave-satisfied") == std::to_string(leaves));
  CHECK(stat_of(st, "requests-open") == "0");
  CHECK(stat_of(st, "searches") == std::to_string(searches));
  CHECK(stat_of(st, "searches-resolved") == std::to_string(searches));
  CHECK(stat_of(st, "stop") == "idle");
  CHECK(stat_of(st, "quiescent") == "1");
  CHECK(stat_of(st, "truncated") == "0");
  CHECK(stat_of(st, "unfair") == "0");

  std::string rendered = st.render();
  CHECK(rendered.find("records\t") != std::string::npos);
  CHECK(rendered.find("peak-concurrent-requests\t") != std::string::npos);
}
