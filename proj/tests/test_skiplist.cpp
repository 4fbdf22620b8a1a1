// Multi-level (tower) mode: deterministic heights, nested sublists, climbing
// via scheduled self-joins, and top-down search descent.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "churnline/checker.hpp"
#include "churnline/sim.hpp"
#include "churnline/tickets.hpp"

using namespace churnline;

namespace {

simulator tower_sim(std::vector<process_id> init, int max_level = 4,
                    std::uint64_t seed = 42) {
  sim_config cfg;
  cfg.seed = seed;
  cfg.max_level = max_level;
  cfg.init = std::move(init);
  return simulator(cfg);
}

std::set<process_id> member_set(const simulator& sim, int level) {
  auto v = sim.members(level);
  return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("tower heights are deterministic and capped") {
  simulator a = tower_sim({100, 200}, 4, 9);
  simulator b = tower_sim({100, 200}, 4, 9);
  simulator low = tower_sim({100, 200}, 2, 9);
  simulator other = tower_sim({100, 200}, 4, 10);

  int differing = 0;
  for (process_id id = 1; id <= 200; ++id) {
    int la = a.assign_level(id);
    CHECK(la == b.assign_level(id));
    CHECK(la >= 0);
    CHECK(la <= 4);
    CHECK(low.assign_level(id) <= 2);
    CHECK(low.assign_level(id) == std::min(la, 2));
    if (other.assign_level(id) != la)
      ++differing;
  }
  CHECK(differing > 0);
}

TEST_CASE("towers nest and every level stays a clean line through churn") {
  simulator sim = tower_sim({100, 200, 300, 400, 500});
  std::vector<process_id> joins{150, 250, 350, 450, 120, 220};
  for (process_id id : joins)
    REQUIRE(sim.inject_join(id));
  REQUIRE(sim.run() == stop_reason::idle);
  REQUIRE(sim.inject_leave_intent(300));
  REQUIRE(sim.inject_leave_intent(150));
  REQUIRE(sim.run() == stop_reason::idle);
  REQUIRE(sim.quiescent());
  sim.seal();

  std::vector<process_id> expected{100, 120, 200, 220, 250, 350, 400, 450, 500};
  std::set<process_id> base = member_set(sim, 0);
  {
    std::set<process_id> want(expected.begin(), expected.end());
    want.insert(neg_inf);
    want.insert(pos_inf);
    CHECK(base == want);
  }

  for (int l = 1; l <= 4; ++l) {
    std::set<process_id> above = member_set(sim, l);
    std::set<process_id> below = member_set(sim, l - 1);
    CAPTURE(l);
    CHECK(std::includes(below.begin(), below.end(), above.begin(), above.end()));
    // walk() validates pointer mirroring and ordering as it goes.
    auto w = sim.walk(l);
    CHECK(std::set<process_id>(w.begin(), w.end()) == above);
  }

  snapshot snap = sim.take_snapshot();
  CHECK(snap.multi_level);
  trace_index ix = build_index(sim.records());
  run_report rep = run_checks(ix, &snap, &expected);
  INFO(rep.render());
  for (const auto& v : rep.verdicts) {
    CAPTURE(v.property, v.witness);
    CHECK(v.s == verdict::state::pass);
  }
}

TEST_CASE("upper levels are populated by scheduled climb self-joins") {
  simulator sim = tower_sim({100, 200, 300, 400, 500});
  std::vector<process_id> joins{150, 250, 350, 450, 120, 220};
  for (process_id id : joins)
    REQUIRE(sim.inject_join(id));
  REQUIRE(sim.run() == stop_reason::idle);

  process_id towered = 0;
  int height = 0;
  for (process_id id : joins)
    if (sim.assign_level(id) > height) {
      towered = id;
      height = sim.assign_level(id);
    }
  REQUIRE(height >= 1);  // seed chosen so at least one joiner climbs

  std::set<int> climb_levels;
  for (const auto& r : sim.records())
    if (r.kind == rec_kind::inject && r.detail == "climb" && r.msg &&
        r.msg->type == msg_type::join && r.msg->id == towered)
      climb_levels.insert(r.level);
  std::set<int> want;
  for (int l = 1; l <= height; ++l)
    want.insert(l);
  CHECK(climb_levels == want);
  for (int l = 0; l <= height; ++l)
    CHECK(member_set(sim, l).count(towered) == 1);
  CHECK(member_set(sim, height + 1).count(towered) == 0);
}

TEST_CASE("skip searches agree with flat membership") {
  simulator sim = tower_sim({100, 200, 300, 400, 500});
  for (process_id id : {150, 250, 350, 450, 120, 220})
    REQUIRE(sim.inject_join(id));
  REQUIRE(sim.run() == stop_reason::idle);

  std::set<process_id> base = member_set(sim, 0);
  std::vector<process_id> keys;
  for (process_id id : base)
    if (is_ordinary(id))
      keys.push_back(id);
  for (process_id id : {1, 115, 199, 355, 710, 9999})
    keys.push_back(id);
  for (process_id key : keys)
    REQUIRE(sim.inject_search(key));
  REQUIRE(sim.run() == stop_reason::idle);
  sim.seal();

  trace_index ix = build_index(sim.records());
  REQUIRE(ix.probes.size() == keys.size());
  for (const auto& p : ix.probes) {
    CAPTURE(p.key);
    REQUIRE(p.resolved_seq.has_value());
    CHECK(p.found.value_or(false) == (base.count(p.key) == 1));
  }
  CHECK(check_search_resolution(ix).s == verdict::state::pass);
}

TEST_CASE("a towered cooperative leave clears every level") {
  simulator sim = tower_sim({100, 200, 300, 400, 500, 600, 700});
  REQUIRE(sim.run() == stop_reason::idle);

  process_id towered = 0;
  int height = 0;
  for (process_id id : {100, 200, 300, 400, 500, 600, 700})
    if (sim.assign_level(id) > height) {
      towered = id;
      height = sim.assign_level(id);
    }
  REQUIRE(height >= 1);

  REQUIRE(sim.inject_leave_intent(towered));
  REQUIRE(sim.run() == stop_reason::idle);
  REQUIRE(sim.quiescent());
  for (int l = 0; l <= 4; ++l) {
    CAPTURE(l);
    CHECK(member_set(sim, l).count(towered) == 0);
    CHECK_NOTHROW(sim.walk(l));
  }
  snapshot snap = sim.take_snapshot();
  CHECK(check_linearization(snap).s == verdict::state::pass);
}

TEST_CASE("an adversarial exit vanishes from every level at once") {
  simulator sim = tower_sim({100, 200, 300, 400, 500, 600, 700});
  REQUIRE(sim.run() == stop_reason::idle);

  process_id towered = 0;
  int height = 0;
  for (process_id id : {200, 300, 400, 500, 600})  // keep ends intact
    if (sim.assign_level(id) > height) {
      towered = id;
      height = sim.assign_level(id);
    }
  REQUIRE(height >= 1);

  REQUIRE(sim.adversarial_exit(towered));
  snapshot snap = sim.take_snapshot();
  int exited_levels = 0;
  for (const auto& n : snap.nodes)
    if (n.id == towered) {
      CHECK(n.phase == lifecycle::exited);
      ++exited_levels;
    }
  CHECK(exited_levels == height + 1);
  for (int l = 0; l <= 4; ++l)
    CHECK(member_set(sim, l).count(towered) == 0);

  // One exit record per occupied level, each tagged with its level.
  std::set<int> exit_levels;
  for (const auto& r : sim.records())
    if (r.kind == rec_kind::exit_ && r.process == towered && r.detail == "adversarial")
      exit_levels.insert(r.level);
  std::set<int> want;
  for (int l = 0; l <= height; ++l)
    want.insert(l);
  CHECK(exit_levels == want);
}
