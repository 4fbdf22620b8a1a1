#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <vector>

#include "churnline/scenario.hpp"
#include "churnline/sim.hpp"
#include "churnline/snapshot.hpp"

using namespace churnline;

namespace {

std::vector<std::string> delivered_messages(const trace& t) {
  std::vector<std::string> out;
  for (const auto& r : t)
    if (r.kind == rec_kind::deliver)
      out.push_back(r.msg->render());
  return out;
}

std::vector<std::string> stage_annotations(const trace& t) {
  std::vector<std::string> out;
  for (const auto& r : t)
    if (r.kind == rec_kind::annotation && r.detail != "leave-intent-applied" &&
        (r.detail.rfind("join-", 0) == 0 || r.detail.rfind("leave-", 0) == 0 ||
         r.detail == "su-attach" || r.detail == "td-a-ack"))
      out.push_back(r.detail);
  return out;
}

simulator line_sim(std::vector<process_id> init, std::uint64_t seed = 7) {
  sim_config cfg;
  cfg.seed = seed;
  cfg.init = std::move(init);
  return simulator(cfg);
}

}  // namespace

// Frozen by hand before the engine existed: the exact message sequence of one
// join into an otherwise idle overlay. Any deviation is a protocol change.
TEST_CASE("uncontended join runs the exact eight-delivery sequence") {
  simulator sim = line_sim({10, 20});
  REQUIRE(sim.inject_join(15, 10));
  sim.run();

  CHECK(delivered_messages(sim.records()) ==
        std::vector<std::string>{"join(15)", "sua(20)", "sua(-)", "sub", "sub", "tda", "tdb",
                                 "ftd"});
  CHECK(stage_annotations(sim.records()) ==
        std::vector<std::string>{"join-1.1", "join-1.2", "su-attach", "join-2.1", "join-2.2",
                                 "td-a-ack", "join-4", "join-5"});
  CHECK(sim.quiescent());
  CHECK(sim.walk() == std::vector<process_id>{neg_inf, 10, 15, 20, pos_inf});
}

// The twin oracle: one cooperative leave from a three-member line.
TEST_CASE("uncontended leave runs the exact eight-delivery sequence") {
  simulator sim = line_sim({5, 10, 20});
  REQUIRE(sim.inject_leave_intent(10));
  sim.run();

  CHECK(delivered_messages(sim.records()) ==
        std::vector<std::string>{"leave(10,20)", "sua(-)", "sub", "tda", "tda", "tdb", "tdb",
                                 "ftd"});
  std::vector<std::string> stages = stage_annotations(sim.records());
  CHECK(stages == std::vector<std::string>{"leave-emit", "leave-1", "su-attach", "leave-2",
                                           "leave-3.1", "td-a-ack", "leave-4.1", "leave-4.2",
                                           "leave-5"});
  CHECK(sim.quiescent());
  CHECK(sim.walk() == std::vector<process_id>{neg_inf, 5, 20, pos_inf});

  bool exited = false;
  for (const auto& r : sim.records())
    if (r.kind == rec_kind::exit_ && r.process == 10 && r.detail == "cooperative")
      exited = true;
  CHECK(exited);
}

TEST_CASE("same seed replays to a byte-identical trace") {
  const char* text =
      "init 100 200 300 400\n"
      "at 0 join 150\n"
      "at 0 join 250\n"
      "at 0 leave 300\n"
      "at 0 join 350\n"
      "at 0 search 120\n";
  scenario sc = parse_scenario_text(text);
  sim_config cfg;
  cfg.seed = 99;
  simulator a = build_sim(sc, cfg);
  a.run();
  a.seal();
  simulator b = build_sim(sc, cfg);
  b.run();
  b.seal();
  CHECK(render_trace(a.records()) == render_trace(b.records()));
  CHECK(a.quiescent());
}

TEST_CASE("trace files round-trip exactly") {
  simulator sim = line_sim({10, 20});
  sim.inject_join(15, 10);
  sim.run();
  sim.seal();
  std::string path = "roundtrip_test.trace";
  write_trace_file(sim.records(), path);
  trace back = read_trace_file(path);
  CHECK(render_trace(back) == render_trace(sim.records()));
  std::remove(path.c_str());
}

TEST_CASE("snapshots round-trip exactly") {
  simulator sim = line_sim({10, 20, 30});
  sim.inject_leave_intent(20);
  sim.run();
  snapshot s = sim.take_snapshot();
  std::istringstream is(s.dump());
  snapshot back = snapshot::parse(is);
  CHECK(back.dump() == s.dump());
  CHECK(back.derived_quiescent());
}

TEST_CASE("invalid environment directives are rejected with a note") {
  simulator sim = line_sim({10, 20});
  CHECK_FALSE(sim.inject_join(10));            // id already present
  CHECK_FALSE(sim.inject_join(neg_inf));       // sentinel id
  CHECK_FALSE(sim.inject_leave_intent(77));    // unknown process
  CHECK(sim.inject_leave_intent(10));
  CHECK_FALSE(sim.inject_leave_intent(10));    // already leaving
  sim.run();
  CHECK_FALSE(sim.adversarial_exit(10));       // already gone (cooperatively)

  int rejects = 0;
  for (const auto& r : sim.records())
    if (r.kind == rec_kind::annotation && r.detail.rfind("reject:", 0) == 0)
      ++rejects;
  CHECK(rejects == 5);
}

TEST_CASE("a leave intent arriving mid-join is deferred until the join settles") {
  simulator sim = line_sim({10, 20});
  REQUIRE(sim.inject_join(15, 10));
  REQUIRE(sim.inject_leave_intent(15));  // 15 is still joining
  sim.run();
  CHECK(sim.quiescent());
  CHECK(sim.walk() == std::vector<process_id>{neg_inf, 10, 20, pos_inf});

  // The intent note must appear after the join finished.
  std::optional<seq_t> joined_at, intent_at;
  for (const auto& r : sim.records()) {
    if (r.kind == rec_kind::annotation && r.detail == "join-5")
      joined_at = r.seq;
    if (r.kind == rec_kind::annotation && r.detail == "leave-intent-applied")
      intent_at = r.seq;
  }
  REQUIRE(joined_at);
  REQUIRE(intent_at);
  CHECK(*intent_at > *joined_at);
}

TEST_CASE("scheduled injections flush by trace position, jumping idle gaps") {
  scenario sc = parse_scenario_text(
      "init 10 20\n"
      "at 0 join 15\n"
      "at 5000 join 17\n");
  sim_config cfg;
  cfg.seed = 3;
  simulator sim = build_sim(sc, cfg);
  sim.run();
  CHECK(sim.quiescent());
  CHECK(sim.walk() == std::vector<process_id>{neg_inf, 10, 15, 17, 20, pos_inf});
  CHECK(sim.records().size() < 5000);  // the gap was jumped, not padded
}

TEST_CASE("round-robin scheduling also reaches quiescence") {
  scenario sc = parse_scenario_text(
      "init 10 20 30\n"
      "sched round-robin\n"
      "at 0 join 15\n"
      "at 0 join 25\n"
      "at 0 leave 30\n");
  sim_config cfg;
  simulator sim = build_sim(sc, cfg);
  sim.run();
  CHECK(sim.quiescent());
  CHECK(sim.walk() == std::vector<process_id>{neg_inf, 10, 15, 20, 25, pos_inf});
}

TEST_CASE("an exhausted pick script stops the run and flags unfairness") {
  scenario sc = parse_scenario_text(
      "init 10 20\n"
      "sched scripted\n"
      "at 0 join 15 via 10\n"
      "pick chan env 10\n"
      "pick chan 10 15\n");
  sim_config cfg;
  simulator sim = build_sim(sc, cfg);
  stop_reason r = sim.run();
  CHECK(r == stop_reason::script_stalled);
  CHECK(sim.unfair());
  CHECK_FALSE(sim.quiescent());
}

TEST_CASE("a pick script can drive one join to completion") {
  // The full eight-delivery schedule, spelled out by hand.
  scenario sc = parse_scenario_text(
      "init 10 20\n"
      "sched scripted\n"
      "at 0 join 15 via 10\n"
      "pick chan env 10\n"
      "pick chan 10 15\n"
      "pick chan 15 20\n"
      "pick chan 20 15\n"
      "pick chan 15 10\n"
      "pick chan 10 20\n"
      "pick chan 20 10\n"
      "pick chan 10 15\n");
  sim_config cfg;
  simulator sim = build_sim(sc, cfg);
  sim.run();
  CHECK(sim.quiescent());
  CHECK(sim.walk() == std::vector<process_id>{neg_inf, 10, 15, 20, pos_inf});
  CHECK_FALSE(sim.unfair());
}

TEST_CASE("an event budget truncates the run") {
  scenario sc = parse_scenario_text(
      "init 10 20\n"
      "at 0 join 15\n"
      "stop events 12\n");
  sim_config cfg;
  simulator sim = build_sim(sc, cfg);
  stop_reason r = sim.run();
  CHECK(r == stop_reason::max_events);
  CHECK(sim.truncated());
  CHECK_FALSE(sim.quiescent());
}

TEST_CASE("a message parked at a leaver's inbox is rerouted to the handler") {
  sim_config cfg;
  cfg.seed = 5;
  cfg.init = {10, 20, 30};
  cfg.sched = sched_policy::scripted;
  simulator sim(cfg);

  // Park a search in 20's inbox, then let 20 leave while the scheduler
  // refuses to touch that one channel.
  REQUIRE(sim.inject_search(25, 20));
  REQUIRE(sim.inject_leave_intent(20));
  sim.set_policy([](const std::vector<enabled_item>& items) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!items[i].guard && items[i].a == env_id && items[i].b == 20)
        continue;
      return i;
    }
    return std::nullopt;
  });
  sim.run();
  CHECK(sim.quiescent());
  CHECK(sim.walk() == std::vector<process_id>{neg_inf, 10, 30, pos_inf});

  bool retargeted = false, resolved = false, dropped = false;
  for (const auto& r : sim.records()) {
    if (r.kind != rec_kind::annotation)
      continue;
    if (r.detail == "retarget" && r.process == 10)
      retargeted = true;
    if (r.detail == "absent" && r.msg && r.msg->type == msg_type::search)
      resolved = true;
    if (r.detail == "discard" && r.msg)
      dropped = true;
  }
  CHECK(retargeted);
  CHECK(resolved);
  CHECK_FALSE(dropped);  // rerouting is not loss
}

TEST_CASE("adversarial exit drops inbox traffic and tears the line") {
  simulator sim = line_sim({10, 20, 30});
  REQUIRE(sim.inject_join(25, 20));  // parked in 20's inbox
  REQUIRE(sim.adversarial_exit(20));
  sim.run();

  bool dropped = false;
  for (const auto& r : sim.records())
    if (r.kind == rec_kind::annotation && r.detail == "discard" && r.msg &&
        r.msg->type == msg_type::join)
      dropped = true;
  CHECK(dropped);
  CHECK_FALSE(sim.quiescent());   // the stranded joiner never settles
  CHECK_THROWS(sim.walk());       // the chain through 20 is broken
}

TEST_CASE("concurrent joins into the same gap all settle") {
  simulator sim = line_sim({10, 50}, 21);
  for (process_id id : {20, 30, 40, 15, 45})
    REQUIRE(sim.inject_join(id));
  sim.run();
  CHECK(sim.quiescent());
  CHECK(sim.walk() ==
        std::vector<process_id>{neg_inf, 10, 15, 20, 30, 40, 45, 50, pos_inf});
}

TEST_CASE("every member can leave at once, draining to the sentinels") {
  std::vector<process_id> init;
  for (int i = 1; i <= 12; ++i)
    init.push_back(i * 10);
  simulator sim = line_sim(init, 31);
  for (process_id id : init)
    REQUIRE(sim.inject_leave_intent(id));
  sim.run();
  CHECK(sim.quiescent());
  CHECK(sim.walk() == std::vector<process_id>{neg_inf, pos_inf});
  CHECK(sim.members(0) == std::vector<process_id>{neg_inf, pos_inf});
}
