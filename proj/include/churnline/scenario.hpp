#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "churnline/ids.hpp"
#include "churnline/rng.hpp"
#include "churnline/sim.hpp"

namespace churnline {

// Text scenarios drive a run. One directive per line, '#' comments:
//   init <id> <id> ...
//   sched <fair-random|round-robin|scripted>
//   at <seq> join <id> [via <id>]
//   at <seq> leave <id>                    (intent at the node)
//   at <seq> leave <id> via <id>           (request dropped into <id>'s inbox)
//   at <seq> search <key> [via <id>]
//   at <seq> adversarial-exit <id>
//   pick chan <from> <to> | pick guard <id>  (scripted schedule, in order)
//   stop events <n> | stop quiescence

struct scenario_error : std::runtime_error {
  std::size_t line_no;
  scenario_error(std::size_t line_no, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + what),
        line_no(line_no) {}
};

struct scenario {
  std::vector<process_id> init;
  std::optional<sched_policy> sched;
  std::vector<injection> injections;
  std::vector<scripted_pick> picks;
  std::optional<std::uint64_t> stop_events;
};

inline std::optional<sched_policy> parse_sched_policy(const std::string& s) {
  if (s == "fair-random")
    return sched_policy::fair_random;
  if (s == "round-robin")
    return sched_policy::round_robin;
  if (s == "scripted")
    return sched_policy::scripted;
  return std::nullopt;
}

inline scenario parse_scenario(std::istream& is) {
  scenario sc;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos)
      line = line.substr(0, hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t)
      tok.push_back(t);
    if (tok.empty())
      continue;
    auto need = [&](std::size_t n) {
      if (tok.size() != n)
        throw scenario_error(line_no, "expected " + std::to_string(n) + " tokens, got " +
                                          std::to_string(tok.size()));
    };
    auto id_at = [&](std::size_t i) -> process_id {
      try {
        return parse_id(tok.at(i));
      } catch (const std::exception& e) {
        throw scenario_error(line_no, e.what());
      }
    };
    try {
      if (tok[0] == "init") {
        if (tok.size() < 2)
          throw scenario_error(line_no, "init needs at least one id");
        for (std::size_t i = 1; i < tok.size(); ++i)
          sc.init.push_back(id_at(i));
      } else if (tok[0] == "sched") {
        need(2);
        auto p = parse_sched_policy(tok[1]);
        if (!p)
          throw scenario_error(line_no, "unknown scheduler: " + tok[1]);
        sc.sched = p;
      } else if (tok[0] == "at") {
        if (tok.size() < 3)
          throw scenario_error(line_no, "at needs a seq and a directive");
        injection inj;
        inj.at = std::stoull(tok[1]);
        const std::string& what = tok[2];
        if (what == "join" || what == "search") {
          if (tok.size() != 4 && !(tok.size() == 6 && tok[4] == "via"))
            throw scenario_error(line_no, what + " takes <id> [via <id>]");
          inj.what = what == "join" ? injection::op::join : injection::op::search;
          inj.id = id_at(3);
          if (tok.size() == 6)
            inj.via = id_at(5);
        } else if (what == "leave") {
          if (tok.size() == 4) {
            inj.what = injection::op::leave_intent;
            inj.id = id_at(3);
          } else if (tok.size() == 6 && tok[4] == "via") {
            inj.what = injection::op::leave_message;
            inj.id = id_at(3);
            inj.via = id_at(5);
          } else {
            throw scenario_error(line_no, "leave takes <id> [via <id>]");
          }
        } else if (what == "adversarial-exit") {
          need(4);
          inj.what = injection::op::adversarial_exit;
          inj.id = id_at(3);
        } else {
          throw scenario_error(line_no, "unknown directive: " + what);
        }
        sc.injections.push_back(inj);
      } else if (tok[0] == "pick") {
        scripted_pick p;
        if (tok.size() == 4 && tok[1] == "chan") {
          p.guard = false;
          p.a = id_at(2);
          p.b = id_at(3);
        } else if (tok.size() == 3 && tok[1] == "guard") {
          p.guard = true;
          p.a = id_at(2);
        } else {
          throw scenario_error(line_no, "pick takes 'chan <from> <to>' or 'guard <id>'");
        }
        sc.picks.push_back(p);
      } else if (tok[0] == "stop") {
        if (tok.size() == 2 && tok[1] == "quiescence") {
          sc.stop_events.reset();
        } else if (tok.size() == 3 && tok[1] == "events") {
          sc.stop_events = std::stoull(tok[2]);
        } else {
          throw scenario_error(line_no, "stop takes 'quiescence' or 'events <n>'");
        }
      } else {
        throw scenario_error(line_no, "unknown keyword: " + tok[0]);
      }
    } catch (const scenario_error&) {
      throw;
    } catch (const std::exception& e) {
      throw scenario_error(line_no, e.what());
    }
  }
  return sc;
}

inline scenario parse_scenario_text(const std::string& text) {
  std::istringstream is(text);
  return parse_scenario(is);
}

inline scenario read_scenario_file(const std::string& path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot open scenario file: " + path);
  return parse_scenario(is);
}

inline std::string render_scenario(const scenario& sc) {
  std::ostringstream os;
  if (!sc.init.empty()) {
    os << "init";
    for (process_id id : sc.init)
      os << ' ' << format_id(id);
    os << '\n';
  }
  if (sc.sched)
    os << "sched " << sched_policy_name(*sc.sched) << '\n';
  if (sc.stop_events)
    os << "stop events " << *sc.stop_events << '\n';
  for (const auto& inj : sc.injections) {
    os << "at " << inj.at << ' ';
    switch (inj.what) {
      case injection::op::join:
        os << "join " << format_id(inj.id);
        if (inj.via)
          os << " via " << format_id(*inj.via);
        break;
      case injection::op::leave_intent:
        os << "leave " << format_id(inj.id);
        break;
      case injection::op::leave_message:
        os << "leave " << format_id(inj.id) << " via " << format_opt_id(inj.via);
        break;
      case injection::op::search:
        os << "search " << format_id(inj.id);
        if (inj.via)
          os << " via " << format_id(*inj.via);
        break;
      case injection::op::adversarial_exit:
        os << "adversarial-exit " << format_id(inj.id);
        break;
    }
    os << '\n';
  }
  for (const auto& p : sc.picks) {
    if (p.guard)
      os << "pick guard " << format_id(p.a) << '\n';
    else
      os << "pick chan " << format_id(p.a) << ' ' << format_id(p.b) << '\n';
  }
  return os.str();
}

// Sequential interpretation of the scenario with every request assumed
// satisfied: what the membership should be once the run is quiescent.
inline std::vector<process_id> reference_membership(const scenario& sc) {
  std::set<process_id> members(sc.init.begin(), sc.init.end());
  std::set<process_id> used(sc.init.begin(), sc.init.end());
  for (const auto& inj : sc.injections) {
    switch (inj.what) {
      case injection::op::join:
        if (is_ordinary(inj.id) && used.insert(inj.id).second)
          members.insert(inj.id);
        break;
      case injection::op::leave_intent:
      case injection::op::leave_message:
      case injection::op::adversarial_exit:
        members.erase(inj.id);
        break;
      case injection::op::search:
        break;
    }
  }
  return {members.begin(), members.end()};
}

// Builds a runnable simulator from a scenario. CLI-level settings come in
// through `base` (seed, default scheduler, event budget, tower height); the
// scenario's own sched/stop/init win where present.
inline simulator build_sim(const scenario& sc, sim_config base) {
  base.init = sc.init;
  if (sc.sched)
    base.sched = *sc.sched;
  if (sc.stop_events)
    base.max_events = *sc.stop_events;
  simulator sim(base);
  for (const auto& inj : sc.injections)
    sim.schedule(inj);
  if (!sc.picks.empty())
    sim.set_script(sc.picks);
  return sim;
}

// Seeded random mixed workload: `size` directives split between joins,
// leave intents, and searches by the given weights. Fresh join ids are drawn
// from [1, 10^9]; leaves target processes currently alive in the reference
// interpretation. Without a concurrency cap everything lands at seq 0; a cap
// of k spaces each successive batch of k churn directives 500 records apart,
// giving earlier requests room to finish first.
inline scenario generate_workload(std::uint64_t seed, std::size_t size, double join_rate,
                                  double leave_rate, double search_rate,
                                  std::optional<std::size_t> concurrency_cap,
                                  std::vector<process_id> init) {
  if (join_rate < 0 || leave_rate < 0 || search_rate < 0 ||
      join_rate + leave_rate + search_rate <= 0)
    throw std::invalid_argument("workload rates must be non-negative and sum positive");
  scenario sc;
  sc.init = std::move(init);
  rng r(seed);
  std::set<process_id> used(sc.init.begin(), sc.init.end());
  std::vector<process_id> alive(sc.init.begin(), sc.init.end());
  auto wj = static_cast<std::uint64_t>(join_rate * 1000);
  auto wl = static_cast<std::uint64_t>(leave_rate * 1000);
  auto ws = static_cast<std::uint64_t>(search_rate * 1000);
  seq_t wave_at = 0;
  std::size_t churn_in_wave = 0;
  auto fresh_id = [&]() {
    for (;;) {
      process_id id = 1 + static_cast<process_id>(r.below(1'000'000'000));
      if (used.insert(id).second)
        return id;
    }
  };
  for (std::size_t i = 0; i < size; ++i) {
    std::uint64_t roll = r.below(wj + wl + ws);
    injection inj;
    inj.at = wave_at;
    bool churn = true;
    if (roll < wj || (roll < wj + wl && alive.empty())) {
      inj.what = injection::op::join;
      inj.id = fresh_id();
      alive.push_back(inj.id);
    } else if (roll < wj + wl) {
      inj.what = injection::op::leave_intent;
      std::size_t pick = r.below(alive.size());
      inj.id = alive[pick];
      alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pick));
    } else {
      inj.what = injection::op::search;
      inj.id = 1 + static_cast<process_id>(r.below(1'000'000'000));
      churn = false;
    }
    sc.injections.push_back(inj);
    if (churn && concurrency_cap && *concurrency_cap > 0) {
      if (++churn_in_wave >= *concurrency_cap) {
        churn_in_wave = 0;
        wave_at += 500;
      }
    }
  }
  return sc;
}

}  // namespace churnline
