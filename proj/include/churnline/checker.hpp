#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "churnline/ids.hpp"
#include "churnline/message.hpp"
#include "churnline/snapshot.hpp"
#include "churnline/tickets.hpp"
#include "churnline/trace.hpp"

namespace churnline {

// Trace- and snapshot-level property checks. Every check returns pass, fail
// (with a witness naming the offending seqs), or nyv — "not yet violated" —
// when the run stopped early (event budget, stalled script) so the property's
// eventual claim could not be observed either way.

struct verdict {
  enum class state { pass, fail, nyv };
  std::string property;
  state s = state::pass;
  std::string witness;

  static verdict ok(std::string prop) { return {std::move(prop), state::pass, ""}; }
  static verdict bad(std::string prop, std::string w) {
    return {std::move(prop), state::fail, std::move(w)};
  }
  static verdict open(std::string prop, std::string w) {
    return {std::move(prop), state::nyv, std::move(w)};
  }
};

inline const char* verdict_state_name(verdict::state s) {
  switch (s) {
    case verdict::state::pass: return "pass";
    case verdict::state::fail: return "fail";
    case verdict::state::nyv: return "nyv";
  }
  return "?";
}

struct run_report {
  std::vector<verdict> verdicts;

  bool any_fail() const {
    for (const auto& v : verdicts)
      if (v.s == verdict::state::fail)
        return true;
    return false;
  }

  std::string render() const {
    std::string out;
    for (const auto& v : verdicts) {
      out += v.property;
      out += ' ';
      out += verdict_state_name(v.s);
      if (!v.witness.empty()) {
        out += ' ';
        out += v.witness;
      }
      out += '\n';
    }
    return out;
  }
};

namespace detail {

// The run ended before fairness could deliver everything: budget truncation,
// a stalled or unfair script. Liveness-flavored violations become nyv then.
inline bool stopped_early(const trace_index& ix) {
  return ix.truncated || ix.unfair || ix.stop_kind == "script-stalled";
}

struct tracked_ptrs {
  std::optional<process_id> left;
  std::optional<process_id> right;
};

// Streams trace records to maintain the per-level membership line (rank
// order) and last-known pointers, for distance and stability queries.
struct line_tracker {
  std::map<int, std::set<process_id>> members;
  std::map<std::pair<process_id, int>, tracked_ptrs> ptrs;

  void apply(const trace_record& r) {
    if (r.kind == rec_kind::annotation && r.process) {
      if (r.detail == "init-member")
        members[r.level].insert(*r.process);
      else if (r.detail == "join-2.2" && r.peer)
        members[r.level].insert(*r.peer);
    } else if (r.kind == rec_kind::exit_ && r.process) {
      members[r.level].erase(*r.process);
    } else if (r.kind == rec_kind::state && r.process) {
      tracked_ptrs p;
      std::istringstream ss(r.detail);
      std::string tok;
      while (ss >> tok) {
        if (tok.rfind("left=", 0) == 0)
          p.left = parse_opt_id(tok.substr(5));
        else if (tok.rfind("right=", 0) == 0)
          p.right = parse_opt_id(tok.substr(6));
      }
      ptrs[{*r.process, r.level}] = p;
    }
  }

  // Rank distance from member p to the gap around `key` (key itself is
  // excluded from the endpoints). 0 at or inside the gap; nullopt when p is
  // not currently a member.
  std::optional<long long> gap_distance(int level, process_id p, process_id key) const {
    if (p == key)
      return 0;
    auto mit = members.find(level);
    if (mit == members.end())
      return std::nullopt;
    const std::set<process_id>& m = mit->second;
    auto pit = m.find(p);
    if (pit == m.end())
      return std::nullopt;
    // Gap endpoints around key, excluding key.
    auto succ = m.upper_bound(key);
    if (p >= key && succ != m.end() && *pit >= *succ)
      return static_cast<long long>(std::distance(succ, pit));
    auto lb = m.lower_bound(key);
    if (lb != m.begin()) {
      auto pred = std::prev(lb);
      if (p <= key && *pit <= *pred)
        return static_cast<long long>(std::distance(pit, pred));
    }
    return 0;
  }
};

inline std::string seq_tag(seq_t s) { return "seq " + std::to_string(s); }

}  // namespace detail

// --- snapshot-level checks ---------------------------------------------------

// Every level must read as one strictly increasing chain from the low to the
// high sentinel, covering exactly the joined processes, with mirrored left
// pointers. Only meaningful at rest; otherwise nyv.
inline verdict check_linearization(const snapshot& snap) {
  const char* prop = "linearization";
  if (!snap.quiescent_flag && !snap.derived_quiescent())
    return verdict::open(prop, "snapshot not quiescent");
  std::set<int> levels;
  std::map<std::pair<process_id, int>, const node_state*> by_id;
  std::map<int, std::set<process_id>> joined;
  for (const auto& n : snap.nodes) {
    levels.insert(n.level);
    by_id[{n.id, n.level}] = &n;
    if (n.phase == lifecycle::joined)
      joined[n.level].insert(n.id);
  }
  for (int lvl : levels) {
    std::set<process_id>& want = joined[lvl];
    if (!want.count(neg_inf) || !want.count(pos_inf))
      return verdict::bad(prop, "level " + std::to_string(lvl) + " lost a sentinel");
    std::set<process_id> seen;
    process_id cur = neg_inf;
    while (cur != pos_inf) {
      if (seen.count(cur))
        return verdict::bad(prop, "cycle at " + format_id(cur) + " level " +
                                      std::to_string(lvl));
      seen.insert(cur);
      const node_state* n = by_id.count({cur, lvl}) ? by_id[{cur, lvl}] : nullptr;
      if (!n || n->phase != lifecycle::joined || !n->right)
        return verdict::bad(prop, "broken chain at " + format_id(cur) + " level " +
                                      std::to_string(lvl));
      if (*n->right <= cur)
        return verdict::bad(prop, "order violation at " + format_id(cur) + " level " +
                                      std::to_string(lvl));
      const node_state* r = by_id.count({*n->right, lvl}) ? by_id[{*n->right, lvl}] : nullptr;
      if (!r || !r->left || *r->left != cur)
        return verdict::bad(prop, "unmirrored link " + format_id(cur) + "->" +
                                      format_id(*n->right) + " level " +
                                      std::to_string(lvl));
      cur = *n->right;
    }
    seen.insert(pos_inf);
    if (seen != want) {
      for (process_id id : want)
        if (!seen.count(id))
          return verdict::bad(prop, "member " + format_id(id) + " unreachable at level " +
                                        std::to_string(lvl));
      for (process_id id : seen)
        if (!want.count(id))
          return verdict::bad(prop, "non-member " + format_id(id) + " linked at level " +
                                        std::to_string(lvl));
    }
  }
  return verdict::ok(prop);
}

// Level-0 joined ordinary ids must equal the expected membership.
inline verdict check_membership(const snapshot& snap,
                                const std::vector<process_id>& expected) {
  const char* prop = "membership";
  if (!snap.quiescent_flag && !snap.derived_quiescent())
    return verdict::open(prop, "snapshot not quiescent");
  std::set<process_id> actual;
  for (const auto& n : snap.nodes)
    if (n.level == 0 && n.phase == lifecycle::joined && is_ordinary(n.id))
      actual.insert(n.id);
  std::set<process_id> want(expected.begin(), expected.end());
  if (actual == want)
    return verdict::ok(prop);
  for (process_id id : want)
    if (!actual.count(id))
      return verdict::bad(prop, "missing " + format_id(id));
  for (process_id id : actual)
    if (!want.count(id))
      return verdict::bad(prop, "unexpected " + format_id(id));
  return verdict::bad(prop, "membership mismatch");
}

// Level-0 pointer graph (undirected) must form one connected component over
// the linked, non-exited processes. A process still waiting for its join to
// be accepted has no links yet and is not part of the overlay, so it is not
// required to be reachable mid-transition.
inline verdict detect_partition(const snapshot& snap) {
  const char* prop = "partition";
  std::set<process_id> verts;
  std::map<process_id, std::vector<process_id>> adj;
  for (const auto& n : snap.nodes)
    if (n.level == 0 && n.phase != lifecycle::exited && n.phase != lifecycle::joining)
      verts.insert(n.id);
  for (const auto& n : snap.nodes) {
    if (n.level != 0 || n.phase == lifecycle::exited || n.phase == lifecycle::joining)
      continue;
    for (const auto& p : {n.left, n.right}) {
      if (p && verts.count(*p)) {
        adj[n.id].push_back(*p);
        adj[*p].push_back(n.id);
      }
    }
  }
  if (verts.empty())
    return verdict::ok(prop);
  std::set<process_id> seen;
  std::vector<process_id> stack{neg_inf};
  seen.insert(neg_inf);
  while (!stack.empty()) {
    process_id v = stack.back();
    stack.pop_back();
    for (process_id w : adj[v])
      if (seen.insert(w).second)
        stack.push_back(w);
  }
  for (process_id v : verts)
    if (!seen.count(v))
      return verdict::bad(prop, "process " + format_id(v) + " unreachable from -inf");
  return verdict::ok(prop);
}

// --- trace-level checks --------------------------------------------------------

// No wire message may be lost: exits must not strand anything.
inline verdict check_message_safety(const trace_index& ix) {
  const char* prop = "message-safety";
  for (const auto& r : *ix.records) {
    if (r.kind == rec_kind::annotation && r.detail == "discard" && r.msg)
      return verdict::bad(prop, detail::seq_tag(r.seq) + ": " + r.msg->render() +
                                    " lost at exit of " + format_opt_id(r.process));
  }
  return verdict::ok(prop);
}

// Teardown discipline per FIFO lane: once a teardown is in flight on a lane,
// no transition message may chase it; cargo that slips in behind it must
// still drain; and a lane being (re)opened by a set-up message must be empty.
inline verdict check_td_last(const trace_index& ix) {
  const char* prop = "td-last";
  bool open_window = false;
  std::string open_witness;
  for (const auto& [key, entries] : ix.lanes) {
    const trace& t = *ix.records;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const lane_entry& e = entries[i];
      seq_t es = t[e.rec].seq;
      if (e.msg.is_teardown() && e.delivered) {
        seq_t ds = t[*e.delivered].seq;
        for (std::size_t j = i + 1; j < entries.size(); ++j) {
          const lane_entry& f = entries[j];
          seq_t fs = t[f.rec].seq;
          if (fs >= ds)
            break;
          if (f.msg.is_stage())
            return verdict::bad(prop, detail::seq_tag(fs) + ": " + f.msg.render() +
                                          " chases teardown (" + detail::seq_tag(es) +
                                          ") on lane " + format_id(key.first) + "->" +
                                          format_id(key.second));
          if (!f.delivered) {
            if (f.discarded)
              return verdict::bad(prop, detail::seq_tag(fs) + ": " + f.msg.render() +
                                            " discarded behind teardown on lane " +
                                            format_id(key.first) + "->" +
                                            format_id(key.second));
            if (!detail::stopped_early(ix))
              return verdict::bad(prop, detail::seq_tag(fs) + ": " + f.msg.render() +
                                            " stranded behind teardown on lane " +
                                            format_id(key.first) + "->" +
                                            format_id(key.second));
            open_window = true;
            open_witness = detail::seq_tag(fs) + ": undrained cargo behind teardown";
          }
        }
      }
      if (e.msg.is_setup()) {
        for (std::size_t j = 0; j < i; ++j) {
          const lane_entry& f = entries[j];
          bool resolved =
              (f.delivered && t[*f.delivered].seq < es) || (f.discarded && t[*f.discarded].seq < es);
          if (!resolved)
            return verdict::bad(prop, detail::seq_tag(es) + ": " + e.msg.render() +
                                          " opens lane " + format_id(key.first) + "->" +
                                          format_id(key.second) + " while " +
                                          f.msg.render() + " (" +
                                          detail::seq_tag(t[f.rec].seq) +
                                          ") is still queued");
        }
      }
    }
  }
  if (open_window)
    return verdict::open(prop, open_witness);
  return verdict::ok(prop);
}

// Each directed line link may be mid-transition for at most one request at a
// time: the per-link transitional windows of different tickets must not
// overlap.
inline verdict check_single_transition(const trace_index& ix) {
  const char* prop = "single-transition";
  struct interval {
    seq_t lo, hi;
    int ticket;
  };
  std::map<std::tuple<process_id, process_id, int>, std::vector<interval>> links;
  auto add = [&](std::optional<process_id> a, std::optional<process_id> b, int level,
                 std::optional<seq_t> lo, std::optional<seq_t> hi, int ticket) {
    if (!a || !b || !lo)
      return;
    seq_t h = hi ? *hi : ix.end_seq;
    auto key = std::make_tuple(std::min(*a, *b), std::max(*a, *b), level);
    links[key].push_back({*lo, h, ticket});
  };
  for (std::size_t ti = 0; ti < ix.tickets.size(); ++ti) {
    const request_ticket& tk = ix.tickets[ti];
    int t = static_cast<int>(ti);
    if (tk.kind == msg_type::join) {
      std::optional<process_id> y = tk.handler, x = tk.churn_id, z = tk.attach_proc;
      add(y, x, tk.level, tk.mark("join-1.2"), tk.mark("join-2.2"), t);
      add(x, z, tk.level, tk.mark("join-1.2"), tk.mark("su-attach"), t);
      add(y, z, tk.level, tk.mark("join-2.2"), tk.mark("join-4"), t);
    } else {
      std::optional<process_id> h = tk.handler, x = tk.churn_id, w = tk.attach_proc;
      add(h, w, tk.level, tk.mark("leave-1"), tk.mark("leave-2"), t);
      add(h, x, tk.level, tk.mark("leave-2"), tk.mark("leave-4.2"), t);
      add(x, w, tk.level, tk.mark("su-attach"), tk.mark("leave-4.1"), t);
    }
  }
  for (auto& [key, ivs] : links) {
    std::sort(ivs.begin(), ivs.end(),
              [](const interval& a, const interval& b) { return a.lo < b.lo; });
    for (std::size_t i = 1; i < ivs.size(); ++i) {
      if (ivs[i].ticket != ivs[i - 1].ticket && ivs[i].lo <= ivs[i - 1].hi) {
        const request_ticket& a = ix.tickets[static_cast<std::size_t>(ivs[i - 1].ticket)];
        const request_ticket& b = ix.tickets[static_cast<std::size_t>(ivs[i].ticket)];
        return verdict::bad(
            prop, "link " + format_id(std::get<0>(key)) + "-" + format_id(std::get<1>(key)) +
                      " level " + std::to_string(std::get<2>(key)) +
                      " shared by requests for " + format_id(a.churn_id) + " and " +
                      format_id(b.churn_id) + " (seq " + std::to_string(ivs[i - 1].lo) + "-" +
                      std::to_string(ivs[i - 1].hi) + " vs " + std::to_string(ivs[i].lo) +
                      "-" + std::to_string(ivs[i].hi) + ")");
      }
    }
  }
  return verdict::ok(prop);
}

// Every accepted request finishes all five stages within the trace.
inline verdict check_terminating_transition(const trace_index& ix) {
  const char* prop = "terminating-transition";
  for (const auto& tk : ix.tickets) {
    if (!tk.stage_seq(1))
      continue;  // never accepted; request-level checks handle it
    if (!tk.satisfied()) {
      std::string w = std::string(tk.kind == msg_type::join ? "join " : "leave ") +
                      format_id(tk.churn_id) + " accepted at " +
                      detail::seq_tag(*tk.stage_seq(1)) + " never finished";
      return detail::stopped_early(ix) ? verdict::open(prop, w) : verdict::bad(prop, w);
    }
  }
  return verdict::ok(prop);
}

// System-level progress: whenever requests are pending, some request is
// eventually satisfied (the trace may not end with pending requests unless
// its very last action is a satisfaction).
inline verdict check_request_progress(const trace_index& ix) {
  const char* prop = "request-progress";
  std::vector<const request_ticket*> unsat;
  std::optional<seq_t> last_sat_end;
  for (const auto& tk : ix.tickets) {
    if (tk.satisfied()) {
      if (!last_sat_end || *tk.satisfied_end > *last_sat_end)
        last_sat_end = tk.satisfied_end;
    } else {
      unsat.push_back(&tk);
    }
  }
  if (unsat.empty())
    return verdict::ok(prop);
  if (last_sat_end && *last_sat_end >= ix.end_seq)
    return verdict::ok(prop);  // pending set nonempty only up to a satisfaction
  std::string w = "pending with no later satisfaction:";
  for (const auto* tk : unsat) {
    w += ' ';
    w += (tk->kind == msg_type::join ? "join(" : "leave(") + format_id(tk->churn_id) + ")";
  }
  return detail::stopped_early(ix) ? verdict::open(prop, w) : verdict::bad(prop, w);
}

// Per-request fairness: every individual request is eventually satisfied.
// Deliberately insensitive to the unfair-schedule flag — an unfair schedule
// starving one request while the system hums is exactly the violation.
inline verdict check_fair_request(const trace_index& ix) {
  const char* prop = "fair-request";
  std::string w;
  for (const auto& tk : ix.tickets) {
    if (tk.satisfied())
      continue;
    if (!w.empty())
      w += ' ';
    w += (tk.kind == msg_type::join ? "join(" : "leave(") + format_id(tk.churn_id) + ")";
  }
  if (w.empty())
    return verdict::ok(prop);
  if (ix.truncated)
    return verdict::open(prop, "unsatisfied at truncation: " + w);
  return verdict::bad(prop, "never satisfied: " + w);
}

// Forwarded requests must close in on their place: a hop over a stable link
// from distance d>1 must land strictly closer. Hops inside the immediate
// neighborhood (d<=1) are legitimate handoff bounces.
inline verdict check_message_progress(const trace_index& ix) {
  const char* prop = "message-progress";
  detail::line_tracker lt;
  const trace& t = *ix.records;
  for (const auto& g : ix.groups) {
    const trace_record& head = t[g.head];
    if (head.kind == rec_kind::deliver && head.msg &&
        (head.msg->is_churn() || head.msg->type == msg_type::search) && head.process) {
      process_id key = *head.msg->id;
      int level = head.msg->level;
      process_id p = *head.process;
      for (std::size_t i = g.begin; i < g.end; ++i) {
        const trace_record& r = t[i];
        if (r.kind != rec_kind::send || r.detail != "forward" || !r.msg || !r.peer)
          continue;
        if (r.msg->type != head.msg->type || r.msg->id != head.msg->id ||
            r.msg->level != level)
          continue;  // cross-level descents are judged by their own level
        process_id q = *r.peer;
        // Only hops over settled, mirrored links are held to the metric.
        auto pp = lt.ptrs.find({p, level});
        auto qq = lt.ptrs.find({q, level});
        if (pp == lt.ptrs.end() || qq == lt.ptrs.end())
          continue;
        bool stable = q > p ? (pp->second.right == q && qq->second.left == p)
                            : (pp->second.left == q && qq->second.right == p);
        if (!stable)
          continue;
        auto d0 = lt.gap_distance(level, p, key);
        auto d1 = lt.gap_distance(level, q, key);
        if (!d0 || !d1)
          continue;
        if (*d0 <= 1)
          continue;
        if (*d1 >= *d0)
          return verdict::bad(prop, detail::seq_tag(r.seq) + ": " + r.msg->render() +
                                        " hop " + format_id(p) + "->" + format_id(q) +
                                        " distance " + std::to_string(*d0) + "->" +
                                        std::to_string(*d1));
      }
    }
    for (std::size_t i = g.begin; i < g.end; ++i)
      lt.apply(t[i]);
  }
  return verdict::ok(prop);
}

// Each request is coordinated by at most three processes (handler, churning
// process, displaced neighbor). Whenever one of them acts, its own links must
// bracket the place of churn. Adjacency is judged on links, not member rank:
// a leaver that has been spliced out but not yet torn down still counts as a
// member, so rank distance can exceed one even though the actor holds a link
// straight onto the place.
inline verdict check_locality(const trace_index& ix) {
  const char* prop = "locality";
  struct probe {
    seq_t seq;
    std::size_t ticket;
    process_id proc;
  };
  std::vector<probe> probes;
  for (std::size_t ti = 0; ti < ix.tickets.size(); ++ti) {
    const request_ticket& tk = ix.tickets[ti];
    std::set<process_id> participants;
    for (const auto& [seq, proc] : tk.stage_actions) {
      participants.insert(proc);
      probes.push_back({seq, ti, proc});
    }
    if (tk.handler)
      participants.insert(*tk.handler);
    participants.insert(tk.churn_id);
    if (participants.size() > 3) {
      std::string w = "request for " + format_id(tk.churn_id) + " touched";
      for (process_id p : participants)
        w += ' ' + format_id(p);
      return verdict::bad(prop, w);
    }
  }
  std::sort(probes.begin(), probes.end(),
            [](const probe& a, const probe& b) { return a.seq < b.seq; });
  detail::line_tracker lt;
  std::size_t pi = 0;
  const trace& t = *ix.records;
  for (const auto& g : ix.groups) {
    seq_t head_seq = t[g.head].seq;
    while (pi < probes.size() && probes[pi].seq == head_seq) {
      const probe& pr = probes[pi++];
      const request_ticket& tk = ix.tickets[pr.ticket];
      if (pr.proc != tk.churn_id) {
        auto mit = lt.members.find(tk.level);
        auto it = lt.ptrs.find({pr.proc, tk.level});
        if (mit == lt.members.end() || mit->second.count(pr.proc) == 0 ||
            it == lt.ptrs.end())
          return verdict::bad(prop, detail::seq_tag(pr.seq) + ": participant " +
                                        format_id(pr.proc) + " not a member at level " +
                                        std::to_string(tk.level));
        const detail::tracked_ptrs& lp = it->second;
        bool adjacent =
            (pr.proc < tk.churn_id && lp.right && *lp.right >= tk.churn_id) ||
            (pr.proc > tk.churn_id && lp.left && *lp.left <= tk.churn_id);
        if (!adjacent)
          return verdict::bad(prop, detail::seq_tag(pr.seq) + ": participant " +
                                        format_id(pr.proc) +
                                        " not adjacent to the place of " +
                                        format_id(tk.churn_id));
      }
    }
    for (std::size_t i = g.begin; i < g.end; ++i)
      lt.apply(t[i]);
  }
  return verdict::ok(prop);
}

// Every injected probe resolves to found or absent.
inline verdict check_search_resolution(const trace_index& ix) {
  const char* prop = "search-resolution";
  for (const auto& p : ix.probes) {
    if (!p.resolved_seq) {
      std::string w = "search(" + format_id(p.key) + ") injected at " +
                      detail::seq_tag(p.inject_seq) + " never resolved";
      return detail::stopped_early(ix) ? verdict::open(prop, w) : verdict::bad(prop, w);
    }
  }
  return verdict::ok(prop);
}

// --- aggregation ---------------------------------------------------------------

inline const std::vector<std::string>& all_check_names() {
  static const std::vector<std::string> names = {
      "linearization",    "membership",    "message-safety",   "td-last",
      "single-transition", "terminating-transition", "request-progress",
      "fair-request",     "message-progress", "locality",      "partition",
      "search-resolution"};
  return names;
}

// Runs the selected checks (all when `selected` is empty). Snapshot-based
// properties are skipped without a snapshot; membership needs a reference.
inline run_report run_checks(const trace_index& ix, const snapshot* snap,
                             const std::vector<process_id>* expected_membership,
                             const std::set<std::string>& selected = {}) {
  run_report rep;
  auto want = [&](const std::string& name) {
    return selected.empty() || selected.count(name);
  };
  if (want("linearization") && snap)
    rep.verdicts.push_back(check_linearization(*snap));
  if (want("membership") && snap && expected_membership)
    rep.verdicts.push_back(check_membership(*snap, *expected_membership));
  if (want("message-safety"))
    rep.verdicts.push_back(check_message_safety(ix));
  if (want("td-last"))
    rep.verdicts.push_back(check_td_last(ix));
  if (want("single-transition"))
    rep.verdicts.push_back(check_single_transition(ix));
  if (want("terminating-transition"))
    rep.verdicts.push_back(check_terminating_transition(ix));
  if (want("request-progress"))
    rep.verdicts.push_back(check_request_progress(ix));
  if (want("fair-request"))
    rep.verdicts.push_back(check_fair_request(ix));
  if (want("message-progress"))
    rep.verdicts.push_back(check_message_progress(ix));
  if (want("locality"))
    rep.verdicts.push_back(check_locality(ix));
  if (want("partition") && snap)
    rep.verdicts.push_back(detect_partition(*snap));
  if (want("search-resolution"))
    rep.verdicts.push_back(check_search_resolution(ix));
  return rep;
}

}  // namespace churnline
