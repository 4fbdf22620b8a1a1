#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "churnline/ids.hpp"
#include "churnline/message.hpp"
#include "churnline/trace.hpp"

namespace churnline {

// Offline reconstruction of what a trace did: records grouped into atomic
// actions, sends matched to deliveries per FIFO lane, and churn requests
// rebuilt into tickets by following their messages.

struct trace_error : std::runtime_error {
  explicit trace_error(const std::string& what) : std::runtime_error(what) {}
};

// One atomic action: the triggering record plus everything it caused.
struct action_group {
  std::size_t head = 0;   // record index of the trigger
  std::size_t begin = 0;  // [begin, end) record range
  std::size_t end = 0;
  int ticket = -1;        // owning ticket index, -1 for none
};

// A send-like record (send / inject / retarget) on one FIFO lane.
struct lane_entry {
  std::size_t rec = 0;                  // record index of the send side
  message msg;
  int ticket = -1;
  std::optional<std::size_t> delivered;  // record index of the matched deliver
  std::optional<std::size_t> discarded;  // record index of the discard note
};

// The life of one churn request.
struct request_ticket {
  msg_type kind = msg_type::join;
  process_id churn_id = 0;
  int level = 0;
  seq_t inject_seq = 0;
  std::optional<process_id> handler;
  // The process that attached to its new left neighbor ("su-attach"): the
  // displaced right neighbor of a join, or the leaver's right for a leave.
  std::optional<process_id> attach_proc;
  // First occurrence of each stage label, keyed by annotation detail
  // (e.g. "join-1.1", "su-attach", "leave-4.2"), valued by group-head seq.
  std::map<std::string, seq_t> marks;
  // Every stage-message action executed for this ticket: (head seq, process).
  std::vector<std::pair<seq_t, process_id>> stage_actions;
  std::uint64_t bounces = 0;
  std::optional<seq_t> satisfied_seq;  // head seq of the finishing action
  std::optional<seq_t> satisfied_end;  // last seq of the finishing action group

  bool satisfied() const { return satisfied_seq.has_value(); }

  std::optional<seq_t> mark(const std::string& name) const {
    auto it = marks.find(name);
    return it == marks.end() ? std::nullopt : std::optional<seq_t>(it->second);
  }

  // Canonical five-stage anchors (1-based): acceptance, cut-over,
  // teardown-ack, release, finish.
  std::optional<seq_t> stage_seq(int stage) const {
    bool join = kind == msg_type::join;
    switch (stage) {
      case 1: return mark(join ? "join-1.1" : "leave-1");
      case 2: return mark(join ? "join-2.2" : "leave-2");
      case 3: return mark("td-a-ack");
      case 4: return mark(join ? "join-4" : "leave-4.2");
      case 5: return mark(join ? "join-5" : "leave-5");
    }
    return std::nullopt;
  }
};

// One read-only probe.
struct search_probe {
  std::uint64_t token = 0;
  process_id key = 0;
  seq_t inject_seq = 0;
  std::optional<seq_t> resolved_seq;
  std::optional<bool> found;
  std::uint64_t hops = 0;
};

struct trace_index {
  const trace* records = nullptr;
  std::vector<action_group> groups;
  std::vector<int> group_of;  // record index -> group index
  std::map<std::pair<process_id, process_id>, std::vector<lane_entry>> lanes;
  std::vector<std::optional<std::size_t>> send_of_deliver;  // record -> record
  std::vector<request_ticket> tickets;
  // (join|leave, id, level) -> index; one node may join and later leave, so
  // the request kind is part of the identity.
  std::map<std::tuple<msg_type, process_id, int>, int> ticket_by_churn;
  std::vector<search_probe> probes;
  std::map<std::uint64_t, std::size_t> probe_by_token;
  // Run-outcome markers ("stop:<reason>[ quiescent][ truncated][ unfair]")
  // left by simulator::seal().
  std::string stop_kind;
  bool quiescent = false;
  bool truncated = false;
  bool unfair = false;
  // Last record seq that is not a run marker; 0 for empty traces.
  seq_t end_seq = 0;

  const request_ticket* ticket_for(msg_type kind, process_id id, int level = 0) const {
    auto it = ticket_by_churn.find({kind, id, level});
    return it == ticket_by_churn.end() ? nullptr : &tickets[static_cast<std::size_t>(it->second)];
  }
};

namespace detail {

inline bool starts_with(const std::string& s, const char* prefix) {
  return s.rfind(prefix, 0) == 0;
}

inline bool is_stage_label(const std::string& d) {
  return d == "join-1.1" || d == "join-1.2" || d == "join-2.1" || d == "join-2.2" ||
         d == "join-4" || d == "join-5" || d == "leave-1" || d == "leave-2" ||
         d == "leave-3.1" || d == "leave-4.1" || d == "leave-4.2" || d == "leave-5" ||
         d == "su-attach" || d == "td-a-ack";
}

inline bool is_group_head(const trace_record& r) {
  switch (r.kind) {
    case rec_kind::inject:
    case rec_kind::deliver:
      return true;
    case rec_kind::exit_:
      return r.detail == "adversarial";
    case rec_kind::annotation:
      return r.detail == "leave-emit" || r.detail == "leave-intent-applied" ||
             r.detail == "init-member" || r.detail == "unfair-pick" ||
             starts_with(r.detail, "reject:") || starts_with(r.detail, "stop:");
    default:
      return false;
  }
}

}  // namespace detail

// Rebuilds groups, lane matching, tickets and probes from a raw trace.
// Throws trace_error on streams that violate the emitter's contract.
inline trace_index build_index(const trace& t) {
  using detail::is_group_head;
  using detail::is_stage_label;
  using detail::starts_with;

  trace_index ix;
  ix.records = &t;
  ix.group_of.assign(t.size(), -1);
  ix.send_of_deliver.assign(t.size(), std::nullopt);

  // Per-lane queue of not-yet-consumed sends: indices into ix.lanes[key].
  std::map<std::pair<process_id, process_id>, std::deque<std::size_t>> open;

  auto ensure_ticket = [&](msg_type kind, process_id id, int level,
                           seq_t inject_seq) -> int {
    auto key = std::make_tuple(kind, id, level);
    auto it = ix.ticket_by_churn.find(key);
    if (it != ix.ticket_by_churn.end())
      return it->second;
    request_ticket tk;
    tk.kind = kind;
    tk.churn_id = id;
    tk.level = level;
    tk.inject_seq = inject_seq;
    int idx = static_cast<int>(ix.tickets.size());
    ix.tickets.push_back(tk);
    ix.ticket_by_churn.emplace(key, idx);
    return idx;
  };

  auto churn_ticket_of = [&](const message& m, seq_t seq) -> int {
    if (m.type == msg_type::join)
      return ensure_ticket(msg_type::join, *m.id, m.level, seq);
    if (m.type == msg_type::leave)
      return ensure_ticket(msg_type::leave, *m.id, m.level, seq);
    return -1;
  };

  auto push_send = [&](std::size_t rec, process_id from, process_id to, const message& m,
                       int ticket) {
    auto key = std::make_pair(from, to);
    lane_entry e;
    e.rec = rec;
    e.msg = m;
    e.ticket = ticket;
    ix.lanes[key].push_back(e);
    open[key].push_back(ix.lanes[key].size() - 1);
  };

  int cur_group = -1;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const trace_record& r = t[i];
    if (is_group_head(r) || cur_group < 0) {
      action_group g;
      g.head = i;
      g.begin = i;
      g.end = i + 1;
      ix.groups.push_back(g);
      cur_group = static_cast<int>(ix.groups.size()) - 1;
    } else {
      ix.groups[static_cast<std::size_t>(cur_group)].end = i + 1;
    }
    ix.group_of[i] = cur_group;
    action_group& g = ix.groups[static_cast<std::size_t>(cur_group)];

    switch (r.kind) {
      case rec_kind::inject: {
        if (!r.msg) {
          // A leave intent: the ticket is created when the intent lands on
          // its level ("leave-intent-applied"), since deferral can move it.
          break;
        }
        if (!r.process)
          throw trace_error("inject without target at seq " + std::to_string(r.seq));
        int ticket = churn_ticket_of(*r.msg, r.seq);
        if (r.msg->type == msg_type::search) {
          search_probe p;
          p.token = r.msg->token;
          p.key = *r.msg->id;
          p.inject_seq = r.seq;
          ix.probe_by_token[p.token] = ix.probes.size();
          ix.probes.push_back(p);
        }
        g.ticket = ticket;
        push_send(i, env_id, *r.process, *r.msg, ticket);
        break;
      }
      case rec_kind::deliver: {
        if (!r.process || !r.peer || !r.msg)
          throw trace_error("malformed deliver at seq " + std::to_string(r.seq));
        auto key = std::make_pair(*r.peer, *r.process);
        auto oit = open.find(key);
        if (oit == open.end() || oit->second.empty())
          throw trace_error("deliver without matching send at seq " + std::to_string(r.seq));
        std::size_t lane_idx = oit->second.front();
        oit->second.pop_front();
        lane_entry& e = ix.lanes[key][lane_idx];
        if (!(e.msg == *r.msg))
          throw trace_error("FIFO mismatch on lane at seq " + std::to_string(r.seq));
        e.delivered = i;
        ix.send_of_deliver[i] = e.rec;
        g.ticket = e.ticket;
        break;
      }
      case rec_kind::send: {
        if (!r.process || !r.peer || !r.msg)
          throw trace_error("malformed send at seq " + std::to_string(r.seq));
        int ticket = r.msg->is_churn() ? churn_ticket_of(*r.msg, r.seq) : g.ticket;
        if (r.msg->type == msg_type::search && r.detail == "forward") {
          auto pit = ix.probe_by_token.find(r.msg->token);
          if (pit != ix.probe_by_token.end())
            ix.probes[pit->second].hops++;
        }
        if (r.detail == "to-exited")
          break;  // never entered a lane; the paired discard note follows
        push_send(i, *r.process, *r.peer, *r.msg, ticket);
        break;
      }
      case rec_kind::state:
      case rec_kind::exit_:
        break;
      case rec_kind::annotation: {
        const std::string& d = r.detail;
        if (starts_with(d, "stop:")) {
          auto space = d.find(' ');
          ix.stop_kind = d.substr(5, space == std::string::npos ? std::string::npos
                                                                : space - 5);
          ix.quiescent = d.find(" quiescent") != std::string::npos;
          ix.truncated = d.find(" truncated") != std::string::npos;
          ix.unfair = d.find(" unfair") != std::string::npos;
          break;
        }
        if (d == "retarget") {
          // Environment-lane cargo moved from a leaver's inbox to its
          // handler: consume from the old lane, append to the new one.
          if (!r.process || !r.peer || !r.msg)
            throw trace_error("malformed retarget at seq " + std::to_string(r.seq));
          auto key = std::make_pair(env_id, *r.peer);
          auto oit = open.find(key);
          if (oit == open.end() || oit->second.empty())
            throw trace_error("retarget without queued message at seq " +
                              std::to_string(r.seq));
          std::size_t lane_idx = oit->second.front();
          oit->second.pop_front();
          lane_entry& e = ix.lanes[key][lane_idx];
          e.discarded = i;  // closed on this lane; reborn on the next one
          push_send(i, env_id, *r.process, *r.msg, e.ticket);
          break;
        }
        if (d == "discard") {
          if (!r.process || !r.peer || !r.msg)
            throw trace_error("malformed discard at seq " + std::to_string(r.seq));
          // Channel drains pop their lane front; dropped sends ("drop-send"
          // partner records) never queued anything.
          auto key = std::make_pair(*r.peer, *r.process);
          auto oit = open.find(key);
          if (oit != open.end() && !oit->second.empty()) {
            std::size_t lane_idx = oit->second.front();
            const lane_entry& probe = ix.lanes[key][lane_idx];
            if (probe.msg == *r.msg) {
              open[key].pop_front();
              ix.lanes[key][lane_idx].discarded = i;
              break;
            }
          }
          break;
        }
        if (d == "leave-intent-applied") {
          if (!r.process)
            throw trace_error("malformed intent note at seq " + std::to_string(r.seq));
          int idx = ensure_ticket(msg_type::leave, *r.process, r.level, r.seq);
          g.ticket = idx;
          break;
        }
        if (d == "leave-emit") {
          if (r.process)
            g.ticket = ensure_ticket(msg_type::leave, *r.process, r.level, r.seq);
          break;
        }
        if (d == "bounce") {
          if (g.ticket >= 0)
            ix.tickets[static_cast<std::size_t>(g.ticket)].bounces++;
          break;
        }
        if (d == "found" || d == "absent") {
          if (r.msg && r.msg->type == msg_type::search) {
            auto pit = ix.probe_by_token.find(r.msg->token);
            if (pit != ix.probe_by_token.end()) {
              search_probe& p = ix.probes[pit->second];
              p.resolved_seq = r.seq;
              p.found = (d == "found");
            }
          }
          break;
        }
        if (is_stage_label(d)) {
          if (g.ticket < 0)
            break;  // stage note outside any reconstructed request
          request_ticket& tk = ix.tickets[static_cast<std::size_t>(g.ticket)];
          const trace_record& head = t[ix.groups[static_cast<std::size_t>(cur_group)].head];
          seq_t head_seq = head.seq;
          tk.marks.emplace(d, head_seq);
          if (d == "join-1.1" || d == "leave-1")
            tk.handler = r.process;
          if (d == "su-attach")
            tk.attach_proc = r.process;
          if (r.process)
            tk.stage_actions.emplace_back(head_seq, *r.process);
          if (d == "join-5" || d == "leave-5") {
            tk.satisfied_seq = head_seq;
            tk.satisfied_end = head_seq;  // widened after the pass
          }
          break;
        }
        break;
      }
    }
  }

  // Widen each satisfied ticket to the end of its finishing group and find
  // the last non-marker seq.
  for (auto& g : ix.groups) {
    if (g.ticket < 0)
      continue;
    request_ticket& tk = ix.tickets[static_cast<std::size_t>(g.ticket)];
    if (tk.satisfied_seq && t[g.head].seq == *tk.satisfied_seq)
      tk.satisfied_end = t[g.end - 1].seq;
  }
  for (std::size_t i = t.size(); i-- > 0;) {
    const trace_record& r = t[i];
    if (r.kind == rec_kind::annotation && detail::starts_with(r.detail, "stop:"))
      continue;
    ix.end_seq = r.seq;
    break;
  }
  return ix;
}

}  // namespace churnline
