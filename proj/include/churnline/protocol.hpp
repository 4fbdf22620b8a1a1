#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "churnline/ids.hpp"
#include "churnline/message.hpp"

namespace churnline {

// Per-node automaton for cooperative churn on a sorted doubly-linked line.
//
// A churn request is coordinated by its handler: the nearest process whose id
// is smaller than the place of churn. Acceptance makes the handler busy until
// the five-stage transition (set up a/b, tear down a/b, finish) completes, so
// each neighborhood serializes its transitions. Requests that arrive at a
// busy, leaving, or non-handler process are forwarded toward the place.

enum class lifecycle { joining, joined, exited };

inline char lifecycle_code(lifecycle p) {
  switch (p) {
    case lifecycle::joining: return 'j';
    case lifecycle::joined: return 'J';
    case lifecycle::exited: return 'X';
  }
  return '?';
}

// What the handler is currently coordinating; cleared when it sends ftd.
struct pending_op {
  msg_type kind = msg_type::join;  // join or leave
  process_id churn_id = 0;

  bool operator==(const pending_op&) const = default;
};

struct outbound {
  process_id to = 0;
  message msg;
  std::string detail;  // "" for protocol sends, "forward" for routed requests
};

// Semantic marker surfaced to the trace (stage labels, bounces, resolutions,
// corruption flags). `about` names the churning/subject process when the
// acting node knows it locally.
struct proto_event {
  std::string detail;
  std::optional<process_id> about;
};

struct emission {
  std::vector<outbound> sends;
  std::vector<proto_event> events;
  bool exit_now = false;

  emission& send(process_id to, message m, std::string detail = "") {
    sends.push_back({to, std::move(m), std::move(detail)});
    return *this;
  }
  emission& event(std::string detail, std::optional<process_id> about = std::nullopt) {
    events.push_back({std::move(detail), about});
    return *this;
  }
};

struct node_state {
  process_id id = 0;
  int level = 0;
  std::optional<process_id> left;
  std::optional<process_id> right;
  bool leaving = false;     // set by the environment, never cleared
  bool busy = false;        // coordinating a transition (handler/joiner)
  bool leave_sent = false;  // this node's own leave request has been emitted
  lifecycle phase = lifecycle::joined;
  std::optional<pending_op> pending;

  bool operator==(const node_state&) const = default;

  // A process already in the overlay. Sentinels pass one-sided pointers;
  // ordinary members need both, strictly ordered around the id.
  static node_state member(process_id id, std::optional<process_id> left,
                           std::optional<process_id> right, int level = 0) {
    if (id != neg_inf && !left)
      throw std::invalid_argument("member needs a left neighbor");
    if (id != pos_inf && !right)
      throw std::invalid_argument("member needs a right neighbor");
    if (id == neg_inf && left)
      throw std::invalid_argument("-inf has no left neighbor");
    if (id == pos_inf && right)
      throw std::invalid_argument("+inf has no right neighbor");
    if ((left && *left >= id) || (right && *right <= id))
      throw std::invalid_argument("neighbor pointers must satisfy left < id < right");
    node_state n;
    n.id = id;
    n.level = level;
    n.left = left;
    n.right = right;
    return n;
  }

  // A process that has asked to join but is not linked yet. It is busy and
  // ignores everything until the handler's first sua arrives.
  static node_state joiner(process_id id, int level = 0) {
    if (!is_ordinary(id))
      throw std::invalid_argument("only ordinary ids can join");
    node_state n;
    n.id = id;
    n.level = level;
    n.phase = lifecycle::joining;
    n.busy = true;
    return n;
  }

  bool is_sentinel_node() const { return is_sentinel(id); }

  // --- request handling ------------------------------------------------

  emission on_join_request(process_id req_id) {
    emission out;
    if (phase != lifecycle::joined)
      return out.event("corrupt:not-ready", req_id);
    if (req_id == id || (left && req_id == *left) || (right && req_id == *right))
      return out.event("duplicate-join", req_id);
    if (!busy && !leaving && right && id < req_id && req_id < *right) {
      pending = pending_op{msg_type::join, req_id};
      busy = true;
      out.send(req_id, message::sua(*right, level));
      return out.event("join-1.1", req_id);
    }
    std::optional<process_id> dest = req_id < id ? left : right;
    if (!dest)
      return out.event("corrupt:no-route", req_id);
    out.send(*dest, message::join(req_id, level), "forward");
    return out.event("bounce", req_id);
  }

  emission on_leave_request(process_id req_id, process_id q) {
    emission out;
    if (phase != lifecycle::joined)
      return out.event("corrupt:not-ready", req_id);
    if (!busy && !leaving && right && req_id == *right) {
      pending = pending_op{msg_type::leave, req_id};
      busy = true;
      out.send(q, message::sua(std::nullopt, level));
      return out.event("leave-1", req_id);
    }
    // Route toward the handler: the leaver's left neighbor.
    std::optional<process_id> dest = req_id <= id ? left : right;
    if (!dest)
      return out.event("corrupt:no-route", req_id);
    out.send(*dest, message::leave(req_id, q, level), "forward");
    return out.event("bounce", req_id);
  }

  // --- five-stage transition ------------------------------------------

  emission on_sua(process_id from, std::optional<process_id> payload) {
    emission out;
    if (payload) {
      // This node is the accepted joiner: adopt the place's endpoints and
      // introduce itself to its new right neighbor.
      if (phase != lifecycle::joining)
        return out.event("corrupt:stray-sua", from);
      right = payload;
      left = from;
      phase = lifecycle::joined;  // linked, still busy until ftd
      out.send(*right, message::sua(std::nullopt, level));
      return out.event("join-1.2", id);
    }
    // New left neighbor announcing itself (joiner introduction or the
    // handler of a leave bridging across the leaver).
    if (phase != lifecycle::joined)
      return out.event("corrupt:stray-sua", from);
    left = from;
    out.send(from, message::sub(level));
    return out.event("su-attach", from);
  }

  emission on_sub(process_id from) {
    emission out;
    if (phase != lifecycle::joined)
      return out.event("corrupt:stray-sub", from);
    if (!right || from != *right) {
      // Handler cut-over: adopt the new right neighbor and begin tearing
      // down the superseded link.
      if (!pending || !right)
        return out.event("corrupt:stray-sub", from);
      out.send(*right, message::tda(level));
      right = from;
      return out.event(pending->kind == msg_type::join ? "join-2.2" : "leave-2",
                       pending->churn_id);
    }
    // Joiner: confirmation went around the place; relay it to the handler.
    if (!left)
      return out.event("corrupt:no-left", from);
    out.send(*left, message::sub(level));
    return out.event("join-2.1", id);
  }

  emission on_tda(process_id from) {
    emission out;
    if (phase != lifecycle::joined)
      return out.event("corrupt:stray-tda", from);
    if (!left || from != *left) {
      // Former neighbor tearing down the link into us: acknowledge.
      out.send(from, message::tdb(level));
      return out.event("td-a-ack", from);
    }
    // Leaver: our own teardown reached us; extend it to the right side.
    if (!right)
      return out.event("corrupt:no-right", from);
    out.send(*right, message::tda(level));
    return out.event("leave-3.1", id);
  }

  emission on_tdb(process_id from) {
    emission out;
    if (phase != lifecycle::joined)
      return out.event("corrupt:stray-tdb", from);
    if (!right || from != *right) {
      // Handler: teardown acknowledged all around; release the churning
      // process and become available again.
      if (!pending)
        return out.event("corrupt:tdb-without-pending", from);
      process_id churn = pending->churn_id;
      out.send(churn, message::ftd(level));
      out.event(pending->kind == msg_type::join ? "join-4" : "leave-4.2", churn);
      busy = false;
      pending.reset();
      return out;
    }
    // Leaver: right side torn down; relay to the handler side.
    if (!left)
      return out.event("corrupt:no-left", from);
    out.send(*left, message::tdb(level));
    return out.event("leave-4.1", id);
  }

  emission on_ftd(process_id from) {
    emission out;
    (void)from;
    if (phase != lifecycle::joined)
      return out.event("corrupt:stray-ftd");
    if (leaving) {
      left.reset();
      right.reset();
      phase = lifecycle::exited;
      out.exit_now = true;
      return out.event("leave-5", id);
    }
    if (busy && !pending) {
      busy = false;
      return out.event("join-5", id);
    }
    busy = false;
    return out.event("stray-ftd", id);
  }

  // --- environment-driven guard ---------------------------------------

  bool leave_enabled() const {
    return phase == lifecycle::joined && !is_sentinel_node() && leaving && !busy &&
           !leave_sent && left.has_value() && right.has_value();
  }

  // Weakly-fair guarded action: once leaving and idle, emit the leave
  // request toward the handler, freezing the right endpoint into it.
  emission maybe_emit_leave() {
    emission out;
    if (!leave_enabled())
      return out;
    leave_sent = true;
    out.send(*left, message::leave(id, *right, level));
    return out.event("leave-emit", id);
  }

  // --- read-only search -------------------------------------------------

  emission on_search(process_id key, std::uint64_t token) {
    emission out;
    if (phase != lifecycle::joined)
      return out.event("corrupt:not-ready", key);
    if (key == id)
      return out.event("found", key);
    if (right && id < key && key < *right)
      return out.event("absent", key);
    std::optional<process_id> dest = key < id ? left : right;
    if (!dest)
      return out.event("corrupt:no-route", key);
    out.send(*dest, message::search(key, token, level), "forward");
    return out;
  }
};

}  // namespace churnline
