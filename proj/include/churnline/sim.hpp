#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "churnline/ids.hpp"
#include "churnline/message.hpp"
#include "churnline/protocol.hpp"
#include "churnline/rng.hpp"
#include "churnline/snapshot.hpp"
#include "churnline/trace.hpp"

namespace churnline {

// Discrete-event executor over per-(sender,receiver) FIFO channels. One step
// delivers one message (or fires one enabled leave guard); every delivery,
// send, state change and annotation lands in the trace with its own sequence
// number, so a (config, scenario) pair replays to a byte-identical stream.

enum class sched_policy { fair_random, round_robin, scripted };

inline const char* sched_policy_name(sched_policy p) {
  switch (p) {
    case sched_policy::fair_random: return "fair-random";
    case sched_policy::round_robin: return "round-robin";
    case sched_policy::scripted: return "scripted";
  }
  return "?";
}

enum class stop_reason { running, idle, max_events, predicate, script_stalled };

inline const char* stop_reason_name(stop_reason r) {
  switch (r) {
    case stop_reason::running: return "running";
    case stop_reason::idle: return "idle";
    case stop_reason::max_events: return "max-events";
    case stop_reason::predicate: return "predicate";
    case stop_reason::script_stalled: return "script-stalled";
  }
  return "?";
}

struct sim_config {
  std::uint64_t seed = 0;
  std::vector<process_id> init;            // strictly increasing ordinary ids
  std::uint64_t max_events = 1'000'000;    // trace-record budget
  sched_policy sched = sched_policy::fair_random;
  int max_level = 0;  // 0 = plain line; >0 caps tower height and enables climbing
};

// A deferred environment directive, flushed when the trace reaches `at`
// (or earlier if the system would otherwise go quiet).
struct injection {
  enum class op { join, leave_intent, leave_message, search, adversarial_exit };
  seq_t at = 0;
  op what = op::join;
  process_id id = 0;  // joiner / leaver / search key / exit target
  std::optional<process_id> via;
};

// One schedulable unit: either a node's enabled leave guard or the head of a
// nonempty channel.
struct enabled_item {
  bool guard = false;
  process_id a = 0;  // guard: the node; channel: sender
  process_id b = 0;  // channel: receiver
  message head;      // channel head (meaningful when !guard)
  int level = 0;     // guard: level whose guard fires
};

struct scripted_pick {
  bool guard = false;
  process_id a = 0;
  process_id b = 0;
};

struct discard_rec {
  process_id from = 0;
  process_id to = 0;
  message msg;
  std::string reason;  // "exit-discard" or "to-exited"
};

// All the per-level automata of one process plus tower bookkeeping.
struct multi_node {
  process_id id = 0;
  int assigned = 0;  // top level this process occupies once fully climbed
  std::vector<std::optional<node_state>> levels;
  bool exited = false;  // level-0 exit happened; the process is gone

  node_state* at(int lvl) {
    if (lvl < 0 || lvl >= static_cast<int>(levels.size()) || !levels[lvl])
      return nullptr;
    return &*levels[lvl];
  }
  const node_state* at(int lvl) const {
    return const_cast<multi_node*>(this)->at(lvl);
  }
  int top_joined() const {
    for (int l = static_cast<int>(levels.size()) - 1; l >= 0; --l)
      if (levels[l] && levels[l]->phase == lifecycle::joined)
        return l;
    return -1;
  }
};

class simulator {
 public:
  using pick_policy =
      std::function<std::optional<std::size_t>(const std::vector<enabled_item>&)>;
  using stop_predicate = std::function<bool(const simulator&)>;

  explicit simulator(sim_config cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    validate_init();
    make_sentinel(neg_inf);
    make_sentinel(pos_inf);
    for (process_id id : cfg_.init) {
      multi_node n;
      n.id = id;
      n.assigned = cfg_.max_level > 0 ? assign_level(id) : 0;
      n.levels.resize(static_cast<std::size_t>(n.assigned) + 1);
      nodes_.emplace(id, std::move(n));
      used_ids_.insert(id);
    }
    link_initial_lines();
    emit_initial_records();
  }

  // --- configuration hooks (before run) ---------------------------------

  void schedule(injection inj) {
    pending_.push_back(inj);
    pending_sorted_ = false;
  }
  void set_script(std::vector<scripted_pick> picks) { script_ = std::move(picks); }
  void set_policy(pick_policy p) { policy_ = std::move(p); }

  // --- immediate environment actions -------------------------------------

  // A fresh ordinary process asks to join via `via` (or a seeded-uniform
  // member when absent). Reused or malformed ids are rejected in the trace.
  bool inject_join(process_id id, std::optional<process_id> via = std::nullopt) {
    if (!is_ordinary(id))
      return reject(id, "reject:bad-id");
    if (used_ids_.count(id))
      return reject(id, "reject:duplicate-join");
    auto target = resolve_target(via);
    if (!target)
      return reject(id, "reject:bad-target");
    used_ids_.insert(id);
    multi_node n;
    n.id = id;
    n.assigned = cfg_.max_level > 0 ? assign_level(id) : 0;
    n.levels.resize(static_cast<std::size_t>(n.assigned) + 1);
    n.levels[0] = node_state::joiner(id, 0);
    nodes_.emplace(id, std::move(n));
    emit({next_seq(), rec_kind::inject, *target, std::nullopt, message::join(id),
          via ? "via" : "auto", 0});
    chans_[{env_id, *target}].push_back(message::join(id));
    return true;
  }

  // Flags a settled member as wanting to leave. Applied to its top level as
  // soon as the node is fully joined and not mid-transition.
  bool inject_leave_intent(process_id id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end() || !is_ordinary(id))
      return reject(id, "reject:bad-leave-target");
    if (it->second.exited)
      return reject(id, "reject:already-exited");
    if (deferred_intents_.count(id) || any_leaving(it->second))
      return reject(id, "reject:already-leaving");
    emit({next_seq(), rec_kind::inject, id, std::nullopt, std::nullopt, "leave-intent", 0});
    deferred_intents_.insert(id);
    apply_deferred_intents();
    return true;
  }

  // Drops a fully-formed leave request directly into `via`'s mailbox,
  // modelling a request that appears at an arbitrary process. Line mode
  // only; the leaver must be settled so its frozen right endpoint is stable.
  bool inject_leave_message(process_id id, process_id via) {
    if (cfg_.max_level > 0)
      return reject(id, "reject:leave-via-needs-line-mode");
    auto it = nodes_.find(id);
    if (it == nodes_.end() || !is_ordinary(id) || it->second.exited)
      return reject(id, "reject:bad-leave-target");
    node_state* st = it->second.at(0);
    if (!st || st->phase != lifecycle::joined || st->busy || st->leaving || !st->right)
      return reject(id, "reject:leaver-not-settled");
    auto target = resolve_target(via);
    if (!target)
      return reject(id, "reject:bad-target");
    st->leaving = true;
    st->leave_sent = true;
    emit({next_seq(), rec_kind::inject, via, std::nullopt, message::leave(id, *st->right),
          "leave-direct", 0});
    emit_state(*st);
    chans_[{env_id, via}].push_back(message::leave(id, *st->right));
    return true;
  }

  bool inject_search(process_id key, std::optional<process_id> via = std::nullopt) {
    if (!is_ordinary(key))
      return reject(key, "reject:bad-key");
    auto target = resolve_target(via);
    if (!target)
      return reject(key, "reject:bad-target");
    std::uint64_t token = token_counter_++;
    emit({next_seq(), rec_kind::inject, *target, std::nullopt, message::search(key, token),
          via ? "via" : "auto", 0});
    chans_[{env_id, *target}].push_back(message::search(key, token));
    return true;
  }

  // The process vanishes without running the protocol: all its levels are
  // gone at once and everything queued toward it is lost.
  bool adversarial_exit(process_id id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end() || !is_ordinary(id) || it->second.exited)
      return reject(id, "reject:bad-exit-target");
    multi_node& n = it->second;
    for (int l = 0; l < static_cast<int>(n.levels.size()); ++l) {
      node_state* st = n.at(l);
      if (!st || st->phase == lifecycle::exited)
        continue;
      st->left.reset();
      st->right.reset();
      st->busy = false;
      st->phase = lifecycle::exited;
      emit({next_seq(), rec_kind::exit_, id, std::nullopt, std::nullopt, "adversarial", l});
    }
    n.exited = true;
    drop_incoming_channels(id, std::nullopt);
    deferred_intents_.erase(id);
    return true;
  }

  // --- execution ----------------------------------------------------------

  enum class step_result { progressed, idle, script_stalled };

  step_result step() {
    flush_due_injections();
    std::vector<enabled_item> enabled = enabled_items();
    if (enabled.empty()) {
      if (pending_pos_ < pending_.size()) {
        // Quiet but the scenario has more to say: jump time forward.
        exec_injection(pending_[pending_pos_++]);
        return step_result::progressed;
      }
      return step_result::idle;
    }
    std::optional<std::size_t> idx = pick(enabled);
    if (!idx)
      return step_result::script_stalled;
    execute(enabled[*idx]);
    apply_deferred_intents();
    return step_result::progressed;
  }

  stop_reason run(const stop_predicate& pred = {}) {
    for (;;) {
      if (pred && pred(*this))
        return finish(stop_reason::predicate);
      if (trace_.size() >= cfg_.max_events)
        return finish(stop_reason::max_events);
      switch (step()) {
        case step_result::progressed: break;
        case step_result::idle: return finish(stop_reason::idle);
        case step_result::script_stalled: return finish(stop_reason::script_stalled);
      }
    }
  }

  // Stamps the run outcome into the trace so offline consumers know how the
  // stream ended. Call once, after the final run()/step() of a scenario.
  void seal() {
    std::string d = std::string("stop:") + stop_reason_name(stopped_);
    if (quiescent())
      d += " quiescent";
    if (truncated_)
      d += " truncated";
    if (unfair_)
      d += " unfair";
    emit({next_seq(), rec_kind::annotation, std::nullopt, std::nullopt, std::nullopt, d, 0});
  }

  // --- inspection ---------------------------------------------------------

  const trace& records() const { return trace_; }
  const sim_config& config() const { return cfg_; }
  const std::vector<discard_rec>& discards() const { return discards_; }
  bool unfair() const { return unfair_; }
  bool truncated() const { return truncated_; }
  stop_reason stopped() const { return stopped_; }
  seq_t next_seq() const { return static_cast<seq_t>(trace_.size()); }

  const multi_node* find_node(process_id id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
  }

  bool channels_empty() const { return chans_.empty(); }

  bool quiescent() const {
    if (!chans_.empty() || !deferred_intents_.empty() || pending_pos_ < pending_.size())
      return false;
    for (const auto& [id, n] : nodes_) {
      if (n.exited)
        continue;
      for (const auto& lvl : n.levels) {
        if (!lvl || lvl->phase == lifecycle::exited)
          continue;
        if (lvl->phase == lifecycle::joining || lvl->busy || lvl->leaving)
          return false;
      }
    }
    return true;
  }

  // Joined ids at a level, sentinels included.
  std::vector<process_id> members(int level = 0) const {
    std::vector<process_id> out;
    for (const auto& [id, n] : nodes_) {
      const node_state* st = n.at(level);
      if (st && st->phase == lifecycle::joined)
        out.push_back(id);
    }
    return out;
  }

  // Follows right pointers from the low sentinel; throws on a broken or
  // cyclic chain so tests fail loudly.
  std::vector<process_id> walk(int level = 0) const {
    std::vector<process_id> out;
    process_id cur = neg_inf;
    std::size_t cap = nodes_.size() + 2;
    for (std::size_t hops = 0; hops <= cap; ++hops) {
      out.push_back(cur);
      if (cur == pos_inf)
        return out;
      const multi_node* n = find_node(cur);
      const node_state* st = n ? n->at(level) : nullptr;
      if (!st || st->phase != lifecycle::joined || !st->right)
        throw std::runtime_error("walk: broken right pointer at " + format_id(cur) +
                                 " level " + std::to_string(level));
      cur = *st->right;
    }
    throw std::runtime_error("walk: cycle at level " + std::to_string(level));
  }

  snapshot take_snapshot() const {
    snapshot s;
    s.seq = next_seq();
    s.multi_level = cfg_.max_level > 0;
    for (const auto& [id, n] : nodes_)
      for (const auto& lvl : n.levels)
        if (lvl)
          s.nodes.push_back(*lvl);
    for (const auto& [key, dq] : chans_) {
      snap_chan c;
      c.from = key.first;
      c.to = key.second;
      c.msgs.assign(dq.begin(), dq.end());
      s.chans.push_back(c);
    }
    s.quiescent_flag = quiescent();
    s.truncated = truncated_;
    s.unfair = unfair_;
    return s;
  }

  int assign_level(process_id id) const {
    std::uint64_t h = mix64(cfg_.seed, static_cast<std::uint64_t>(id));
    int lvl = std::countr_one(h);
    return std::min(lvl, cfg_.max_level);
  }

 private:
  using chan_key = std::pair<process_id, process_id>;

  sim_config cfg_;
  rng rng_;
  std::map<process_id, multi_node> nodes_;
  std::map<chan_key, std::deque<message>> chans_;
  trace trace_;
  std::vector<injection> pending_;
  std::size_t pending_pos_ = 0;
  bool pending_sorted_ = true;
  std::set<process_id> deferred_intents_;
  std::set<process_id> used_ids_;
  std::uint64_t token_counter_ = 0;
  std::vector<discard_rec> discards_;
  std::vector<scripted_pick> script_;
  std::size_t script_pos_ = 0;
  pick_policy policy_;
  std::optional<std::tuple<int, process_id, process_id>> rr_last_;
  bool unfair_ = false;
  bool truncated_ = false;
  stop_reason stopped_ = stop_reason::running;

  // --- construction -------------------------------------------------------

  void validate_init() {
    process_id prev = env_id;
    for (process_id id : cfg_.init) {
      if (!is_ordinary(id))
        throw std::invalid_argument("initial member ids must be ordinary: " + format_id(id));
      if (id <= prev)
        throw std::invalid_argument("initial member ids must be strictly increasing");
      prev = id;
    }
    if (cfg_.max_level < 0)
      throw std::invalid_argument("max_level must be non-negative");
  }

  void make_sentinel(process_id id) {
    multi_node n;
    n.id = id;
    n.assigned = cfg_.max_level;
    n.levels.resize(static_cast<std::size_t>(n.assigned) + 1);
    nodes_.emplace(id, std::move(n));
  }

  void link_initial_lines() {
    for (int l = 0; l <= cfg_.max_level; ++l) {
      std::vector<process_id> line;
      line.push_back(neg_inf);
      for (process_id id : cfg_.init)
        if (l <= nodes_.at(id).assigned)
          line.push_back(id);
      line.push_back(pos_inf);
      for (std::size_t i = 0; i < line.size(); ++i) {
        std::optional<process_id> lft =
            i == 0 ? std::nullopt : std::optional<process_id>(line[i - 1]);
        std::optional<process_id> rgt =
            i + 1 == line.size() ? std::nullopt : std::optional<process_id>(line[i + 1]);
        nodes_.at(line[i]).levels[l] = node_state::member(line[i], lft, rgt, l);
      }
    }
  }

  void emit_initial_records() {
    for (auto& [id, n] : nodes_) {
      for (int l = 0; l < static_cast<int>(n.levels.size()); ++l) {
        if (!n.levels[l])
          continue;
        emit({next_seq(), rec_kind::annotation, id, std::nullopt, std::nullopt,
              "init-member", l});
        emit_state(*n.levels[l]);
      }
    }
  }

  // --- trace helpers --------------------------------------------------------

  void emit(trace_record r) {
    r.seq = next_seq();
    trace_.push_back(std::move(r));
  }

  static std::string state_detail(const node_state& st) {
    return "left=" + format_opt_id(st.left) + " right=" + format_opt_id(st.right) +
           " busy=" + (st.busy ? std::string("1") : std::string("0")) +
           " leaving=" + (st.leaving ? std::string("1") : std::string("0")) +
           " lifecycle=" + std::string(1, lifecycle_code(st.phase));
  }

  void emit_state(const node_state& st) {
    emit({next_seq(), rec_kind::state, st.id, std::nullopt, std::nullopt, state_detail(st),
          st.level});
  }

  bool reject(process_id id, const std::string& why) {
    emit({next_seq(), rec_kind::annotation, id, std::nullopt, std::nullopt, why, 0});
    return false;
  }

  // Pinned-field comparison: leave_sent/pending are private bookkeeping and
  // do not get their own state records.
  static bool visible_equal(const node_state& a, const node_state& b) {
    return a.left == b.left && a.right == b.right && a.busy == b.busy &&
           a.leaving == b.leaving && a.phase == b.phase;
  }

  // --- injections -----------------------------------------------------------

  std::optional<process_id> resolve_target(std::optional<process_id> via) {
    if (via) {
      auto it = nodes_.find(*via);
      if (it == nodes_.end() || it->second.exited)
        return std::nullopt;
      const node_state* st = it->second.at(0);
      if (!st || st->phase != lifecycle::joined)
        return std::nullopt;
      return via;
    }
    std::vector<process_id> candidates = members(0);
    if (candidates.empty())
      return std::nullopt;
    return candidates[rng_.below(candidates.size())];
  }

  void flush_due_injections() {
    if (!pending_sorted_) {
      std::stable_sort(pending_.begin() + static_cast<std::ptrdiff_t>(pending_pos_),
                       pending_.end(),
                       [](const injection& a, const injection& b) { return a.at < b.at; });
      pending_sorted_ = true;
    }
    while (pending_pos_ < pending_.size() && pending_[pending_pos_].at <= next_seq())
      exec_injection(pending_[pending_pos_++]);
  }

  void exec_injection(const injection& inj) {
    switch (inj.what) {
      case injection::op::join: inject_join(inj.id, inj.via); break;
      case injection::op::leave_intent: inject_leave_intent(inj.id); break;
      case injection::op::leave_message:
        if (inj.via)
          inject_leave_message(inj.id, *inj.via);
        else
          reject(inj.id, "reject:leave-message-needs-via");
        break;
      case injection::op::search: inject_search(inj.id, inj.via); break;
      case injection::op::adversarial_exit: adversarial_exit(inj.id); break;
    }
  }

  bool any_leaving(const multi_node& n) const {
    for (const auto& lvl : n.levels)
      if (lvl && lvl->leaving && lvl->phase != lifecycle::exited)
        return true;
    return false;
  }

  // A node is settled once every level it will occupy is joined and it is
  // not coordinating or finishing its own transition.
  bool settled(const multi_node& n) const {
    if (n.exited)
      return false;
    int top = cfg_.max_level > 0 ? n.assigned : 0;
    for (int l = 0; l <= top; ++l) {
      const node_state* st = n.at(l);
      if (!st || st->phase != lifecycle::joined)
        return false;
      if (st->busy && !st->pending)
        return false;  // awaiting its own finish message
    }
    return true;
  }

  void apply_deferred_intents() {
    if (deferred_intents_.empty())
      return;
    std::vector<process_id> ready;
    for (process_id id : deferred_intents_) {
      auto it = nodes_.find(id);
      if (it != nodes_.end() && settled(it->second))
        ready.push_back(id);
    }
    for (process_id id : ready) {
      deferred_intents_.erase(id);
      multi_node& n = nodes_.at(id);
      int top = n.top_joined();
      node_state* st = n.at(top);
      st->leaving = true;
      emit({next_seq(), rec_kind::annotation, id, std::nullopt, std::nullopt,
            "leave-intent-applied", top});
      emit_state(*st);
    }
  }

  // --- scheduling -----------------------------------------------------------

  std::vector<enabled_item> enabled_items() const {
    std::vector<enabled_item> out;
    for (const auto& [id, n] : nodes_) {
      if (n.exited)
        continue;
      for (int l = static_cast<int>(n.levels.size()) - 1; l >= 0; --l) {
        const node_state* st = n.at(l);
        if (st && st->leave_enabled()) {
          enabled_item it;
          it.guard = true;
          it.a = id;
          it.level = l;
          out.push_back(it);
          break;
        }
      }
    }
    for (const auto& [key, dq] : chans_) {
      enabled_item it;
      it.guard = false;
      it.a = key.first;
      it.b = key.second;
      it.head = dq.front();
      it.level = dq.front().level;
      out.push_back(it);
    }
    return out;
  }

  static std::tuple<int, process_id, process_id> item_key(const enabled_item& it) {
    return {it.guard ? 0 : 1, it.a, it.guard ? 0 : it.b};
  }

  std::optional<std::size_t> pick(const std::vector<enabled_item>& enabled) {
    switch (cfg_.sched) {
      case sched_policy::fair_random:
        return rng_.below(enabled.size());
      case sched_policy::round_robin: {
        // Enabled items arrive sorted by (kind, a, b); take the first key
        // strictly above the cursor, wrapping to the front.
        std::size_t chosen = 0;
        if (rr_last_) {
          chosen = enabled.size();
          for (std::size_t i = 0; i < enabled.size(); ++i) {
            if (item_key(enabled[i]) > *rr_last_) {
              chosen = i;
              break;
            }
          }
          if (chosen == enabled.size())
            chosen = 0;
        }
        rr_last_ = item_key(enabled[chosen]);
        return chosen;
      }
      case sched_policy::scripted: {
        if (policy_)
          return policy_(enabled);
        if (script_pos_ >= script_.size()) {
          unfair_ = unfair_ || !chans_.empty();
          return std::nullopt;
        }
        const scripted_pick& p = script_[script_pos_++];
        for (std::size_t i = 0; i < enabled.size(); ++i) {
          const enabled_item& it = enabled[i];
          if (it.guard == p.guard && it.a == p.a && (p.guard || it.b == p.b))
            return i;
        }
        unfair_ = true;
        emit({next_seq(), rec_kind::annotation, p.a, p.guard ? std::nullopt
                                                             : std::optional<process_id>(p.b),
              std::nullopt, "unfair-pick", 0});
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  // --- execution core ---------------------------------------------------------

  void execute(const enabled_item& item) {
    if (item.guard) {
      multi_node& n = nodes_.at(item.a);
      node_state* st = n.at(item.level);
      emission e = st->maybe_emit_leave();
      process_emission(n, item.level, std::nullopt, nullptr, std::move(e), env_id);
      return;
    }
    chan_key key{item.a, item.b};
    auto it = chans_.find(key);
    message m = it->second.front();
    it->second.pop_front();
    if (it->second.empty())
      chans_.erase(it);
    emit({next_seq(), rec_kind::deliver, item.b, item.a, m, "", m.level});
    multi_node& n = nodes_.at(item.b);
    if (n.exited) {
      emit({next_seq(), rec_kind::annotation, item.b, item.a, m, "corrupt:deliver-to-exited",
            m.level});
      return;
    }
    if (cfg_.max_level > 0 && m.type == msg_type::search) {
      route_search(n, item.a, m);
      return;
    }
    node_state* st = n.at(m.level);
    if (!st || st->phase == lifecycle::exited) {
      emit({next_seq(), rec_kind::annotation, item.b, item.a, m, "corrupt:no-level-state",
            m.level});
      return;
    }
    node_state before = *st;
    emission e = dispatch(*st, item.a, m);
    bool finished_own_join = false;
    for (const auto& ev : e.events)
      if (ev.detail == "join-5")
        finished_own_join = true;
    process_emission(n, m.level, m, &before, std::move(e), item.a);
    if (finished_own_join && cfg_.max_level > 0 && !n.exited && m.level < n.assigned)
      start_climb(n, m.level + 1);
  }

  static emission dispatch(node_state& st, process_id from, const message& m) {
    switch (m.type) {
      case msg_type::join: return st.on_join_request(*m.id);
      case msg_type::leave: return st.on_leave_request(*m.id, *m.q);
      case msg_type::sua: return st.on_sua(from, m.q);
      case msg_type::sub: return st.on_sub(from);
      case msg_type::tda: return st.on_tda(from);
      case msg_type::tdb: return st.on_tdb(from);
      case msg_type::ftd: return st.on_ftd(from);
      case msg_type::search: return st.on_search(*m.id, m.token);
    }
    return {};
  }

  static bool event_carries_message(const std::string& detail) {
    return detail == "found" || detail == "absent" || detail == "bounce" ||
           detail == "duplicate-join" || detail == "stray-ftd" ||
           detail.rfind("corrupt:", 0) == 0;
  }

  // Writes one atomic action's records: annotations, then sends, then the
  // state delta, then exit handling. `before` is null for guard actions
  // whose only state change is private bookkeeping.
  void process_emission(multi_node& n, int level, std::optional<message> delivered,
                        const node_state* before, emission&& e, process_id stage_from) {
    for (const auto& ev : e.events) {
      emit({next_seq(), rec_kind::annotation, n.id, ev.about,
            event_carries_message(ev.detail) ? delivered : std::nullopt, ev.detail, level});
    }
    for (const auto& ob : e.sends)
      route_send(n.id, ob);
    node_state* st = n.at(level);
    if (before && st && !visible_equal(*before, *st))
      emit_state(*st);
    if (e.exit_now)
      do_exit(n, level, stage_from);
  }

  void route_send(process_id from, const outbound& ob) {
    auto it = nodes_.find(ob.to);
    if (it == nodes_.end()) {
      emit({next_seq(), rec_kind::annotation, from, ob.to, ob.msg, "corrupt:unknown-dest",
            ob.msg.level});
      return;
    }
    if (it->second.exited) {
      emit({next_seq(), rec_kind::send, from, ob.to, ob.msg, "to-exited", ob.msg.level});
      emit({next_seq(), rec_kind::annotation, ob.to, from, ob.msg, "discard", ob.msg.level});
      discards_.push_back({from, ob.to, ob.msg, "to-exited"});
      return;
    }
    emit({next_seq(), rec_kind::send, from, ob.to, ob.msg, ob.detail, ob.msg.level});
    chans_[{from, ob.to}].push_back(ob.msg);
  }

  // Cooperative exit of one level. Level 0 removes the process: its inbox
  // lanes are torn down, with environment-lane cargo re-routed to the
  // handler that released it (the protocol lanes are provably drained by
  // then; anything left is accounted as discarded). Higher levels just hand
  // the leave intent down one level.
  void do_exit(multi_node& n, int level, process_id handler) {
    emit({next_seq(), rec_kind::exit_, n.id, std::nullopt, std::nullopt, "cooperative",
          level});
    if (level > 0) {
      node_state* below = n.at(level - 1);
      if (below && below->phase == lifecycle::joined && !below->leaving) {
        below->leaving = true;
        emit({next_seq(), rec_kind::annotation, n.id, std::nullopt, std::nullopt,
              "leave-intent-applied", level - 1});
        emit_state(*below);
      }
      return;
    }
    n.exited = true;
    deferred_intents_.erase(n.id);
    std::optional<process_id> retarget;
    if (is_ordinary(handler) || is_sentinel(handler)) {
      auto it = nodes_.find(handler);
      if (it != nodes_.end() && !it->second.exited)
        retarget = handler;
    }
    drop_incoming_channels(n.id, retarget);
  }

  // Removes all lanes into `to`. Environment-lane contents are re-routed to
  // `retarget` when given (cooperative exit); everything else is discarded.
  void drop_incoming_channels(process_id to, std::optional<process_id> retarget) {
    for (auto it = chans_.begin(); it != chans_.end();) {
      if (it->first.second != to) {
        ++it;
        continue;
      }
      process_id from = it->first.first;
      for (const message& m : it->second) {
        if (from == env_id && retarget) {
          emit({next_seq(), rec_kind::annotation, *retarget, to, m, "retarget", m.level});
          chans_[{env_id, *retarget}].push_back(m);
        } else {
          emit({next_seq(), rec_kind::annotation, to, from, m, "discard", m.level});
          discards_.push_back({from, to, m, "exit-discard"});
        }
      }
      it = chans_.erase(it);
    }
  }

  // --- tower orchestration -----------------------------------------------------

  // After finishing its level-(k-1) join, a climbing process asks to join
  // level k at the left sentinel. Any live level-k member would do, but only
  // the sentinel is guaranteed to still occupy level k when the request
  // arrives: a towered leave can retire another target's upper levels while
  // the request is in flight, which would strand the climb.
  void start_climb(multi_node& n, int k) {
    n.levels[k] = node_state::joiner(n.id, k);
    const process_id target = neg_inf;
    emit({next_seq(), rec_kind::inject, target, std::nullopt, message::join(n.id, k),
          "climb", k});
    chans_[{env_id, target}].push_back(message::join(n.id, k));
  }

  // Skip-style search: at each hop, descend from the hopping process's top
  // level to the highest level whose pointer moves toward the key without
  // overshooting; fall through to a level-0 gap verdict.
  void route_search(multi_node& n, process_id from, const message& m) {
    process_id key = *m.id;
    if (key == n.id) {
      emit({next_seq(), rec_kind::annotation, n.id, key, m, "found", m.level});
      return;
    }
    int top = n.top_joined();
    if (top < 0) {
      emit({next_seq(), rec_kind::annotation, n.id, from, m, "corrupt:not-ready", m.level});
      return;
    }
    bool rightward = key > n.id;
    for (int l = top; l >= 0; --l) {
      const node_state* st = n.at(l);
      if (!st || st->phase != lifecycle::joined)
        continue;
      std::optional<process_id> ptr = rightward ? st->right : st->left;
      if (ptr && (rightward ? *ptr <= key : *ptr >= key)) {
        outbound ob{*ptr, message::search(key, m.token, l), "forward"};
        route_send(n.id, ob);
        return;
      }
    }
    emit({next_seq(), rec_kind::annotation, n.id, key, m, "absent", m.level});
  }

  stop_reason finish(stop_reason r) {
    stopped_ = r;
    truncated_ = (r == stop_reason::max_events) && !quiescent();
    if (r == stop_reason::script_stalled)
      unfair_ = unfair_ || !chans_.empty();
    return r;
  }
};

}  // namespace churnline
