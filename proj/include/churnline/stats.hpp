#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "churnline/tickets.hpp"

namespace churnline {

// Flat key/value summary of one run, rendered one `key<TAB>value` per line
// in insertion order.
struct run_stats {
  std::vector<std::pair<std::string, std::string>> kv;

  void put(const std::string& k, const std::string& v) { kv.emplace_back(k, v); }
  void put(const std::string& k, std::uint64_t v) { put(k, std::to_string(v)); }

  std::string render() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv)
      os << k << '\t' << v << '\n';
    return os.str();
  }
};

inline run_stats compute_stats(const trace_index& ix) {
  run_stats st;
  std::uint64_t n_inject = 0, n_deliver = 0, n_send = 0, n_state = 0, n_exit = 0,
                n_annot = 0;
  for (const auto& r : *ix.records) {
    switch (r.kind) {
      case rec_kind::inject: ++n_inject; break;
      case rec_kind::deliver: ++n_deliver; break;
      case rec_kind::send: ++n_send; break;
      case rec_kind::state: ++n_state; break;
      case rec_kind::exit_: ++n_exit; break;
      case rec_kind::annotation: ++n_annot; break;
    }
  }
  st.put("records", static_cast<std::uint64_t>(ix.records->size()));
  st.put("injects", n_inject);
  st.put("delivers", n_deliver);
  st.put("sends", n_send);
  st.put("state-records", n_state);
  st.put("exits", n_exit);
  st.put("annotations", n_annot);

  std::uint64_t joins = 0, joins_done = 0, leaves = 0, leaves_done = 0, open = 0;
  std::uint64_t bounces = 0;
  std::uint64_t span_min = 0, span_max = 0, span_sum = 0, span_n = 0;
  // sweep for the peak number of simultaneously open requests
  std::vector<std::pair<seq_t, int>> edges;
  for (const auto& t : ix.tickets) {
    bounces += t.bounces;
    bool join = t.kind == msg_type::join;
    (join ? joins : leaves)++;
    if (t.satisfied()) {
      (join ? joins_done : leaves_done)++;
      seq_t span = *t.satisfied_seq - t.inject_seq;
      if (span_n == 0 || span < span_min)
        span_min = span;
      span_max = std::max(span_max, span);
      span_sum += span;
      ++span_n;
      edges.emplace_back(t.inject_seq, +1);
      edges.emplace_back(*t.satisfied_seq + 1, -1);
    } else {
      ++open;
      edges.emplace_back(t.inject_seq, +1);
    }
  }
  st.put("join-requests", joins);
  st.put("join-satisfied", joins_done);
  st.put("leave-requests", leaves);
  st.put("leave-satisfied", leaves_done);
  st.put("requests-open", open);
  st.put("bounces", bounces);
  if (span_n) {
    st.put("span-min", span_min);
    st.put("span-mean", span_sum / span_n);
    st.put("span-max", span_max);
  }
  std::sort(edges.begin(), edges.end());
  int cur = 0, peak = 0;
  for (const auto& [at, d] : edges) {
    cur += d;
    peak = std::max(peak, cur);
  }
  st.put("peak-concurrent-requests", static_cast<std::uint64_t>(peak));

  std::uint64_t searches = 0, resolved = 0, found = 0, hops = 0;
  for (const auto& p : ix.probes) {
    ++searches;
    hops += p.hops;
    if (p.resolved_seq) {
      ++resolved;
      if (p.found.value_or(false))
        ++found;
    }
  }
  st.put("searches", searches);
  st.put("searches-resolved", resolved);
  st.put("searches-found", found);
  st.put("searches-absent", resolved - found);
  st.put("search-hops", hops);

  std::uint64_t dropped = 0;
  for (const auto& r : *ix.records)
    if (r.kind == rec_kind::annotation &&
        (r.detail == "discard" || r.detail.rfind("discard", 0) == 0) && r.msg)
      ++dropped;
  st.put("messages-dropped", dropped);

  st.put("stop", ix.stop_kind.empty() ? std::string("-") : ix.stop_kind);
  st.put("quiescent", static_cast<std::uint64_t>(ix.quiescent ? 1 : 0));
  st.put("truncated", static_cast<std::uint64_t>(ix.truncated ? 1 : 0));
  st.put("unfair", static_cast<std::uint64_t>(ix.unfair ? 1 : 0));
  return st;
}

}  // namespace churnline
