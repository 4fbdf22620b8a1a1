#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "churnline/ids.hpp"
#include "churnline/message.hpp"

namespace churnline {

// One trace line per record:
//   seq  kind  process  peer  message  detail  level
// tab-separated, absent fields rendered as "-". Byte-stable so that replay
// equality can be asserted on whole files.
enum class rec_kind { inject, deliver, send, state, exit_, annotation };

inline const char* rec_kind_name(rec_kind k) {
  switch (k) {
    case rec_kind::inject: return "inject";
    case rec_kind::deliver: return "deliver";
    case rec_kind::send: return "send";
    case rec_kind::state: return "state";
    case rec_kind::exit_: return "exit";
    case rec_kind::annotation: return "annotation";
  }
  return "?";
}

inline rec_kind parse_rec_kind(const std::string& s) {
  if (s == "inject") return rec_kind::inject;
  if (s == "deliver") return rec_kind::deliver;
  if (s == "send") return rec_kind::send;
  if (s == "state") return rec_kind::state;
  if (s == "exit") return rec_kind::exit_;
  if (s == "annotation") return rec_kind::annotation;
  throw std::invalid_argument("unknown record kind: " + s);
}

struct trace_record {
  seq_t seq = 0;
  rec_kind kind = rec_kind::annotation;
  std::optional<process_id> process;  // acting / receiving process
  std::optional<process_id> peer;     // sender, destination, or subject id
  std::optional<message> msg;
  std::string detail;  // "-" when empty
  int level = 0;

  std::string render() const {
    std::ostringstream os;
    os << seq << '\t' << rec_kind_name(kind) << '\t' << format_opt_id(process) << '\t'
       << format_opt_id(peer) << '\t' << (msg ? msg->render() : std::string("-")) << '\t'
       << (detail.empty() ? std::string("-") : detail) << '\t' << level;
    return os.str();
  }

  static trace_record parse(const std::string& line) {
    std::vector<std::string> f;
    std::string cur;
    for (char c : line) {
      if (c == '\t') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    f.push_back(cur);
    if (f.size() != 7)
      throw std::invalid_argument("trace line needs 7 fields: " + line);
    trace_record r;
    r.seq = std::stoull(f[0]);
    r.kind = parse_rec_kind(f[1]);
    r.process = parse_opt_id(f[2]);
    r.peer = parse_opt_id(f[3]);
    if (f[4] != "-") {
      r.msg = message::parse(f[4]);
    }
    r.detail = f[5] == "-" ? "" : f[5];
    r.level = std::stoi(f[6]);
    if (r.msg)
      r.msg->level = r.level;
    return r;
  }
};

using trace = std::vector<trace_record>;

inline std::string render_trace(const trace& t) {
  std::string out;
  for (const auto& r : t) {
    out += r.render();
    out += '\n';
  }
  return out;
}

inline void write_trace_file(const trace& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("cannot open trace file for writing: " + path);
  os << render_trace(t);
}

inline trace parse_trace(std::istream& is) {
  trace t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty())
      continue;
    t.push_back(trace_record::parse(line));
  }
  return t;
}

inline trace read_trace_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("cannot open trace file: " + path);
  return parse_trace(is);
}

}  // namespace churnline
