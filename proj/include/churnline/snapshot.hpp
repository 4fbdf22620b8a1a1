#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "churnline/ids.hpp"
#include "churnline/message.hpp"
#include "churnline/protocol.hpp"

namespace churnline {

// Point-in-time dump of the whole system:
//   node <id> left=<id> right=<id> busy=<0|1> leaving=<0|1> lifecycle=<j|J|X>
//   chan <from> <to> <k>: <msg> <msg> ...
// Ids render as decimal with -inf/+inf sentinels; absent pointers as "-".
// Multi-level runs repeat node lines per level with a trailing "level=<k>"
// token and tag channel messages with "@<level>".

struct snap_chan {
  process_id from = 0;
  process_id to = 0;
  std::vector<message> msgs;
};

struct snapshot {
  seq_t seq = 0;
  bool multi_level = false;
  std::vector<node_state> nodes;  // sorted by (id, level)
  std::vector<snap_chan> chans;   // sorted by (from, to); nonempty only

  // In-memory run outcome flags (not part of the dump format; a parsed
  // snapshot derives quiescence from its contents instead).
  bool quiescent_flag = false;
  bool truncated = false;
  bool unfair = false;

  const node_state* find(process_id id, int level = 0) const {
    for (const auto& n : nodes)
      if (n.id == id && n.level == level)
        return &n;
    return nullptr;
  }

  // A dumped system is quiescent when nothing is in flight and every node
  // that wants to leave has already exited.
  bool derived_quiescent() const {
    if (!chans.empty())
      return false;
    for (const auto& n : nodes) {
      if (n.phase == lifecycle::joining)
        return false;
      if (n.phase == lifecycle::joined && n.leaving)
        return false;
    }
    return true;
  }

  std::string dump() const {
    std::ostringstream os;
    for (const auto& n : nodes) {
      os << "node " << format_id(n.id) << " left=" << format_opt_id(n.left)
         << " right=" << format_opt_id(n.right) << " busy=" << (n.busy ? 1 : 0)
         << " leaving=" << (n.leaving ? 1 : 0) << " lifecycle=" << lifecycle_code(n.phase);
      if (multi_level)
        os << " level=" << n.level;
      os << '\n';
    }
    for (const auto& c : chans) {
      os << "chan " << format_id(c.from) << ' ' << format_id(c.to) << ' ' << c.msgs.size()
         << ':';
      for (const auto& m : c.msgs) {
        os << ' ' << m.render();
        if (multi_level)
          os << '@' << m.level;
      }
      os << '\n';
    }
    return os.str();
  }

  static snapshot parse(std::istream& is) {
    snapshot s;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty())
        continue;
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag == "node") {
        std::string idtok, lefttok, righttok, busytok, leavtok, lifetok, leveltok;
        ls >> idtok >> lefttok >> righttok >> busytok >> leavtok >> lifetok;
        auto field = [](const std::string& t, const char* name) {
          auto eq = t.find('=');
          if (eq == std::string::npos || t.compare(0, eq, name) != 0)
            throw std::invalid_argument("bad snapshot field: " + t);
          return t.substr(eq + 1);
        };
        node_state n;
        n.id = parse_id(idtok);
        n.left = parse_opt_id(field(lefttok, "left"));
        n.right = parse_opt_id(field(righttok, "right"));
        n.busy = field(busytok, "busy") == "1";
        n.leaving = field(leavtok, "leaving") == "1";
        std::string lc = field(lifetok, "lifecycle");
        n.phase = lc == "j"   ? lifecycle::joining
                  : lc == "J" ? lifecycle::joined
                              : lifecycle::exited;
        if (ls >> leveltok) {
          n.level = std::stoi(field(leveltok, "level"));
          s.multi_level = true;
        }
        s.nodes.push_back(n);
      } else if (tag == "chan") {
        std::string fromtok, totok, counttok;
        ls >> fromtok >> totok >> counttok;
        if (counttok.empty() || counttok.back() != ':')
          throw std::invalid_argument("bad chan line: " + line);
        snap_chan c;
        c.from = parse_id(fromtok);
        c.to = parse_id(totok);
        std::size_t count = std::stoull(counttok.substr(0, counttok.size() - 1));
        std::string mtok;
        while (ls >> mtok) {
          // A "@<level>" suffix sits after the closing paren of the message.
          int lvl = 0;
          auto at = mtok.rfind('@');
          if (at != std::string::npos &&
              (mtok.find(')') == std::string::npos || at > mtok.find(')'))) {
            lvl = std::stoi(mtok.substr(at + 1));
            mtok = mtok.substr(0, at);
            s.multi_level = true;
          }
          message m = message::parse(mtok);
          m.level = lvl;
          c.msgs.push_back(m);
        }
        if (c.msgs.size() != count)
          throw std::invalid_argument("chan count mismatch: " + line);
        s.chans.push_back(c);
      } else {
        throw std::invalid_argument("unknown snapshot line: " + line);
      }
    }
    s.quiescent_flag = s.derived_quiescent();
    return s;
  }
};

inline void write_snapshot_file(const snapshot& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("cannot open snapshot file for writing: " + path);
  os << s.dump();
}

inline snapshot read_snapshot_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("cannot open snapshot file: " + path);
  return snapshot::parse(is);
}

}  // namespace churnline
