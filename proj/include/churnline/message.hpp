#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "churnline/ids.hpp"

namespace churnline {

// The eight wire messages. join/leave are churn requests that may be
// forwarded arbitrarily far; sua/sub/tda/tdb/ftd are the five-stage
// transition messages exchanged only inside a neighborhood; search is a
// read-only key probe.
enum class msg_type { join, leave, sua, sub, tda, tdb, ftd, search };

inline const char* msg_type_name(msg_type t) {
  switch (t) {
    case msg_type::join: return "join";
    case msg_type::leave: return "leave";
    case msg_type::sua: return "sua";
    case msg_type::sub: return "sub";
    case msg_type::tda: return "tda";
    case msg_type::tdb: return "tdb";
    case msg_type::ftd: return "ftd";
    case msg_type::search: return "search";
  }
  return "?";
}

struct message {
  msg_type type = msg_type::sub;
  // join: joiner id; leave: leaver id; search: probed key.
  std::optional<process_id> id;
  // leave: the leaver's right neighbor frozen at emission; sua: the
  // handler's old right (empty in the second set-up substage and in leaves).
  std::optional<process_id> q;
  // search only: correlates the probe with its resolution.
  std::uint64_t token = 0;
  // overlay level this message belongs to (0 in plain line mode).
  int level = 0;

  static message join(process_id who, int lvl = 0) {
    message m;
    m.type = msg_type::join;
    m.id = who;
    m.level = lvl;
    return m;
  }
  static message leave(process_id who, process_id right_of_who, int lvl = 0) {
    message m;
    m.type = msg_type::leave;
    m.id = who;
    m.q = right_of_who;
    m.level = lvl;
    return m;
  }
  static message sua(std::optional<process_id> payload, int lvl = 0) {
    message m;
    m.type = msg_type::sua;
    m.q = payload;
    m.level = lvl;
    return m;
  }
  static message sub(int lvl = 0) {
    message m;
    m.type = msg_type::sub;
    m.level = lvl;
    return m;
  }
  static message tda(int lvl = 0) {
    message m;
    m.type = msg_type::tda;
    m.level = lvl;
    return m;
  }
  static message tdb(int lvl = 0) {
    message m;
    m.type = msg_type::tdb;
    m.level = lvl;
    return m;
  }
  static message ftd(int lvl = 0) {
    message m;
    m.type = msg_type::ftd;
    m.level = lvl;
    return m;
  }
  static message search(process_id key, std::uint64_t token, int lvl = 0) {
    message m;
    m.type = msg_type::search;
    m.id = key;
    m.token = token;
    m.level = lvl;
    return m;
  }

  bool operator==(const message&) const = default;

  bool is_churn() const { return type == msg_type::join || type == msg_type::leave; }
  bool is_stage() const {
    return type == msg_type::sua || type == msg_type::sub || type == msg_type::tda ||
           type == msg_type::tdb || type == msg_type::ftd;
  }
  bool is_teardown() const { return type == msg_type::tda || type == msg_type::tdb; }
  bool is_setup() const { return type == msg_type::sua || type == msg_type::sub; }

  std::string render() const {
    switch (type) {
      case msg_type::join:
        return "join(" + format_opt_id(id) + ")";
      case msg_type::leave:
        return "leave(" + format_opt_id(id) + "," + format_opt_id(q) + ")";
      case msg_type::sua:
        return "sua(" + format_opt_id(q) + ")";
      case msg_type::sub:
        return "sub";
      case msg_type::tda:
        return "tda";
      case msg_type::tdb:
        return "tdb";
      case msg_type::ftd:
        return "ftd";
      case msg_type::search:
        return "search(" + format_opt_id(id) + "," + std::to_string(token) + ")";
    }
    return "?";
  }

  // Parses the render() format. The level comes from the surrounding trace
  // record, so callers patch it in afterwards.
  static message parse(const std::string& s) {
    auto open = s.find('(');
    std::string name = open == std::string::npos ? s : s.substr(0, open);
    std::vector<std::string> args;
    if (open != std::string::npos) {
      if (s.back() != ')')
        throw std::invalid_argument("bad message: " + s);
      std::string inner = s.substr(open + 1, s.size() - open - 2);
      std::stringstream ss(inner);
      std::string part;
      while (std::getline(ss, part, ','))
        args.push_back(part);
    }
    message m;
    if (name == "join") {
      m.type = msg_type::join;
      m.id = parse_id(args.at(0));
    } else if (name == "leave") {
      m.type = msg_type::leave;
      m.id = parse_id(args.at(0));
      m.q = parse_id(args.at(1));
    } else if (name == "sua") {
      m.type = msg_type::sua;
      m.q = parse_opt_id(args.at(0));
    } else if (name == "sub") {
      m.type = msg_type::sub;
    } else if (name == "tda") {
      m.type = msg_type::tda;
    } else if (name == "tdb") {
      m.type = msg_type::tdb;
    } else if (name == "ftd") {
      m.type = msg_type::ftd;
    } else if (name == "search") {
      m.type = msg_type::search;
      m.id = parse_id(args.at(0));
      m.token = std::stoull(args.at(1));
    } else {
      throw std::invalid_argument("unknown message: " + s);
    }
    return m;
  }
};

}  // namespace churnline
