#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace churnline {

// Process identifiers live on a totally ordered line. The two extremes are
// permanent sentinel anchors; ordinary processes sit strictly between them.
using process_id = std::int64_t;
using seq_t = std::uint64_t;

inline constexpr process_id neg_inf = std::numeric_limits<process_id>::min();
inline constexpr process_id pos_inf = std::numeric_limits<process_id>::max();

// Virtual sender used for environment injections (bootstrap lane). Not a
// process; ordinary ids must be greater than this.
inline constexpr process_id env_id = neg_inf + 1;

inline constexpr bool is_sentinel(process_id p) {
  return p == neg_inf || p == pos_inf;
}

inline constexpr bool is_ordinary(process_id p) {
  return p > env_id && p < pos_inf;
}

inline std::string format_id(process_id p) {
  if (p == neg_inf)
    return "-inf";
  if (p == pos_inf)
    return "+inf";
  if (p == env_id)
    return "env";
  return std::to_string(p);
}

inline std::string format_opt_id(std::optional<process_id> p) {
  return p ? format_id(*p) : "-";
}

inline std::optional<process_id> parse_opt_id(const std::string& s) {
  if (s == "-")
    return std::nullopt;
  if (s == "-inf")
    return neg_inf;
  if (s == "+inf")
    return pos_inf;
  if (s == "env")
    return env_id;
  std::size_t used = 0;
  long long v = std::stoll(s, &used);
  if (used != s.size())
    throw std::invalid_argument("bad process id: " + s);
  return static_cast<process_id>(v);
}

inline process_id parse_id(const std::string& s) {
  auto v = parse_opt_id(s);
  if (!v)
    throw std::invalid_argument("expected process id, got '-'");
  return *v;
}

}  // namespace churnline
