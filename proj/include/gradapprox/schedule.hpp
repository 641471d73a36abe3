#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradapprox/approx.hpp"

namespace gradapprox {

// Periodic (layer, batch phase) -> method grid. Layer indices count
// schedulable conv layers in network definition order (the first conv layer
// of a network is never schedulable and is not indexed here).
struct Schedule {
  int period = 1;
  int num_layers = 0;
  std::vector<ApproxMethod> grid;  // num_layers * period, default Full

  Schedule() = default;
  Schedule(int period_, int num_layers_)
      : period(period_), num_layers(num_layers_),
        grid(static_cast<std::size_t>(period_) * num_layers_) {
    if (period_ < 1 || num_layers_ < 0)
      throw std::invalid_argument("schedule: period must be >= 1");
  }

  ApproxMethod &cell(int layer, int phase) {
    return grid[static_cast<std::size_t>(layer) * period + phase];
  }
  const ApproxMethod &cell(int layer, int phase) const {
    return grid[static_cast<std::size_t>(layer) * period + phase];
  }
};

inline ApproxMethod method_for(const Schedule &s, int layer, long step) {
  if (layer < 0 || layer >= s.num_layers)
    throw std::out_of_range("schedule: layer " + std::to_string(layer) +
                            " out of range [0, " + std::to_string(s.num_layers) + ")");
  return s.cell(layer, static_cast<int>(step % s.period));
}

inline double approx_fraction(const Schedule &s) {
  if (s.grid.empty()) return 0.0;
  std::size_t nonfull = 0;
  for (const auto &m : s.grid)
    if (!m.is_full()) ++nonfull;
  return static_cast<double>(nonfull) / static_cast<double>(s.grid.size());
}

// Built-ins, 25 percent application rate:
//   schedule1: every fourth layer starting from index 1, every batch.
//   schedule2: every other layer for every other batch, alternating which
//              half of the layers so the fraction is exactly 1/4.
//   schedule3: every layer, every fourth batch.
inline Schedule builtin_schedule(const std::string &name, int num_layers,
                                 const ApproxMethod &method) {
  if (num_layers < 1)
    throw std::invalid_argument("builtin_schedule: num_layers must be >= 1");
  if (name == "schedule1") {
    Schedule s(1, num_layers);
    for (int l = 1; l < num_layers; l += 4) s.cell(l, 0) = method;
    return s;
  }
  if (name == "schedule2") {
    Schedule s(4, num_layers);
    for (int l = 0; l < num_layers; ++l) s.cell(l, l % 2 == 1 ? 1 : 3) = method;
    return s;
  }
  if (name == "schedule3") {
    Schedule s(4, num_layers);
    for (int l = 0; l < num_layers; ++l) s.cell(l, 0) = method;
    return s;
  }
  throw std::invalid_argument("unknown built-in schedule: " + name);
}

inline bool is_builtin_schedule(const std::string &name) {
  return name == "schedule1" || name == "schedule2" || name == "schedule3";
}

class ScheduleParseError : public std::runtime_error {
 public:
  ScheduleParseError(int line, const std::string &msg)
      : std::runtime_error("schedule line " + std::to_string(line) + ": " + msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Grammar: first line "period <P>"; then "layer <i> phase <p> <method>" with
// method in {full, zero, random, topk}; '#' starts a comment; omitted cells
// default to full.
inline Schedule parse_schedule(const std::string &text, int num_layers) {
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  int period = -1;
  Schedule s;
  std::vector<bool> assigned;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    std::string line = hash == std::string::npos ? raw : raw.substr(0, hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (period < 0) {
      if (word != "period")
        throw ScheduleParseError(lineno, "expected 'period <P>' first, got '" + word + "'");
      if (!(ls >> period) || period < 1)
        throw ScheduleParseError(lineno, "period must be a positive integer");
      s = Schedule(period, num_layers);
      assigned.assign(s.grid.size(), false);
      continue;
    }
    if (word != "layer")
      throw ScheduleParseError(lineno, "expected 'layer <i> phase <p> <method>', got '" + word + "'");
    int layer, phase;
    std::string kw, method_name;
    if (!(ls >> layer >> kw >> phase >> method_name) || kw != "phase")
      throw ScheduleParseError(lineno, "expected 'layer <i> phase <p> <method>'");
    if (layer < 0 || layer >= num_layers)
      throw ScheduleParseError(lineno, "layer " + std::to_string(layer) +
                                           " out of range [0, " + std::to_string(num_layers) + ")");
    if (phase < 0 || phase >= period)
      throw ScheduleParseError(lineno, "phase " + std::to_string(phase) +
                                           " out of range [0, " + std::to_string(period) + ")");
    std::string extra;
    if (ls >> extra) throw ScheduleParseError(lineno, "trailing tokens after method");
    ApproxMethod::Kind kind;
    try {
      kind = parse_method_kind(method_name);
    } catch (const std::invalid_argument &e) {
      throw ScheduleParseError(lineno, e.what());
    }
    const std::size_t idx = static_cast<std::size_t>(layer) * period + phase;
    if (assigned[idx])
      throw ScheduleParseError(lineno, "cell (layer " + std::to_string(layer) + ", phase " +
                                           std::to_string(phase) + ") assigned twice");
    assigned[idx] = true;
    ApproxMethod m;
    m.kind = kind;
    s.grid[idx] = m;
  }
  if (period < 0) throw ScheduleParseError(lineno, "missing 'period <P>' line");
  return s;
}

inline std::string emit_schedule(const Schedule &s) {
  std::ostringstream out;
  out << "period " << s.period << "\n";
  for (int l = 0; l < s.num_layers; ++l)
    for (int p = 0; p < s.period; ++p)
      if (!s.cell(l, p).is_full())
        out << "layer " << l << " phase " << p << " " << to_string(s.cell(l, p).kind) << "\n";
  return out.str();
}

}  // namespace gradapprox
