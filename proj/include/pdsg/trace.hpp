#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pdsg/program.hpp"

namespace pdsg {

using ScgId = std::uint32_t;
using FeatureVector = std::vector<std::int64_t>;

struct EnterScg {
  ScgId scg = 0;
  FeatureVector features;
  bool operator==(const EnterScg &) const = default;
};
struct ExitScg {
  ScgId scg = 0;
  bool operator==(const ExitScg &) const = default;
};
struct Call {
  CallsiteId callsite = 0;
  FuncId callee = 0;
  bool operator==(const Call &) const = default;
};
struct Return {
  FuncId function = 0;
  bool operator==(const Return &) const = default;
};

using TraceEvent = std::variant<EnterScg, ExitScg, Call, Return>;

struct Trace {
  std::vector<TraceEvent> events;
  /// Index of an injected attack event, when the trace was mutated.
  std::optional<std::size_t> attack_index;

  bool operator==(const Trace &) const = default;
  /// Callsite ids of the Call events, in order.
  std::vector<CallsiteId> call_sequence() const;
};

class TraceFormatError : public std::runtime_error {
public:
  TraceFormatError(std::size_t line, const std::string &message);
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Line format, one event per line:
///   E <scg-id> <f1,f2,...|->   X <scg-id>   C <callsite-id> <callee>   R <function>
/// `#` starts a comment; `# attack <index>` records an injected event.
std::string format_trace(const Program &p, const Trace &t);
Trace parse_trace(const Program &p, std::string_view text);

void write_trace_file(const Program &p, const Trace &t, const std::filesystem::path &path);
Trace read_trace_file(const Program &p, const std::filesystem::path &path);
/// Reads every `*.trace` file in a directory, sorted by file name.
std::vector<Trace> read_trace_dir(const Program &p, const std::filesystem::path &dir);
void write_trace_dir(const Program &p, const std::vector<Trace> &traces,
                     const std::filesystem::path &dir);

/// Checks stack discipline, Enter/Exit nesting, callee membership and
/// callsite ownership. Returns a description of the first violation.
std::optional<std::string> validate_trace(const Program &p, const Trace &t);

} // namespace pdsg
