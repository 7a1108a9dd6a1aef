#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace pdsg {

using FuncId = std::uint32_t;
using BlockId = std::uint32_t;
using CallsiteId = std::uint32_t;

/// Synthetic callsite that invokes the program entry function.
inline constexpr CallsiteId kRootCallsite = 0;
inline constexpr std::uint32_t kUnbounded = std::numeric_limits<std::uint32_t>::max();

/// Malformed IR document. `location()` is a path such as
/// `functions[2].blocks[1].succ[0]`.
class IrError : public std::runtime_error {
public:
  IrError(std::string location, const std::string &message);
  const std::string &location() const noexcept { return location_; }

private:
  std::string location_;
};

enum class CallKind { direct, indirect };

struct Callsite {
  CallsiteId id = 0;
  std::vector<FuncId> callees; // sorted, unique, non-empty
  CallKind kind = CallKind::direct;

  bool operator==(const Callsite &) const = default;
};

struct BasicBlock {
  std::string name;
  std::optional<Callsite> callsite;
  std::vector<BlockId> successors;   // document order
  std::vector<BlockId> predecessors; // ascending

  bool operator==(const BasicBlock &) const = default;
};

struct Function {
  std::string name;
  std::vector<BasicBlock> blocks;
  BlockId entry_block = 0;
  std::vector<BlockId> exit_blocks; // ascending
  std::uint64_t size_bytes = 1;
  std::uint64_t gadget_count = 0;
  std::vector<std::string> params;
  /// Optional categorical domain per parameter, used by the workload
  /// generator. Empty means "synthesize a default domain".
  std::vector<std::vector<std::int64_t>> param_values;

  bool is_leaf() const;
  bool is_exit(BlockId b) const;
  /// Callsites in block order.
  std::vector<CallsiteId> callsites() const;

  bool operator==(const Function &) const = default;
};

struct CallsiteLocation {
  FuncId function = 0;
  BlockId block = 0;
  bool operator==(const CallsiteLocation &) const = default;
};

/// Validated, callsite-normalized program IR. Treat as immutable once
/// `finalize()` has run; every loader and generator returns a finalized
/// program.
struct Program {
  std::string name;
  std::vector<Function> functions;
  FuncId entry = 0;
  std::uint64_t page_size = 4096;

  /// Validates structural invariants and rebuilds the lookup tables.
  /// Throws IrError on violation.
  void finalize();

  std::optional<FuncId> find_function(std::string_view fname) const;
  const Function &function(FuncId f) const { return functions.at(f); }
  const std::string &function_name(FuncId f) const { return functions.at(f).name; }

  /// The callsite with the given id; the root callsite is synthesized.
  /// Returns nullptr for unknown ids.
  const Callsite *callsite(CallsiteId id) const;
  /// Owning function/block of an in-program callsite (nullopt for root
  /// and for unknown ids).
  std::optional<CallsiteLocation> location_of(CallsiteId id) const;
  /// Every callsite id, root included, ascending.
  const std::vector<CallsiteId> &callsite_ids() const { return callsite_ids_; }
  /// For each function, the callsites that may invoke it (root included).
  const std::vector<CallsiteId> &callers_of(FuncId f) const { return callers_.at(f); }

  bool operator==(const Program &other) const;

private:
  Callsite root_;
  std::vector<std::optional<CallsiteLocation>> sites_;
  std::vector<CallsiteId> callsite_ids_;
  std::vector<std::vector<CallsiteId>> callers_;
};

/// Parses an IR document (JSON). Blocks holding several callsites are
/// split so each holds at most one; callsites without an explicit id are
/// numbered in document order after the largest explicit id.
Program load_program(const nlohmann::json &doc);
Program parse_program(std::string_view text);
Program load_program_file(const std::filesystem::path &path);

/// Resolves `fixtures/listing3` style names: tries the path as given, then
/// with a `.json` suffix.
std::filesystem::path resolve_program_path(const std::filesystem::path &path);

nlohmann::ordered_json program_to_json(const Program &p);
std::string serialize_program(const Program &p);

/// Minimum number of additional stack frames each function needs in order
/// to return (0 for functions with a callsite-free path to an exit).
/// kUnbounded marks functions that can never return.
std::vector<std::uint32_t> termination_costs(const Program &p);

/// Functions reachable from the entry over callee edges, ascending.
std::vector<FuncId> reachable_functions(const Program &p);

/// Blocks reachable from the entry block of `f`.
std::vector<bool> reachable_blocks(const Function &f);

} // namespace pdsg
