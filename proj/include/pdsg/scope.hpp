#pragma once

#include <map>
#include <set>
#include <optional>
#include <string>
#include <vector>

#include "pdsg/loops.hpp"
#include "pdsg/program.hpp"
#include "pdsg/trace.hpp"

namespace pdsg {

enum class ScgKind { function_entry, loop_preheader, loop_enclosed_callsite, indirect_callsite };

const char *to_string(ScgKind k);

/// A sub-callgraph: the functions statically reachable from one
/// instrumentation entry point.
///
/// Scg 0 is always the program entry (entered through the root callsite).
/// Every other Scg is an interprocedurally outermost entry point reached
/// from root-level code: a top-level loop preheader, or a callsite into
/// recursion, an indirect callsite, or a callsite into an irreducible
/// function. Their entry points are never nested inside one another, so
/// at most two activations are open at any time.
struct Scg {
  ScgId id = 0;
  ScgKind kind = ScgKind::function_entry;
  /// Function holding the entry point (the program entry for Scg 0).
  FuncId owner = 0;
  std::optional<BlockId> header;      // loop-preheader entries
  std::optional<CallsiteId> callsite; // callsite entries
  /// Callsites through which execution first reaches the SCG's functions:
  /// {0} for the root, the loop body's callsites for a loop, the callsite
  /// itself otherwise.
  std::vector<CallsiteId> entry_callsites;
  std::vector<FuncId> functions; // ascending
  /// Function whose parameters make up the feature vector.
  FuncId feature_source = 0;
  std::size_t feature_arity = 0;

  bool contains(FuncId f) const;
  std::string describe(const Program &p) const;
};

/// All SCG entry points of a program plus the lookups the walker and the
/// runtime need.
struct ScopePlan {
  std::vector<Scg> scgs;
  std::vector<LoopForest> loops;

  /// SCG entered when control reaches `header` of `f` from outside the loop.
  std::optional<ScgId> loop_scg(FuncId f, BlockId header) const;
  /// SCG entered right before callsite `c` executes.
  std::optional<ScgId> callsite_scg(CallsiteId c) const;
  /// True for callsites owned by a child SCG (they never execute while
  /// the root activation is innermost).
  bool delegated(CallsiteId c) const;
  /// Loop body of a loop-preheader SCG.
  const Loop &loop_of(const Scg &s) const;

  std::map<std::pair<FuncId, BlockId>, ScgId> by_header;
  std::map<CallsiteId, ScgId> by_callsite;
  std::set<CallsiteId> delegated_callsites;
};

ScopePlan find_scg_entries(const Program &p);

/// One dynamic activation of an SCG reconstructed from a trace. `executed`
/// holds the functions called while this activation was innermost.
struct Activation {
  ScgId scg = 0;
  FeatureVector features;
  std::vector<FuncId> executed; // ascending
  std::size_t begin = 0;        // index of the EnterScg event
  std::size_t end = 0;          // index of the matching ExitScg event
  std::size_t calls = 0;
};

/// Activations in order of their EnterScg event. The event at `skip` (an
/// injected attack) is ignored.
std::vector<Activation> collect_activations(const Trace &t,
                                            std::optional<std::size_t> skip = std::nullopt);

struct Pscg {
  std::uint32_t id = 0;
  ScgId scg = 0;
  std::vector<FuncId> functions; // ascending
  std::size_t support = 0;
};

/// Distinct executed sets of `scg` across the traces; ids are dense,
/// ordered by descending support then by set contents.
std::vector<Pscg> enumerate_pscgs(const Scg &scg, const std::vector<Trace> &traces);
std::vector<Pscg> enumerate_pscgs(const Scg &scg, const std::vector<Activation> &activations);

struct RectificationPoint {
  ScgId scg = 0;
  std::uint32_t pscg = 0;
  CallsiteId callsite = 0;
  std::optional<FuncId> caller; // nullopt for the root callsite
  std::vector<FuncId> rectify_set;
};

/// Callsites needing a rectification point when exactly `predicted` is
/// active for `scg`: DFS from the SCG entry through predicted functions,
/// flagging every callsite with some possible callee outside the set.
std::vector<CallsiteId> rectification_callsites(const Program &p, const ScopePlan &plan,
                                                const Scg &scg,
                                                const std::vector<FuncId> &predicted);

std::vector<RectificationPoint> instrument_at_rps(const Program &p, const ScopePlan &plan,
                                                  const Scg &scg, const std::vector<Pscg> &pscgs);

enum class RpSemantics { activate_all, lazy };

/// Only the eager variant (activate the whole rectify set, disable the
/// other RPs of the activation) is supported; `lazy` throws.
void require_supported(RpSemantics s);

std::vector<FuncId> set_difference(const std::vector<FuncId> &a, const std::vector<FuncId> &b);

} // namespace pdsg
