#pragma once

#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "pdsg/program.hpp"

namespace pdsg {

using CallsiteSet = std::set<CallsiteId>;

/// AHEAD/BEHIND dataflow sets for every block of one function.
struct FlowSets {
  std::vector<CallsiteSet> in_ahead;
  std::vector<CallsiteSet> out_ahead;
  std::vector<CallsiteSet> in_behind;
  std::vector<CallsiteSet> out_behind;
  unsigned iterations = 0;
};

/// The five base relations. All sets are ordered so serialization is
/// reproducible.
struct FactBase {
  std::set<std::pair<FuncId, CallsiteId>> head;
  std::set<std::pair<FuncId, CallsiteId>> tail;
  std::set<std::tuple<FuncId, CallsiteId, CallsiteId>> next;
  std::set<FuncId> leaf;
  std::set<std::pair<CallsiteId, FuncId>> belong;

  std::size_t size() const {
    return head.size() + tail.size() + next.size() + leaf.size() + belong.size();
  }
  void merge(const FactBase &other);
  bool operator==(const FactBase &) const = default;
};

/// Least fixpoint of
///   OUT_AHEAD[B] = U IN_AHEAD[succ]     IN_AHEAD[B] = Callsite_B || OUT_AHEAD[B]
///   IN_BEHIND[B] = U OUT_BEHIND[pred]   OUT_BEHIND[B] = Callsite_B || IN_BEHIND[B]
/// where `c || S` is {c} when the block holds callsite c and S otherwise.
FlowSets solve_flow(const Function &f);

/// head/tail/next facts for `f` from its solved flow sets, visiting each
/// block reachable from the entry once.
FactBase build_dl_facts(FuncId fid, const Function &f, const FlowSets &flow);

/// All five relations for the program; belong includes (0, entry).
FactBase extract_factbase(const Program &p);

/// Datalog-style text, one fact per line (`head(main, 1).`). Relations
/// appear in the order head, tail, next, leaf, belong; tuples are sorted by
/// function name, then callsite id.
std::string serialize_facts(const Program &p, const FactBase &fb);

} // namespace pdsg
