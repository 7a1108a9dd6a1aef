#pragma once

#include <chrono>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pdsg/facts.hpp"
#include "pdsg/program.hpp"

namespace pdsg {

using CallsitePair = std::pair<CallsiteId, CallsiteId>;

/// Derived relations `last` and `ensue`, indexed for runtime checking.
class EnsueDb {
public:
  struct Counts {
    std::size_t facts_in = 0;
    std::size_t ensue_out = 0;
  };

  /// ensue(a, b): one map lookup, one set probe. Unknown ids fail closed.
  bool check_pair(CallsiteId a, CallsiteId b) const;

  const std::set<std::pair<FuncId, CallsiteId>> &last() const { return last_; }
  const std::set<CallsitePair> &pairs() const { return pairs_; }
  Counts counts() const { return counts_; }
  /// Rounds of the semi-naive `last` fixpoint.
  unsigned rounds() const { return rounds_; }

private:
  friend EnsueDb derive(const FactBase &fb);
  std::set<std::pair<FuncId, CallsiteId>> last_;
  std::set<CallsitePair> pairs_;
  std::unordered_map<CallsiteId, std::unordered_set<CallsiteId>> index_;
  Counts counts_;
  unsigned rounds_ = 0;
};

/// Least fixpoint of
///   last(f,i)  <= tail(f,i), belong(i,g), leaf(g)
///   last(f,i)  <= tail(f,j), belong(j,g), last(g,i)
///   ensue(i,j) <= head(f,j), belong(i,f)
///   ensue(i,j) <= next(g,i,j), belong(i,f), leaf(f)
///   ensue(i,j) <= next(g,k,j), belong(k,f), last(f,i)
/// evaluated semi-naively (only new `last` tuples re-fire the recursive
/// rule and the third ensue rule).
EnsueDb derive(const FactBase &fb);

inline bool check_pair(const EnsueDb &db, CallsiteId a, CallsiteId b) {
  return db.check_pair(a, b);
}

/// `ensue(i, j).` lines, numerically sorted.
std::string serialize_ensue(const EnsueDb &db);
/// `last(f, i).` lines sorted by function name, then callsite.
std::string serialize_last(const Program &p, const EnsueDb &db);

class OracleBudgetExceeded : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct OracleOptions {
  /// Max times any single block is visited within one function execution
  /// is loop_bound + 1.
  std::uint32_t loop_bound = 2;
  /// Max activations of any one function on the call stack.
  std::uint32_t rec_bound = 2;
  std::uint64_t path_budget = 1'000'000;
};

struct OracleResult {
  std::set<CallsitePair> pairs;
  std::uint64_t paths_explored = 0;
};

/// Adjacent callsite pairs over every complete bounded execution of the
/// program, found by enumerating explicit intraprocedural CFG paths and
/// composing callee (first, last) summaries. Shares nothing with the
/// dataflow/Datalog route. Throws OracleBudgetExceeded past the budget.
OracleResult oracle_ensue(const Program &p, const OracleOptions &opts = {});

} // namespace pdsg
