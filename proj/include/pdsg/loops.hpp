#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pdsg/program.hpp"

namespace pdsg {

/// A natural loop. Loops sharing a header are merged.
struct Loop {
  BlockId header = 0;
  std::vector<BlockId> body; // ascending, header included
  std::vector<BlockId> latches;
  /// Existing unique out-of-loop predecessor of the header, if any.
  std::optional<BlockId> preheader;
  /// True when no unique out-of-loop predecessor exists and the preheader
  /// is a synthesized edge split in front of the header.
  bool synthesized_preheader = false;
  int parent = -1;
  std::vector<int> children;
  unsigned depth = 1;

  bool contains(BlockId b) const;
  std::string preheader_name(const Function &f) const;
};

struct LoopForest {
  std::vector<Loop> loops; // outer loops precede the loops they contain
  bool irreducible = false;
  /// Innermost loop per block, -1 when outside every loop.
  std::vector<int> innermost;

  std::vector<int> top_level() const;
  /// Outermost loop containing the block, -1 if none.
  int outermost_of(BlockId b) const;
};

/// Immediate dominators over reachable blocks (entry maps to itself,
/// unreachable blocks to nullopt).
std::vector<std::optional<BlockId>> immediate_dominators(const Function &f);
bool dominates(const std::vector<std::optional<BlockId>> &idom, BlockId a, BlockId b);

LoopForest compute_loops(const Function &f);
std::vector<LoopForest> compute_loops(const Program &p);

} // namespace pdsg
