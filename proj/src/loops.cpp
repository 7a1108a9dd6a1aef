#include "pdsg/loops.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace pdsg {

bool Loop::contains(BlockId b) const { return std::binary_search(body.begin(), body.end(), b); }

std::string Loop::preheader_name(const Function &f) const {
  if (preheader)
    return f.blocks[*preheader].name;
  return f.blocks[header].name + ".preheader";
}

std::vector<int> LoopForest::top_level() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(loops.size()); ++i)
    if (loops[i].parent < 0)
      out.push_back(i);
  return out;
}

int LoopForest::outermost_of(BlockId b) const {
  int l = innermost.at(b);
  while (l >= 0 && loops[l].parent >= 0)
    l = loops[l].parent;
  return l;
}

namespace {

// Reverse postorder over reachable blocks.
std::vector<BlockId> reverse_postorder(const Function &f) {
  std::vector<BlockId> order;
  std::vector<char> state(f.blocks.size(), 0);
  std::vector<std::pair<BlockId, std::size_t>> stack{{f.entry_block, 0}};
  state[f.entry_block] = 1;
  while (!stack.empty()) {
    auto &[b, i] = stack.back();
    const auto &succ = f.blocks[b].successors;
    if (i < succ.size()) {
      BlockId s = succ[i++];
      if (!state[s]) {
        state[s] = 1;
        stack.push_back({s, 0});
      }
    } else {
      order.push_back(b);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

} // namespace

std::vector<std::optional<BlockId>> immediate_dominators(const Function &f) {
  // Cooper, Harvey & Kennedy iterative algorithm.
  auto rpo = reverse_postorder(f);
  std::vector<int> rpo_index(f.blocks.size(), -1);
  for (std::size_t i = 0; i < rpo.size(); ++i)
    rpo_index[rpo[i]] = static_cast<int>(i);

  std::vector<std::optional<BlockId>> idom(f.blocks.size());
  idom[f.entry_block] = f.entry_block;
  auto intersect = [&](BlockId a, BlockId b) {
    while (a != b) {
      while (rpo_index[a] > rpo_index[b])
        a = *idom[a];
      while (rpo_index[b] > rpo_index[a])
        b = *idom[b];
    }
    return a;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (BlockId b : rpo) {
      if (b == f.entry_block)
        continue;
      std::optional<BlockId> nd;
      for (BlockId p : f.blocks[b].predecessors) {
        if (!idom[p])
          continue;
        nd = nd ? intersect(*nd, p) : p;
      }
      if (nd && idom[b] != nd) {
        idom[b] = nd;
        changed = true;
      }
    }
  }
  return idom;
}

bool dominates(const std::vector<std::optional<BlockId>> &idom, BlockId a, BlockId b) {
  if (!idom[b])
    return false;
  while (true) {
    if (a == b)
      return true;
    BlockId up = *idom[b];
    if (up == b)
      return false;
    b = up;
  }
}

LoopForest compute_loops(const Function &f) {
  LoopForest forest;
  forest.innermost.assign(f.blocks.size(), -1);
  auto idom = immediate_dominators(f);

  // Back edges u->h with h dominating u; any other retreating edge (to a
  // block on the DFS stack) means the CFG is irreducible.
  std::map<BlockId, std::vector<BlockId>> latches_by_header;
  {
    std::vector<char> state(f.blocks.size(), 0); // 0 new, 1 on stack, 2 done
    std::vector<std::pair<BlockId, std::size_t>> stack{{f.entry_block, 0}};
    state[f.entry_block] = 1;
    while (!stack.empty()) {
      auto &[b, i] = stack.back();
      const auto &succ = f.blocks[b].successors;
      if (i < succ.size()) {
        BlockId s = succ[i++];
        if (state[s] == 0) {
          state[s] = 1;
          stack.push_back({s, 0});
        } else if (state[s] == 1) {
          if (dominates(idom, s, b))
            latches_by_header[s].push_back(b);
          else
            forest.irreducible = true;
        } else if (dominates(idom, s, b)) {
          latches_by_header[s].push_back(b);
        }
      } else {
        state[b] = 2;
        stack.pop_back();
      }
    }
  }
  if (forest.irreducible)
    return forest;

  for (auto &[header, latches] : latches_by_header) {
    Loop loop;
    loop.header = header;
    std::sort(latches.begin(), latches.end());
    latches.erase(std::unique(latches.begin(), latches.end()), latches.end());
    loop.latches = latches;
    std::set<BlockId> body{header};
    std::vector<BlockId> work;
    for (BlockId l : latches)
      if (body.insert(l).second)
        work.push_back(l);
    while (!work.empty()) {
      BlockId b = work.back();
      work.pop_back();
      for (BlockId p : f.blocks[b].predecessors)
        if (idom[p] && body.insert(p).second)
          work.push_back(p);
    }
    loop.body.assign(body.begin(), body.end());
    std::vector<BlockId> outside;
    for (BlockId p : f.blocks[header].predecessors)
      if (idom[p] && !body.count(p))
        outside.push_back(p);
    if (outside.size() == 1)
      loop.preheader = outside.front();
    else
      loop.synthesized_preheader = true;
    forest.loops.push_back(std::move(loop));
  }

  // Outer loops first: larger bodies precede the loops they contain.
  std::stable_sort(forest.loops.begin(), forest.loops.end(),
                   [](const Loop &a, const Loop &b) { return a.body.size() > b.body.size(); });
  for (int i = 0; i < static_cast<int>(forest.loops.size()); ++i) {
    auto &inner = forest.loops[i];
    int best = -1;
    for (int j = 0; j < i; ++j) {
      const auto &outer = forest.loops[j];
      if (outer.contains(inner.header) && outer.body.size() > inner.body.size())
        if (best < 0 || forest.loops[best].body.size() > outer.body.size())
          best = j;
    }
    inner.parent = best;
    if (best >= 0) {
      forest.loops[best].children.push_back(i);
      inner.depth = forest.loops[best].depth + 1;
    }
  }
  for (int i = 0; i < static_cast<int>(forest.loops.size()); ++i)
    for (BlockId b : forest.loops[i].body) {
      int cur = forest.innermost[b];
      if (cur < 0 || forest.loops[cur].body.size() > forest.loops[i].body.size())
        forest.innermost[b] = i;
    }
  return forest;
}

std::vector<LoopForest> compute_loops(const Program &p) {
  std::vector<LoopForest> out;
  out.reserve(p.functions.size());
  for (const auto &f : p.functions)
    out.push_back(compute_loops(f));
  return out;
}

} // namespace pdsg
