#include "pdsg/facts.hpp"

#include <algorithm>
#include <sstream>

namespace pdsg {

void FactBase::merge(const FactBase &other) {
  head.insert(other.head.begin(), other.head.end());
  tail.insert(other.tail.begin(), other.tail.end());
  next.insert(other.next.begin(), other.next.end());
  leaf.insert(other.leaf.begin(), other.leaf.end());
  belong.insert(other.belong.begin(), other.belong.end());
}

FlowSets solve_flow(const Function &f) {
  const std::size_t n = f.blocks.size();
  FlowSets fs;
  fs.in_ahead.assign(n, {});
  fs.out_ahead.assign(n, {});
  fs.in_behind.assign(n, {});
  fs.out_behind.assign(n, {});

  bool changed = true;
  while (changed) {
    changed = false;
    ++fs.iterations;
    // AHEAD flows backward; sweeping blocks in reverse document order
    // converges quickly on typical layouts but any order reaches the same
    // fixpoint.
    for (std::size_t k = n; k-- > 0;) {
      const auto &blk = f.blocks[k];
      CallsiteSet out;
      for (BlockId s : blk.successors)
        out.insert(fs.in_ahead[s].begin(), fs.in_ahead[s].end());
      CallsiteSet in = blk.callsite ? CallsiteSet{blk.callsite->id} : out;
      if (out != fs.out_ahead[k] || in != fs.in_ahead[k]) {
        fs.out_ahead[k] = std::move(out);
        fs.in_ahead[k] = std::move(in);
        changed = true;
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      const auto &blk = f.blocks[k];
      CallsiteSet in;
      for (BlockId p : blk.predecessors)
        in.insert(fs.out_behind[p].begin(), fs.out_behind[p].end());
      CallsiteSet out = blk.callsite ? CallsiteSet{blk.callsite->id} : in;
      if (in != fs.in_behind[k] || out != fs.out_behind[k]) {
        fs.in_behind[k] = std::move(in);
        fs.out_behind[k] = std::move(out);
        changed = true;
      }
    }
  }
  return fs;
}

FactBase build_dl_facts(FuncId fid, const Function &f, const FlowSets &flow) {
  FactBase fb;
  for (CallsiteId c : flow.in_ahead[f.entry_block])
    fb.head.emplace(fid, c);

  std::vector<bool> visited(f.blocks.size(), false);
  std::vector<BlockId> stack{f.entry_block};
  while (!stack.empty()) {
    BlockId b = stack.back();
    stack.pop_back();
    if (visited[b])
      continue;
    const auto &blk = f.blocks[b];
    if (f.is_exit(b))
      for (CallsiteId c : flow.out_behind[b])
        fb.tail.emplace(fid, c);
    if (blk.callsite)
      for (CallsiteId c : flow.out_ahead[b])
        fb.next.emplace(fid, blk.callsite->id, c);
    visited[b] = true;
    for (BlockId s : blk.successors)
      stack.push_back(s);
  }
  return fb;
}

FactBase extract_factbase(const Program &p) {
  FactBase fb;
  fb.belong.emplace(kRootCallsite, p.entry);
  for (FuncId f = 0; f < p.functions.size(); ++f) {
    const auto &fn = p.functions[f];
    fb.merge(build_dl_facts(f, fn, solve_flow(fn)));
    bool leaf = true;
    for (const auto &b : fn.blocks)
      if (b.callsite) {
        leaf = false;
        for (FuncId callee : b.callsite->callees)
          fb.belong.emplace(b.callsite->id, callee);
      }
    if (leaf)
      fb.leaf.insert(f);
  }
  return fb;
}

std::string serialize_facts(const Program &p, const FactBase &fb) {
  auto name = [&](FuncId f) -> const std::string & { return p.function_name(f); };
  std::ostringstream out;

  std::vector<std::pair<FuncId, CallsiteId>> fc(fb.head.begin(), fb.head.end());
  auto by_name = [&](const auto &a, const auto &b) {
    return std::tie(name(a.first), a.second) < std::tie(name(b.first), b.second);
  };
  std::sort(fc.begin(), fc.end(), by_name);
  for (auto [f, c] : fc)
    out << "head(" << name(f) << ", " << c << ").\n";

  fc.assign(fb.tail.begin(), fb.tail.end());
  std::sort(fc.begin(), fc.end(), by_name);
  for (auto [f, c] : fc)
    out << "tail(" << name(f) << ", " << c << ").\n";

  std::vector<std::tuple<FuncId, CallsiteId, CallsiteId>> nx(fb.next.begin(), fb.next.end());
  std::sort(nx.begin(), nx.end(), [&](const auto &a, const auto &b) {
    return std::tie(name(std::get<0>(a)), std::get<1>(a), std::get<2>(a)) <
           std::tie(name(std::get<0>(b)), std::get<1>(b), std::get<2>(b));
  });
  for (auto [f, i, j] : nx)
    out << "next(" << name(f) << ", " << i << ", " << j << ").\n";

  std::vector<FuncId> lf(fb.leaf.begin(), fb.leaf.end());
  std::sort(lf.begin(), lf.end(), [&](FuncId a, FuncId b) { return name(a) < name(b); });
  for (FuncId f : lf)
    out << "leaf(" << name(f) << ").\n";

  std::vector<std::pair<CallsiteId, FuncId>> bl(fb.belong.begin(), fb.belong.end());
  std::sort(bl.begin(), bl.end(), [&](const auto &a, const auto &b) {
    return std::tie(a.first, name(a.second)) < std::tie(b.first, name(b.second));
  });
  for (auto [c, f] : bl)
    out << "belong(" << c << ", " << name(f) << ").\n";
  return out.str();
}

} // namespace pdsg
