#include "doctest.h"

#include <fstream>
#include <sstream>

#include "pdsg/facts.hpp"
#include "pdsg/workload.hpp"
#include "support.hpp"

using namespace pdsg;
using namespace testing;

namespace {

std::string golden(const std::string &name) {
  std::ifstream in(std::string(PDSG_SOURCE_DIR) + "/tests/golden/" + name);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Callsite blocks first reached from `from` through callsite-free blocks,
// following `step` (successors or predecessors).
template <typename Step>
std::set<CallsiteId> frontier(const Function &fn, std::vector<BlockId> from, Step step) {
  std::set<CallsiteId> out;
  std::vector<bool> seen(fn.blocks.size(), false);
  while (!from.empty()) {
    BlockId b = from.back();
    from.pop_back();
    if (seen[b])
      continue;
    seen[b] = true;
    if (fn.blocks[b].callsite) {
      out.insert(fn.blocks[b].callsite->id);
      continue;
    }
    for (BlockId n : step(b))
      from.push_back(n);
  }
  return out;
}

// Path-search reference for head/tail/next of one function.
FactBase path_facts(FuncId f, const Function &fn) {
  FactBase fb;
  auto succ = [&](BlockId b) { return fn.blocks[b].successors; };
  auto pred = [&](BlockId b) { return fn.blocks[b].predecessors; };
  for (CallsiteId c : frontier(fn, {fn.entry_block}, succ))
    fb.head.emplace(f, c);
  for (CallsiteId c : frontier(fn, fn.exit_blocks, pred))
    fb.tail.emplace(f, c);
  for (BlockId b = 0; b < fn.blocks.size(); ++b)
    if (fn.blocks[b].callsite)
      for (CallsiteId c : frontier(fn, fn.blocks[b].successors, succ))
        fb.next.emplace(f, fn.blocks[b].callsite->id, c);
  return fb;
}

} // namespace

TEST_CASE("listing3 facts match the golden file") {
  Program p = fixture("listing3");
  FactBase fb = extract_factbase(p);
  CHECK(fb.size() == 18);
  CHECK(serialize_facts(p, fb) == golden("listing3.facts.dl"));
}

TEST_CASE("listing3 main flow sets") {
  Program p = fixture("listing3");
  const Function &main = p.function(p.entry);
  FlowSets fs = solve_flow(main);
  CHECK(fs.in_ahead[0] == CallsiteSet{1, 2});
  CHECK(fs.in_ahead[1] == CallsiteSet{1});
  CHECK(fs.out_ahead[1] == CallsiteSet{3});
  CHECK(fs.out_behind[3] == CallsiteSet{3});
  CHECK(fs.in_behind[3] == CallsiteSet{1, 2});
  CHECK(fs.out_behind[4] == CallsiteSet{4});
  CHECK(fs.in_behind[0].empty());
  CHECK(fs.out_ahead[4].empty());
}

TEST_CASE("function without callsites yields only leaf and belong facts") {
  Program p = fixture("empty-main");
  FactBase fb = extract_factbase(p);
  CHECK(fb.head.empty());
  CHECK(fb.tail.empty());
  CHECK(fb.next.empty());
  CHECK(fb.leaf == std::set<FuncId>{0});
  CHECK(fb.belong == std::set<std::pair<CallsiteId, FuncId>>{{0, 0}});
}

TEST_CASE("loop bodies produce next facts around the back edge") {
  Program p = fixture("loops");
  FactBase fb = extract_factbase(p);
  FuncId main = fid(p, "main");
  // body's `work` call can be followed by itself (another iteration) or by `finish`.
  CallsiteId work = 0, finish = 0, init = 0;
  for (const auto &b : p.function(main).blocks) {
    if (!b.callsite)
      continue;
    if (b.name == "body")
      work = b.callsite->id;
    if (b.name == "done")
      finish = b.callsite->id;
    if (b.name == "entry")
      init = b.callsite->id;
  }
  CHECK(fb.next.count({main, work, work}) == 1);
  CHECK(fb.next.count({main, work, finish}) == 1);
  CHECK(fb.next.count({main, init, work}) == 1);
  CHECK(fb.next.count({main, init, finish}) == 1);
  std::set<std::pair<FuncId, CallsiteId>> main_heads;
  for (auto h : fb.head)
    if (h.first == main)
      main_heads.insert(h);
  CHECK(main_heads == path_facts(main, p.function(main)).head);
}

TEST_CASE("dataflow facts equal path-search facts on random programs") {
  for (std::uint64_t s = 0; s < 300; ++s) {
    RandomProgramOptions o;
    o.cyclic = s % 2;
    Program p = random_program(mix_seed({11, s}), o);
    for (FuncId f = 0; f < p.functions.size(); ++f) {
      const Function &fn = p.function(f);
      FactBase got = build_dl_facts(f, fn, solve_flow(fn));
      FactBase want = path_facts(f, fn);
      CHECK(got.head == want.head);
      CHECK(got.tail == want.tail);
      CHECK(got.next == want.next);
    }
  }
}

TEST_CASE("flow sets are a fixpoint of the transfer equations") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    RandomProgramOptions o;
    o.cyclic = true;
    Program p = random_program(s, o);
    for (const auto &fn : p.functions) {
      FlowSets fs = solve_flow(fn);
      for (BlockId b = 0; b < fn.blocks.size(); ++b) {
        CallsiteSet oa;
        for (BlockId n : fn.blocks[b].successors)
          oa.insert(fs.in_ahead[n].begin(), fs.in_ahead[n].end());
        CHECK(fs.out_ahead[b] == oa);
        CallsiteSet ib;
        for (BlockId n : fn.blocks[b].predecessors)
          ib.insert(fs.out_behind[n].begin(), fs.out_behind[n].end());
        CHECK(fs.in_behind[b] == ib);
        if (fn.blocks[b].callsite) {
          CHECK(fs.in_ahead[b] == CallsiteSet{fn.blocks[b].callsite->id});
          CHECK(fs.out_behind[b] == CallsiteSet{fn.blocks[b].callsite->id});
        } else {
          CHECK(fs.in_ahead[b] == fs.out_ahead[b]);
          CHECK(fs.out_behind[b] == fs.in_behind[b]);
        }
      }
    }
  }
}

TEST_CASE("leaf and belong cover every function and callee edge") {
  Program p = fixture("loops");
  FactBase fb = extract_factbase(p);
  for (FuncId f = 0; f < p.functions.size(); ++f) {
    CHECK((fb.leaf.count(f) == 1) == p.function(f).is_leaf());
    for (CallsiteId c : p.function(f).callsites())
      for (FuncId g : p.callsite(c)->callees)
        CHECK(fb.belong.count({c, g}) == 1);
  }
  CHECK(fb.belong.count({kRootCallsite, p.entry}) == 1);
}

TEST_CASE("facts are deterministic") {
  Program p = random_program(5);
  CHECK(serialize_facts(p, extract_factbase(p)) == serialize_facts(p, extract_factbase(p)));
}
