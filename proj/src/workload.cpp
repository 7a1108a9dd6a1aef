#include "pdsg/workload.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <set>

#include "pdsg/loops.hpp"

namespace pdsg {

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t w : words)
    h = splitmix(h ^ splitmix(w));
  return h;
}

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr std::uint32_t kFar = std::numeric_limits<std::uint32_t>::max();
const std::vector<std::int64_t> kDefaultDomain = {0, 1, 2, 3};

class Walker {
public:
  Walker(const Program &p, const ScopePlan &plan, const WorkloadOptions &opts)
      : p_(p), plan_(plan), opts_(opts), costs_(termination_costs(p)), salt_(hash_string(p.name)) {
    for (auto c : costs_)
      if (c != kUnbounded)
        cap_k_ = std::max(cap_k_, c + 1);
  }

  Trace run(std::uint64_t seed, std::size_t index) {
    trace_ = Trace{};
    rngs_.clear();
    Rng trace_rng(mix_seed({seed, index}));
    FeatureVector args = draw(p_.entry, trace_rng);
    std::uint32_t budget = std::max(opts_.max_depth, costs_[p_.entry]);
    enter(0, args);
    call(kRootCallsite, p_.entry, args, budget);
    leave(0);
    return std::move(trace_);
  }

private:
  Rng &rng() { return rngs_.back(); }

  void enter(ScgId s, const FeatureVector &features) {
    trace_.events.emplace_back(EnterScg{s, features});
    std::uint64_t h = mix_seed({salt_, s, features.size()});
    for (auto v : features)
      h = mix_seed({h, static_cast<std::uint64_t>(v)});
    rngs_.emplace_back(h);
  }

  void leave(ScgId s) {
    trace_.events.emplace_back(ExitScg{s});
    rngs_.pop_back();
  }

  FeatureVector draw(FuncId f, Rng &r) {
    const auto &fn = p_.function(f);
    FeatureVector out;
    for (std::size_t i = 0; i < fn.params.size(); ++i) {
      const auto &dom = fn.param_values.empty() ? kDefaultDomain : fn.param_values[i];
      out.push_back(dom[r.below(dom.size())]);
    }
    return out;
  }

  // Blocks-to-exit distance over blocks whose callsite has a callee that can
  // finish within k - 1 more frames.
  const std::vector<std::uint32_t> &distances(FuncId f, std::uint32_t k) {
    auto key = std::make_pair(f, k);
    if (auto it = dist_.find(key); it != dist_.end())
      return it->second;
    const auto &fn = p_.function(f);
    std::vector<bool> usable(fn.blocks.size(), true);
    for (BlockId b = 0; b < fn.blocks.size(); ++b)
      if (const auto &cs = fn.blocks[b].callsite)
        usable[b] = k >= 1 && std::any_of(cs->callees.begin(), cs->callees.end(),
                                          [&](FuncId g) { return costs_[g] <= k - 1; });
    std::vector<std::uint32_t> d(fn.blocks.size(), kFar);
    std::deque<BlockId> q;
    for (BlockId e : fn.exit_blocks)
      if (usable[e]) {
        d[e] = 0;
        q.push_back(e);
      }
    while (!q.empty()) {
      BlockId b = q.front();
      q.pop_front();
      for (BlockId pr : fn.blocks[b].predecessors)
        if (usable[pr] && d[pr] == kFar) {
          d[pr] = d[b] + 1;
          q.push_back(pr);
        }
    }
    return dist_.emplace(key, std::move(d)).first->second;
  }

  void call(CallsiteId c, FuncId g, const FeatureVector &args, std::uint32_t budget) {
    trace_.events.emplace_back(Call{c, g});
    body(g, args, budget);
    trace_.events.emplace_back(Return{g});
  }

  void callsite(const Callsite &cs, std::uint32_t budget) {
    std::vector<FuncId> eligible;
    for (FuncId g : cs.callees)
      if (budget >= 1 && costs_[g] <= budget - 1)
        eligible.push_back(g);
    if (auto sid = plan_.callsite_scg(cs.id)) {
      const Scg &s = plan_.scgs[*sid];
      FeatureVector features = draw(s.feature_source, rng());
      enter(s.id, features);
      FuncId g = eligible[rng().below(eligible.size())];
      FeatureVector args = g == s.feature_source ? features : draw(g, rng());
      call(cs.id, g, args, budget - 1);
      leave(s.id);
    } else {
      FuncId g = eligible[rng().below(eligible.size())];
      FeatureVector args = draw(g, rng());
      call(cs.id, g, args, budget - 1);
    }
  }

  void body(FuncId f, const FeatureVector &args, std::uint32_t budget) {
    const auto &fn = p_.function(f);
    const auto &forest = plan_.loops[f];
    const auto &dist = distances(f, std::min(budget, cap_k_));
    std::vector<std::uint32_t> taken(forest.loops.size(), 0);
    const std::size_t step_cap = 16 * fn.blocks.size() * (opts_.loop_bound + 1);
    std::size_t steps = 0;

    auto scg_loop = [&](BlockId header) -> std::optional<ScgId> {
      return plan_.loop_scg(f, header);
    };

    BlockId b = fn.entry_block;
    if (auto s = scg_loop(b))
      enter(*s, args);
    while (true) {
      if (const auto &cs = fn.blocks[b].callsite)
        callsite(*cs, budget);
      if (fn.is_exit(b))
        break;
      std::vector<BlockId> cand;
      for (BlockId s : fn.blocks[b].successors)
        if (dist[s] != kFar)
          cand.push_back(s);
      bool finishing = ++steps > step_cap;
      for (std::size_t li = 0; li < forest.loops.size(); ++li)
        if (forest.loops[li].contains(b) && taken[li] >= opts_.loop_bound)
          finishing = true;
      BlockId s;
      if (finishing) {
        s = cand.front();
        for (BlockId x : cand)
          if (dist[x] < dist[s])
            s = x;
      } else {
        s = cand[rng().below(cand.size())];
      }

      for (int li : forest.top_level()) {
        const Loop &l = forest.loops[li];
        if (l.contains(b) && !l.contains(s))
          if (auto sid = scg_loop(l.header))
            leave(*sid);
      }
      for (std::size_t li = 0; li < forest.loops.size(); ++li) {
        const Loop &l = forest.loops[li];
        if (l.header != s)
          continue;
        if (l.contains(b)) {
          ++taken[li];
        } else {
          for (std::size_t lj = 0; lj < forest.loops.size(); ++lj)
            if (l.contains(forest.loops[lj].header))
              taken[lj] = 0;
        }
      }
      for (int li : forest.top_level()) {
        const Loop &l = forest.loops[li];
        if (l.header == s && !l.contains(b))
          if (auto sid = scg_loop(l.header))
            enter(*sid, args);
      }
      b = s;
    }
  }

  const Program &p_;
  const ScopePlan &plan_;
  WorkloadOptions opts_;
  std::vector<std::uint32_t> costs_;
  std::uint32_t cap_k_ = 1;
  std::uint64_t salt_;
  std::map<std::pair<FuncId, std::uint32_t>, std::vector<std::uint32_t>> dist_;
  std::vector<Rng> rngs_;
  Trace trace_;
};

} // namespace

Trace generate_trace(const Program &p, const ScopePlan &plan, std::uint64_t seed,
                     std::size_t index, const WorkloadOptions &opts) {
  return Walker(p, plan, opts).run(seed, index);
}

std::vector<Trace> generate_workload(const Program &p, const ScopePlan &plan, std::uint64_t seed,
                                     std::size_t n, const WorkloadOptions &opts) {
  Walker w(p, plan, opts);
  std::vector<Trace> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(w.run(seed, i));
  return out;
}

// ---------------------------------------------------------------------------

Trace inject_attack(const Trace &t, const Program &p, const EnsueDb &db, std::uint64_t seed) {
  auto acts = collect_activations(t);
  std::map<std::size_t, std::size_t> act_at;
  for (std::size_t i = 0; i < acts.size(); ++i)
    act_at[acts[i].begin] = i;

  struct Point {
    std::size_t pos;
    CallsiteId prev;
    std::vector<FuncId> excluded;
  };
  std::vector<Point> points;
  std::vector<std::size_t> open;
  std::size_t frames = 0;
  std::optional<CallsiteId> prev;
  for (std::size_t i = 0; i < t.events.size(); ++i) {
    if (frames > 0 && prev) {
      std::set<FuncId> u;
      for (std::size_t a : open)
        u.insert(acts[a].executed.begin(), acts[a].executed.end());
      points.push_back(Point{i, *prev, {u.begin(), u.end()}});
    }
    const auto &e = t.events[i];
    if (std::holds_alternative<EnterScg>(e)) {
      open.push_back(act_at.at(i));
    } else if (std::holds_alternative<ExitScg>(e)) {
      open.pop_back();
    } else if (const auto *c = std::get_if<Call>(&e)) {
      ++frames;
      prev = c->callsite;
    } else {
      --frames;
    }
  }

  Rng rng(mix_seed({seed, 0x61747461636bULL}));
  std::shuffle(points.begin(), points.end(), rng.engine);
  for (const auto &pt : points) {
    auto outside = [&](FuncId g) {
      return !std::binary_search(pt.excluded.begin(), pt.excluded.end(), g);
    };
    std::vector<Call> preferred, other;
    for (CallsiteId c : p.callsite_ids()) {
      if (c == kRootCallsite || db.check_pair(pt.prev, c))
        continue;
      const auto &callees = p.callsite(c)->callees;
      for (FuncId g = 0; g < p.functions.size(); ++g) {
        if (!outside(g))
          continue;
        bool own = std::binary_search(callees.begin(), callees.end(), g);
        (own ? preferred : other).push_back(Call{c, g});
      }
    }
    const auto &pool = preferred.empty() ? other : preferred;
    if (pool.empty())
      continue;
    Trace out;
    out.events.assign(t.events.begin(), t.events.begin() + static_cast<std::ptrdiff_t>(pt.pos));
    out.events.emplace_back(pool[rng.below(pool.size())]);
    out.attack_index = pt.pos;
    return out;
  }
  throw NoAttackPossible("no callsite pair outside the ensue relation can be injected");
}

// ---------------------------------------------------------------------------

bool callsite_uniform(const Program &p) {
  for (const auto &fn : p.functions) {
    if (fn.is_leaf())
      continue;
    if (fn.blocks[fn.entry_block].callsite)
      continue;
    std::vector<bool> seen(fn.blocks.size(), false);
    std::vector<BlockId> stack{fn.entry_block};
    seen[fn.entry_block] = true;
    while (!stack.empty()) {
      BlockId b = stack.back();
      stack.pop_back();
      if (fn.is_exit(b))
        return false;
      for (BlockId s : fn.blocks[b].successors)
        if (!seen[s] && !fn.blocks[s].callsite) {
          seen[s] = true;
          stack.push_back(s);
        }
    }
  }
  return true;
}

namespace {

void link_predecessors(Function &fn) {
  for (auto &b : fn.blocks)
    b.predecessors.clear();
  for (BlockId b = 0; b < fn.blocks.size(); ++b)
    for (BlockId s : fn.blocks[b].successors)
      fn.blocks[s].predecessors.push_back(b);
  for (auto &b : fn.blocks)
    std::sort(b.predecessors.begin(), b.predecessors.end());
}

bool has_callsite_free_path(const Function &fn) {
  std::vector<bool> seen(fn.blocks.size(), false);
  std::vector<BlockId> stack;
  if (!fn.blocks[fn.entry_block].callsite) {
    stack.push_back(fn.entry_block);
    seen[fn.entry_block] = true;
  }
  while (!stack.empty()) {
    BlockId b = stack.back();
    stack.pop_back();
    if (fn.blocks[b].successors.empty())
      return true;
    for (BlockId s : fn.blocks[b].successors)
      if (!seen[s] && !fn.blocks[s].callsite) {
        seen[s] = true;
        stack.push_back(s);
      }
  }
  return false;
}

} // namespace

Program random_program(std::uint64_t seed, const RandomProgramOptions &opts) {
  Rng rng(mix_seed({seed, 0x70726f67ULL}));
  Program p;
  p.name = "random-" + std::to_string(seed);
  p.page_size = opts.page_size;
  const std::size_t n = 1 + rng.below(std::max<std::size_t>(opts.max_functions, 1));
  std::vector<bool> leaf(n, false);
  for (std::size_t i = 0; i + 1 < n; ++i)
    leaf[i] = rng.chance(opts.leaf_probability);
  leaf[n - 1] = true;
  if (n > 1)
    leaf[0] = false; // keeps every function attachable below main

  CallsiteId next_id = 1;
  auto pick_callees = [&](std::size_t i) {
    Callsite cs;
    cs.id = next_id++;
    std::size_t span = n - i - 1;
    cs.callees.push_back(static_cast<FuncId>(i + 1 + rng.below(span)));
    bool indirect = rng.chance(opts.indirect_probability);
    if (indirect && span >= 2) {
      std::size_t extra = 1 + rng.below(2);
      for (std::size_t e = 0; e < extra; ++e)
        cs.callees.push_back(static_cast<FuncId>(i + 1 + rng.below(span)));
    }
    if (opts.cyclic && rng.chance(0.2)) {
      // Recursive or backward callee next to the forward one.
      cs.callees.push_back(static_cast<FuncId>(rng.below(i + 1)));
      indirect = true;
    }
    std::sort(cs.callees.begin(), cs.callees.end());
    cs.callees.erase(std::unique(cs.callees.begin(), cs.callees.end()), cs.callees.end());
    cs.kind = cs.callees.size() > 1 || indirect ? CallKind::indirect : CallKind::direct;
    return cs;
  };

  for (std::size_t i = 0; i < n; ++i) {
    Function fn;
    fn.name = i == 0 ? "main" : "f" + std::to_string(i);
    fn.size_bytes = 64 * (1 + rng.below(8));
    fn.gadget_count = rng.below(fn.size_bytes / 8 + 1);
    std::size_t np = i == 0 ? 1 + rng.below(2) : rng.below(3);
    for (std::size_t k = 0; k < np; ++k)
      fn.params.push_back("x" + std::to_string(k));
    const std::size_t nb = 1 + rng.below(std::max<std::size_t>(opts.max_blocks, 1));
    fn.blocks.resize(nb);
    for (BlockId b = 0; b < nb; ++b)
      fn.blocks[b].name = "b" + std::to_string(b);
    for (BlockId b = 0; b + 1 < nb; ++b) {
      if (b > 0 && !rng.chance(0.8))
        continue;
      std::size_t k = 1 + rng.below(2);
      for (std::size_t e = 0; e < k; ++e) {
        BlockId s = static_cast<BlockId>(b + 1 + rng.below(nb - b - 1));
        auto &succ = fn.blocks[b].successors;
        if (std::find(succ.begin(), succ.end(), s) == succ.end())
          succ.push_back(s);
      }
    }
    link_predecessors(fn);
    for (BlockId b = 1; b < nb; ++b) {
      if (!fn.blocks[b].predecessors.empty())
        continue;
      BlockId from = static_cast<BlockId>(rng.below(b));
      fn.blocks[from].successors.push_back(b);
      link_predecessors(fn);
    }
    if (!leaf[i]) {
      for (BlockId b = 0; b < nb; ++b)
        if (rng.chance(opts.callsite_probability))
          fn.blocks[b].callsite = pick_callees(i);
      if (has_callsite_free_path(fn))
        fn.blocks[fn.entry_block].callsite = pick_callees(i);
    }
    if (opts.cyclic && nb > 1 && rng.chance(0.4)) {
      std::vector<BlockId> sources;
      for (BlockId b = 0; b < nb; ++b)
        if (!fn.blocks[b].successors.empty())
          sources.push_back(b);
      BlockId from = sources[rng.below(sources.size())];
      auto idom = immediate_dominators(fn);
      std::vector<BlockId> doms;
      for (BlockId a = 0; a < nb; ++a)
        if (dominates(idom, a, from))
          doms.push_back(a);
      fn.blocks[from].successors.push_back(doms[rng.below(doms.size())]);
      link_predecessors(fn);
    }
    for (BlockId b = 0; b < nb; ++b)
      if (fn.blocks[b].successors.empty())
        fn.exit_blocks.push_back(b);
    p.functions.push_back(std::move(fn));
  }

  // Hang unreachable functions off callsites of earlier reachable ones.
  std::vector<bool> reach(n, false);
  auto refresh = [&] {
    std::fill(reach.begin(), reach.end(), false);
    std::vector<FuncId> stack{0};
    reach[0] = true;
    while (!stack.empty()) {
      FuncId f = stack.back();
      stack.pop_back();
      for (const auto &b : p.functions[f].blocks)
        if (b.callsite)
          for (FuncId c : b.callsite->callees)
            if (!reach[c]) {
              reach[c] = true;
              stack.push_back(c);
            }
    }
  };
  refresh();
  for (FuncId f = 1; f < n; ++f) {
    if (reach[f])
      continue;
    std::vector<Callsite *> hosts;
    for (FuncId g = 0; g < f; ++g)
      if (reach[g])
        for (auto &b : p.functions[g].blocks)
          if (b.callsite)
            hosts.push_back(&*b.callsite);
    if (hosts.empty())
      continue;
    Callsite *cs = hosts[rng.below(hosts.size())];
    cs->callees.push_back(f);
    std::sort(cs->callees.begin(), cs->callees.end());
    cs->kind = CallKind::indirect;
    refresh();
  }
  p.finalize();
  return p;
}

} // namespace pdsg
