#include "pdsg/scope.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pdsg {

const char *to_string(ScgKind k) {
  switch (k) {
  case ScgKind::function_entry:
    return "function-entry";
  case ScgKind::loop_preheader:
    return "loop-preheader";
  case ScgKind::loop_enclosed_callsite:
    return "loop-enclosed-callsite";
  case ScgKind::indirect_callsite:
    return "indirect-callsite";
  }
  return "?";
}

bool Scg::contains(FuncId f) const {
  return std::binary_search(functions.begin(), functions.end(), f);
}

std::string Scg::describe(const Program &p) const {
  std::ostringstream out;
  out << to_string(kind) << " in " << p.function_name(owner);
  if (header)
    out << " @" << p.function(owner).blocks[*header].name;
  if (callsite)
    out << " @callsite " << *callsite;
  return out.str();
}

std::optional<ScgId> ScopePlan::loop_scg(FuncId f, BlockId header) const {
  auto it = by_header.find({f, header});
  if (it == by_header.end())
    return std::nullopt;
  return it->second;
}

std::optional<ScgId> ScopePlan::callsite_scg(CallsiteId c) const {
  auto it = by_callsite.find(c);
  if (it == by_callsite.end())
    return std::nullopt;
  return it->second;
}

bool ScopePlan::delegated(CallsiteId c) const { return delegated_callsites.count(c) != 0; }

const Loop &ScopePlan::loop_of(const Scg &s) const {
  if (!s.header)
    throw std::logic_error("SCG has no loop");
  const auto &forest = loops[s.owner];
  for (const auto &l : forest.loops)
    if (l.header == *s.header && l.parent < 0)
      return l;
  throw std::logic_error("loop SCG without a matching loop");
}

std::vector<FuncId> set_difference(const std::vector<FuncId> &a, const std::vector<FuncId> &b) {
  std::vector<FuncId> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

namespace {

std::vector<FuncId> closure_from(const Program &p, const std::vector<FuncId> &roots) {
  std::vector<bool> seen(p.functions.size(), false);
  std::vector<FuncId> stack;
  for (FuncId r : roots)
    if (!seen[r]) {
      seen[r] = true;
      stack.push_back(r);
    }
  while (!stack.empty()) {
    FuncId f = stack.back();
    stack.pop_back();
    for (const auto &b : p.functions[f].blocks)
      if (b.callsite)
        for (FuncId c : b.callsite->callees)
          if (!seen[c]) {
            seen[c] = true;
            stack.push_back(c);
          }
  }
  std::vector<FuncId> out;
  for (FuncId f = 0; f < seen.size(); ++f)
    if (seen[f])
      out.push_back(f);
  return out;
}

// Functions on a callgraph cycle (including self-recursion).
std::vector<bool> recursive_functions(const Program &p) {
  std::vector<bool> rec(p.functions.size(), false);
  for (FuncId f = 0; f < p.functions.size(); ++f) {
    std::vector<FuncId> direct;
    for (const auto &b : p.functions[f].blocks)
      if (b.callsite)
        direct.insert(direct.end(), b.callsite->callees.begin(), b.callsite->callees.end());
    auto reach = closure_from(p, direct);
    rec[f] = std::binary_search(reach.begin(), reach.end(), f);
  }
  return rec;
}

std::pair<FuncId, std::size_t> feature_source_of(const Program &p, const std::vector<FuncId> &fs) {
  FuncId best = fs.front();
  for (FuncId f : fs)
    if (p.function(f).params.size() > p.function(best).params.size())
      best = f;
  return {best, p.function(best).params.size()};
}

} // namespace

ScopePlan find_scg_entries(const Program &p) {
  ScopePlan plan;
  plan.loops = compute_loops(p);
  const auto reachable = reachable_functions(p);
  const auto rec = recursive_functions(p);

  // Functions that only ever run inside some nested entry point.
  std::vector<bool> enclosed(p.functions.size(), false);
  auto enclose = [&](const std::vector<FuncId> &roots) {
    bool grew = false;
    for (FuncId f : closure_from(p, roots))
      if (!enclosed[f]) {
        enclosed[f] = true;
        grew = true;
      }
    return grew;
  };
  {
    std::vector<FuncId> seeds;
    for (FuncId f = 0; f < p.functions.size(); ++f) {
      if (rec[f] || (plan.loops[f].irreducible && f != p.entry))
        seeds.push_back(f);
      for (const auto &loop : plan.loops[f].loops)
        for (BlockId b : loop.body)
          if (const auto &cs = p.function(f).blocks[b].callsite)
            seeds.insert(seeds.end(), cs->callees.begin(), cs->callees.end());
    }
    enclose(seeds);
  }
  auto root_level = [&](FuncId f) {
    return std::binary_search(reachable.begin(), reachable.end(), f) && !enclosed[f];
  };
  // Callees of root-level indirect callsites run inside that callsite's
  // activation, which may in turn enclose more functions.
  bool grew = true;
  while (grew) {
    grew = false;
    for (FuncId f = 0; f < p.functions.size(); ++f) {
      if (!root_level(f))
        continue;
      for (BlockId b = 0; b < p.function(f).blocks.size(); ++b) {
        const auto &cs = p.function(f).blocks[b].callsite;
        if (cs && cs->kind == CallKind::indirect && plan.loops[f].innermost[b] < 0)
          grew |= enclose(cs->callees);
      }
    }
  }

  Scg root;
  root.id = 0;
  root.kind = ScgKind::function_entry;
  root.owner = p.entry;
  root.callsite = kRootCallsite;
  root.entry_callsites = {kRootCallsite};
  root.functions = reachable;
  root.feature_source = p.entry;
  root.feature_arity = p.function(p.entry).params.size();
  plan.scgs.push_back(root);

  for (FuncId f = 0; f < p.functions.size(); ++f) {
    if (!root_level(f))
      continue;
    const auto &fn = p.function(f);
    const auto &forest = plan.loops[f];
    if (!forest.irreducible) {
      for (int li : forest.top_level()) {
        const auto &loop = forest.loops[li];
        Scg s;
        s.kind = ScgKind::loop_preheader;
        s.owner = f;
        s.header = loop.header;
        std::vector<FuncId> callees;
        for (BlockId b = 0; b < fn.blocks.size(); ++b)
          if (loop.contains(b) && fn.blocks[b].callsite) {
            s.entry_callsites.push_back(fn.blocks[b].callsite->id);
            const auto &cl = fn.blocks[b].callsite->callees;
            callees.insert(callees.end(), cl.begin(), cl.end());
          }
        if (s.entry_callsites.empty())
          continue;
        s.functions = closure_from(p, callees);
        s.feature_source = f;
        s.feature_arity = fn.params.size();
        s.id = static_cast<ScgId>(plan.scgs.size());
        plan.by_header[{f, loop.header}] = s.id;
        plan.delegated_callsites.insert(s.entry_callsites.begin(), s.entry_callsites.end());
        plan.scgs.push_back(std::move(s));
      }
    }
    for (BlockId b = 0; b < fn.blocks.size(); ++b) {
      const auto &cs = fn.blocks[b].callsite;
      if (!cs || forest.innermost[b] >= 0)
        continue;
      bool into_recursion = false, into_irreducible = false;
      for (FuncId c : cs->callees) {
        into_recursion |= static_cast<bool>(rec[c]);
        into_irreducible |= plan.loops[c].irreducible;
      }
      std::optional<ScgKind> kind;
      if (into_recursion)
        kind = ScgKind::loop_enclosed_callsite;
      else if (cs->kind == CallKind::indirect)
        kind = ScgKind::indirect_callsite;
      else if (into_irreducible)
        kind = ScgKind::function_entry;
      if (!kind)
        continue;
      Scg s;
      s.kind = *kind;
      s.owner = f;
      s.callsite = cs->id;
      s.entry_callsites = {cs->id};
      s.functions = closure_from(p, cs->callees);
      std::tie(s.feature_source, s.feature_arity) = feature_source_of(p, cs->callees);
      s.id = static_cast<ScgId>(plan.scgs.size());
      plan.by_callsite[cs->id] = s.id;
      plan.delegated_callsites.insert(cs->id);
      plan.scgs.push_back(std::move(s));
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------

std::vector<Activation> collect_activations(const Trace &t, std::optional<std::size_t> skip) {
  std::vector<Activation> done;
  std::vector<std::pair<Activation, std::set<FuncId>>> open;
  for (std::size_t i = 0; i < t.events.size(); ++i) {
    if (skip && *skip == i)
      continue;
    const auto &e = t.events[i];
    if (const auto *en = std::get_if<EnterScg>(&e)) {
      Activation a;
      a.scg = en->scg;
      a.features = en->features;
      a.begin = i;
      open.emplace_back(std::move(a), std::set<FuncId>{});
    } else if (const auto *x = std::get_if<ExitScg>(&e)) {
      if (open.empty() || open.back().first.scg != x->scg)
        throw std::runtime_error("unbalanced scope exit at event " + std::to_string(i));
      auto [a, set] = std::move(open.back());
      open.pop_back();
      a.end = i;
      a.executed.assign(set.begin(), set.end());
      done.push_back(std::move(a));
    } else if (const auto *c = std::get_if<Call>(&e)) {
      if (!open.empty()) {
        open.back().second.insert(c->callee);
        ++open.back().first.calls;
      }
    }
  }
  // Activations left open (truncated traces) end at the last event.
  while (!open.empty()) {
    auto [a, set] = std::move(open.back());
    open.pop_back();
    a.end = t.events.size();
    a.executed.assign(set.begin(), set.end());
    done.push_back(std::move(a));
  }
  std::sort(done.begin(), done.end(),
            [](const Activation &a, const Activation &b) { return a.begin < b.begin; });
  return done;
}

std::vector<Pscg> enumerate_pscgs(const Scg &scg, const std::vector<Activation> &activations) {
  std::map<std::vector<FuncId>, std::size_t> support;
  for (const auto &a : activations)
    if (a.scg == scg.id)
      ++support[a.executed];
  std::vector<Pscg> out;
  for (const auto &[set, n] : support)
    out.push_back(Pscg{0, scg.id, set, n});
  std::stable_sort(out.begin(), out.end(),
                   [](const Pscg &a, const Pscg &b) { return a.support > b.support; });
  for (std::uint32_t i = 0; i < out.size(); ++i)
    out[i].id = i;
  return out;
}

std::vector<Pscg> enumerate_pscgs(const Scg &scg, const std::vector<Trace> &traces) {
  std::vector<Activation> all;
  for (const auto &t : traces) {
    auto acts = collect_activations(t);
    all.insert(all.end(), acts.begin(), acts.end());
  }
  return enumerate_pscgs(scg, all);
}

std::vector<CallsiteId> rectification_callsites(const Program &p, const ScopePlan &plan,
                                                const Scg &scg,
                                                const std::vector<FuncId> &predicted) {
  auto in_set = [&](FuncId f) {
    return std::binary_search(predicted.begin(), predicted.end(), f);
  };
  std::vector<CallsiteId> rps;
  std::set<CallsiteId> seen_rp;
  auto check = [&](CallsiteId c) {
    const Callsite *cs = p.callsite(c);
    if (std::any_of(cs->callees.begin(), cs->callees.end(), [&](FuncId g) { return !in_set(g); }))
      if (seen_rp.insert(c).second)
        rps.push_back(c);
  };

  std::vector<bool> visited(p.functions.size(), false);
  std::function<void(FuncId)> dfs = [&](FuncId f) {
    if (visited[f])
      return;
    visited[f] = true;
    std::vector<CallsiteId> own;
    for (CallsiteId c : p.function(f).callsites())
      if (scg.id != 0 || !plan.delegated(c))
        own.push_back(c);
    for (CallsiteId c : own)
      check(c);
    for (CallsiteId c : own)
      for (FuncId g : p.callsite(c)->callees)
        if (in_set(g) && scg.contains(g))
          dfs(g);
  };

  for (CallsiteId c : scg.entry_callsites)
    check(c);
  for (CallsiteId c : scg.entry_callsites)
    for (FuncId g : p.callsite(c)->callees)
      if (in_set(g))
        dfs(g);
  // Predicted functions not reachable through other predicted functions
  // still get their outgoing edges gated.
  for (FuncId f : predicted)
    if (scg.contains(f))
      dfs(f);
  return rps;
}

std::vector<RectificationPoint> instrument_at_rps(const Program &p, const ScopePlan &plan,
                                                  const Scg &scg, const std::vector<Pscg> &pscgs) {
  std::vector<RectificationPoint> out;
  for (const auto &ps : pscgs) {
    auto rectify = set_difference(scg.functions, ps.functions);
    for (CallsiteId c : rectification_callsites(p, plan, scg, ps.functions)) {
      RectificationPoint rp;
      rp.scg = scg.id;
      rp.pscg = ps.id;
      rp.callsite = c;
      if (auto loc = p.location_of(c))
        rp.caller = loc->function;
      rp.rectify_set = rectify;
      out.push_back(std::move(rp));
    }
  }
  return out;
}

void require_supported(RpSemantics s) {
  if (s == RpSemantics::lazy)
    throw std::invalid_argument(
        "lazy rectification (service one callee, keep other RPs armed) is not supported");
}

} // namespace pdsg
