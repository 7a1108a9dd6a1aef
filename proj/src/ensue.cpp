#include "pdsg/ensue.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <sstream>

namespace pdsg {

bool EnsueDb::check_pair(CallsiteId a, CallsiteId b) const {
  auto it = index_.find(a);
  return it != index_.end() && it->second.count(b) != 0;
}

EnsueDb derive(const FactBase &fb) {
  std::unordered_map<CallsiteId, std::vector<FuncId>> callees_of;   // belong(i, f) by i
  std::unordered_map<FuncId, std::vector<CallsiteId>> callers_of;   // belong(i, f) by f
  std::unordered_map<FuncId, std::vector<CallsiteId>> head_of;      // head(f, j) by f
  std::unordered_map<CallsiteId, std::vector<FuncId>> tail_owners;  // tail(f, j) by j
  std::unordered_map<CallsiteId, std::vector<CallsiteId>> next_of;  // next(_, k, j) by k
  for (auto [i, f] : fb.belong) {
    callees_of[i].push_back(f);
    callers_of[f].push_back(i);
  }
  for (auto [f, j] : fb.head)
    head_of[f].push_back(j);
  for (auto [f, j] : fb.tail)
    tail_owners[j].push_back(f);
  for (const auto &[g, k, j] : fb.next)
    next_of[k].push_back(j);
  auto is_leaf = [&](FuncId f) { return fb.leaf.count(f) != 0; };

  EnsueDb db;
  db.counts_.facts_in = fb.size();
  auto &ensue = db.pairs_;

  // ensue(i,j) <= head(f,j), belong(i,f)
  for (auto [i, f] : fb.belong)
    if (auto it = head_of.find(f); it != head_of.end())
      for (CallsiteId j : it->second)
        ensue.emplace(i, j);
  // ensue(i,j) <= next(g,i,j), belong(i,f), leaf(f)
  for (const auto &[g, i, j] : fb.next)
    if (auto it = callees_of.find(i); it != callees_of.end())
      if (std::any_of(it->second.begin(), it->second.end(), is_leaf))
        ensue.emplace(i, j);

  // last(f,i) <= tail(f,i), belong(i,g), leaf(g)
  std::vector<std::pair<FuncId, CallsiteId>> delta;
  for (auto [f, i] : fb.tail)
    if (auto it = callees_of.find(i); it != callees_of.end())
      if (std::any_of(it->second.begin(), it->second.end(), is_leaf))
        if (db.last_.emplace(f, i).second)
          delta.emplace_back(f, i);

  while (!delta.empty()) {
    ++db.rounds_;
    std::vector<std::pair<FuncId, CallsiteId>> fresh;
    for (auto [g, i] : delta) {
      auto callers = callers_of.find(g);
      if (callers == callers_of.end())
        continue;
      for (CallsiteId k : callers->second) {
        // ensue(i,j) <= next(_,k,j), belong(k,g), last(g,i)
        if (auto nx = next_of.find(k); nx != next_of.end())
          for (CallsiteId j : nx->second)
            ensue.emplace(i, j);
        // last(f,i) <= tail(f,k), belong(k,g), last(g,i)
        if (auto owners = tail_owners.find(k); owners != tail_owners.end())
          for (FuncId f : owners->second)
            if (db.last_.emplace(f, i).second)
              fresh.emplace_back(f, i);
      }
    }
    delta = std::move(fresh);
  }

  for (auto [a, b] : ensue)
    db.index_[a].insert(b);
  db.counts_.ensue_out = ensue.size();
  return db;
}

std::string serialize_ensue(const EnsueDb &db) {
  std::ostringstream out;
  for (auto [a, b] : db.pairs())
    out << "ensue(" << a << ", " << b << ").\n";
  return out.str();
}

std::string serialize_last(const Program &p, const EnsueDb &db) {
  std::vector<std::pair<FuncId, CallsiteId>> v(db.last().begin(), db.last().end());
  std::sort(v.begin(), v.end(), [&](const auto &a, const auto &b) {
    return std::tie(p.function_name(a.first), a.second) <
           std::tie(p.function_name(b.first), b.second);
  });
  std::ostringstream out;
  for (auto [f, i] : v)
    out << "last(" << p.function_name(f) << ", " << i << ").\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Oracle

namespace {

constexpr std::int64_t kEmpty = -1;

// Tarjan SCC ids over the callgraph.
std::vector<int> callgraph_sccs(const Program &p) {
  const int n = static_cast<int>(p.functions.size());
  std::vector<int> index(n, -1), low(n, 0), comp(n, -1);
  std::vector<bool> on_stack(n, false);
  std::vector<int> stack;
  int counter = 0, ncomp = 0;
  auto succs = [&](int f) {
    std::vector<int> out;
    for (const auto &b : p.functions[f].blocks)
      if (b.callsite)
        for (FuncId c : b.callsite->callees)
          out.push_back(static_cast<int>(c));
    return out;
  };
  std::function<void(int)> strong = [&](int v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    for (int w : succs(v)) {
      if (index[w] < 0) {
        strong(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      int w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        comp[w] = ncomp;
      } while (w != v);
      ++ncomp;
    }
  };
  for (int v = 0; v < n; ++v)
    if (index[v] < 0)
      strong(v);
  return comp;
}

struct Summary {
  // (first, last) of the callee's own call sequence; (kEmpty, kEmpty) when
  // an execution makes no calls at all.
  std::set<std::pair<std::int64_t, std::int64_t>> ends;
  std::set<CallsitePair> pairs;
  bool feasible() const { return !ends.empty(); }
};

class Oracle {
public:
  Oracle(const Program &p, const OracleOptions &opts) : p_(p), opts_(opts) {
    scc_ = callgraph_sccs(p);
    members_.resize(p.functions.size());
    for (FuncId f = 0; f < p.functions.size(); ++f)
      for (FuncId g = 0; g < p.functions.size(); ++g)
        if (scc_[f] == scc_[g])
          members_[f].push_back(g);
    paths_.resize(p.functions.size());
    enumerated_.assign(p.functions.size(), false);
  }

  OracleResult run() {
    OracleResult r;
    std::vector<std::uint8_t> counts(members_[p_.entry].size(), 0);
    counts[slot(p_.entry, p_.entry)] = 1;
    const Summary &s = summary(p_.entry, counts);
    r.pairs = s.pairs;
    for (auto [first, last] : s.ends)
      if (first != kEmpty)
        r.pairs.emplace(kRootCallsite, static_cast<CallsiteId>(first));
    r.paths_explored = explored_;
    return r;
  }

private:
  std::size_t slot(FuncId owner, FuncId f) const {
    const auto &m = members_[owner];
    return static_cast<std::size_t>(std::find(m.begin(), m.end(), f) - m.begin());
  }

  // Distinct callsite sequences along bounded entry-to-exit CFG paths.
  const std::vector<std::vector<CallsiteId>> &paths(FuncId f) {
    if (enumerated_[f])
      return paths_[f];
    const auto &fn = p_.functions[f];
    std::set<std::vector<CallsiteId>> seqs;
    std::vector<std::uint32_t> visits(fn.blocks.size(), 0);
    std::vector<CallsiteId> seq;
    std::function<void(BlockId)> walk = [&](BlockId b) {
      if (visits[b] > opts_.loop_bound)
        return;
      ++visits[b];
      const auto &blk = fn.blocks[b];
      if (blk.callsite)
        seq.push_back(blk.callsite->id);
      if (fn.is_exit(b)) {
        if (++explored_ > opts_.path_budget)
          throw OracleBudgetExceeded("oracle path budget of " +
                                     std::to_string(opts_.path_budget) + " exceeded");
        seqs.insert(seq);
      }
      for (BlockId s : blk.successors)
        walk(s);
      if (blk.callsite)
        seq.pop_back();
      --visits[b];
    };
    walk(fn.entry_block);
    paths_[f].assign(seqs.begin(), seqs.end());
    enumerated_[f] = true;
    return paths_[f];
  }

  const Summary &summary(FuncId g, const std::vector<std::uint8_t> &counts) {
    auto key = std::make_pair(g, counts);
    if (auto it = memo_.find(key); it != memo_.end())
      return it->second;

    Summary out;
    for (const auto &seq : paths(g)) {
      if (seq.empty()) {
        out.ends.emplace(kEmpty, kEmpty);
        continue;
      }
      // Resolve callee summaries first; a callsite with no completable
      // callee makes the whole path infeasible.
      std::vector<std::vector<const Summary *>> options(seq.size());
      bool ok = true;
      for (std::size_t k = 0; k < seq.size() && ok; ++k) {
        for (FuncId callee : p_.callsite(seq[k])->callees) {
          std::vector<std::uint8_t> next_counts;
          if (scc_[callee] == scc_[g]) {
            next_counts = counts;
            auto &c = next_counts[slot(g, callee)];
            if (c >= opts_.rec_bound)
              continue;
            ++c;
          } else {
            next_counts.assign(members_[callee].size(), 0);
            next_counts[slot(callee, callee)] = 1;
          }
          const Summary &s = summary(callee, next_counts);
          if (s.feasible())
            options[k].push_back(&s);
        }
        ok = !options[k].empty();
      }
      if (!ok)
        continue;

      std::set<CallsiteId> lasts;
      for (std::size_t k = 0; k < seq.size(); ++k) {
        CallsiteId c = seq[k];
        for (CallsiteId l : lasts)
          out.pairs.emplace(l, c);
        std::set<CallsiteId> next_lasts;
        for (const Summary *s : options[k]) {
          out.pairs.insert(s->pairs.begin(), s->pairs.end());
          for (auto [first, last] : s->ends) {
            if (first == kEmpty) {
              next_lasts.insert(c);
            } else {
              out.pairs.emplace(c, static_cast<CallsiteId>(first));
              next_lasts.insert(static_cast<CallsiteId>(last));
            }
          }
        }
        lasts = std::move(next_lasts);
      }
      for (CallsiteId l : lasts)
        out.ends.emplace(seq.front(), l);
    }
    return memo_.emplace(std::move(key), std::move(out)).first->second;
  }

  const Program &p_;
  OracleOptions opts_;
  std::vector<int> scc_;
  std::vector<std::vector<FuncId>> members_;
  std::vector<std::vector<std::vector<CallsiteId>>> paths_;
  std::vector<bool> enumerated_;
  std::map<std::pair<FuncId, std::vector<std::uint8_t>>, Summary> memo_;
  std::uint64_t explored_ = 0;
};

} // namespace

OracleResult oracle_ensue(const Program &p, const OracleOptions &opts) {
  return Oracle(p, opts).run();
}

} // namespace pdsg
