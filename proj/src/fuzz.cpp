#include "pdsg/fuzz.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

#include "pdsg/facts.hpp"
#include "pdsg/predictor.hpp"
#include "pdsg/runtime.hpp"
#include "pdsg/scope.hpp"

namespace pdsg {

namespace {

std::string pair_list(const std::vector<CallsitePair> &v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size() && i < 8; ++i)
    out << (i ? " " : "") << '(' << v[i].first << ',' << v[i].second << ')';
  if (v.size() > 8)
    out << " ...";
  return out.str();
}

} // namespace

CheckResult check_program(const Program &p, bool exact, std::uint64_t seed,
                          const FuzzOptions &opts) {
  EnsueDb db = derive(extract_factbase(p));
  OracleResult oracle;
  try {
    oracle = oracle_ensue(p, opts.oracle);
  } catch (const OracleBudgetExceeded &) {
    return {CheckStatus::skipped, "oracle budget exceeded"};
  }
  std::vector<CallsitePair> missing, extra;
  std::set_difference(oracle.pairs.begin(), oracle.pairs.end(), db.pairs().begin(),
                      db.pairs().end(), std::back_inserter(missing));
  std::set_difference(db.pairs().begin(), db.pairs().end(), oracle.pairs.begin(),
                      oracle.pairs.end(), std::back_inserter(extra));
  if (!missing.empty())
    return {CheckStatus::failed, "oracle pairs not derived: " + pair_list(missing)};
  if (exact && !extra.empty())
    return {CheckStatus::failed, "derived pairs the oracle never sees: " + pair_list(extra)};

  ScopePlan plan = find_scg_entries(p);
  auto traces = generate_workload(p, plan, seed, opts.traces_per_program, opts.workload);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (auto err = validate_trace(p, traces[i]))
      return {CheckStatus::failed, "trace " + std::to_string(i) + " invalid: " + *err};
    auto seq = traces[i].call_sequence();
    for (std::size_t k = 0; k + 1 < seq.size(); ++k)
      if (!db.check_pair(seq[k], seq[k + 1]))
        return {CheckStatus::failed, "trace " + std::to_string(i) + " has non-ensue pair (" +
                                         std::to_string(seq[k]) + "," +
                                         std::to_string(seq[k + 1]) + ")"};
  }
  PredictorModel model = fit_all(p, plan, traces);
  for (auto mode : {PredictorMode::model, PredictorMode::fallback, PredictorMode::adversarial}) {
    SimConfig cfg;
    cfg.predictor = mode;
    Simulator sim(p, plan, db, &model, cfg);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      auto r = sim.run(traces[i]);
      if (r.verdict != Verdict::clean || !r.refcounts_released)
        return {CheckStatus::failed, std::string("replay under ") + to_string(mode) + " predictor: " +
                                         to_string(r.verdict) + " " + r.detail};
    }
  }
  return {};
}

namespace {

// Keeps functions reachable from the entry, renumbering ids.
std::optional<Program> drop_unreachable(const Program &p) {
  auto keep = reachable_functions(p);
  if (keep.size() == p.functions.size())
    return std::nullopt;
  std::vector<std::int64_t> remap(p.functions.size(), -1);
  for (std::size_t i = 0; i < keep.size(); ++i)
    remap[keep[i]] = static_cast<std::int64_t>(i);
  Program q;
  q.name = p.name;
  q.page_size = p.page_size;
  q.entry = static_cast<FuncId>(remap[p.entry]);
  for (FuncId f : keep) {
    Function fn = p.functions[f];
    for (auto &b : fn.blocks)
      if (b.callsite)
        for (auto &c : b.callsite->callees)
          c = static_cast<FuncId>(remap[c]);
    q.functions.push_back(std::move(fn));
  }
  return q;
}

bool acceptable(Program &q) {
  try {
    q.finalize();
  } catch (const IrError &) {
    return false;
  }
  if (reachable_functions(q).size() != q.functions.size())
    return false;
  for (const auto &fn : q.functions) {
    auto r = reachable_blocks(fn);
    if (std::find(r.begin(), r.end(), false) != r.end())
      return false;
  }
  return callsite_uniform(q);
}

} // namespace

Program minimize_program(const Program &p, const std::function<bool(const Program &)> &still_fails) {
  Program cur = p;
  auto attempt = [&](Program q) {
    if (!acceptable(q) || !still_fails(q))
      return false;
    cur = std::move(q);
    return true;
  };
  bool progress = true;
  while (progress) {
    progress = false;
    if (auto q = drop_unreachable(cur))
      progress |= attempt(std::move(*q));
    for (FuncId f = 0; f < cur.functions.size(); ++f) {
      for (BlockId b = 0; b < cur.functions[f].blocks.size(); ++b) {
        if (cur.functions[f].blocks[b].callsite) {
          Program q = cur;
          q.functions[f].blocks[b].callsite.reset();
          if (attempt(std::move(q))) {
            progress = true;
            continue;
          }
          const auto &callees = cur.functions[f].blocks[b].callsite->callees;
          for (std::size_t k = 0; callees.size() > 1 && k < callees.size(); ++k) {
            Program r = cur;
            auto &cs = *r.functions[f].blocks[b].callsite;
            cs.callees.erase(cs.callees.begin() + static_cast<std::ptrdiff_t>(k));
            if (attempt(std::move(r))) {
              progress = true;
              break;
            }
          }
        }
        for (std::size_t k = 0; k < cur.functions[f].blocks[b].successors.size(); ++k) {
          Program q = cur;
          auto &succ = q.functions[f].blocks[b].successors;
          succ.erase(succ.begin() + static_cast<std::ptrdiff_t>(k));
          auto &fn = q.functions[f];
          fn.exit_blocks.clear();
          for (BlockId x = 0; x < fn.blocks.size(); ++x)
            if (fn.blocks[x].successors.empty())
              fn.exit_blocks.push_back(x);
          if (attempt(std::move(q))) {
            progress = true;
            break;
          }
        }
      }
    }
  }
  return cur;
}

FuzzReport run_fuzz(const FuzzOptions &opts) {
  struct Slot {
    bool cyclic = false;
    std::uint64_t seed = 0;
    CheckResult result;
    std::optional<Program> program;
  };
  std::vector<Slot> slots(opts.n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= opts.n)
        return;
      Slot &s = slots[i];
      s.cyclic = opts.cyclic_every && i % opts.cyclic_every == opts.cyclic_every - 1;
      s.seed = mix_seed({opts.seed, i});
      RandomProgramOptions shape = opts.shape;
      shape.cyclic = s.cyclic;
      Program p = random_program(s.seed, shape);
      s.result = check_program(p, !s.cyclic, s.seed, opts);
      if (s.result.status == CheckStatus::failed)
        s.program = std::move(p);
    }
  };
  unsigned threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back(worker);
  for (auto &t : pool)
    t.join();

  FuzzReport rep;
  rep.programs = opts.n;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Slot &s = slots[i];
    rep.cyclic += s.cyclic;
    if (s.result.status == CheckStatus::skipped)
      ++rep.skipped;
    if (s.result.status != CheckStatus::failed)
      continue;
    Counterexample cx;
    cx.index = i;
    cx.program_seed = s.seed;
    cx.cyclic = s.cyclic;
    cx.detail = s.result.detail;
    cx.minimized = minimize_program(*s.program, [&](const Program &q) {
      return check_program(q, !s.cyclic, s.seed, opts).status == CheckStatus::failed;
    });
    rep.failures.push_back(std::move(cx));
  }
  return rep;
}

} // namespace pdsg
