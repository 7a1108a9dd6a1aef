#include "pdsg/runtime.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <set>
#include <sstream>

namespace pdsg {

const char *to_string(PredictorMode m) {
  switch (m) {
  case PredictorMode::model:
    return "model";
  case PredictorMode::fallback:
    return "fallback";
  case PredictorMode::adversarial:
    return "adversarial";
  case PredictorMode::oracle:
    return "oracle";
  }
  return "?";
}

const char *to_string(LayoutMode m) {
  return m == LayoutMode::declaration ? "declaration" : "colocate";
}

std::optional<PredictorMode> parse_predictor_mode(std::string_view s) {
  if (s == "model" || s == "trained")
    return PredictorMode::model;
  if (s == "fallback")
    return PredictorMode::fallback;
  if (s == "adversarial")
    return PredictorMode::adversarial;
  if (s == "oracle")
    return PredictorMode::oracle;
  return std::nullopt;
}

std::optional<LayoutMode> parse_layout_mode(std::string_view s) {
  if (s == "declaration")
    return LayoutMode::declaration;
  if (s == "colocate")
    return LayoutMode::colocate;
  return std::nullopt;
}

const char *to_string(Verdict v) {
  switch (v) {
  case Verdict::clean:
    return "clean";
  case Verdict::attack:
    return "attack";
  case Verdict::fault:
    return "fault";
  }
  return "?";
}

MalformedTrace::MalformedTrace(std::size_t event, const std::string &message)
    : std::runtime_error("malformed trace at event " + std::to_string(event) + ": " + message),
      event_(event) {}

std::vector<std::uint64_t> Layout::pages_of(FuncId f) const {
  std::vector<std::uint64_t> out;
  for (const auto &pc : pieces[f])
    out.push_back(pc.page);
  return out;
}

Layout layout_functions(const Program &p, std::uint64_t page_size, LayoutMode mode,
                        const std::vector<std::vector<Pscg>> *pscgs) {
  if (page_size == 0)
    throw std::invalid_argument("page size must be positive");
  Layout out;
  out.page_size = page_size;
  out.pieces.resize(p.functions.size());
  std::vector<bool> placed(p.functions.size(), false);
  auto take = [&](FuncId f) {
    if (!placed[f]) {
      placed[f] = true;
      out.order.push_back(f);
    }
  };
  if (mode == LayoutMode::colocate && pscgs) {
    std::vector<const Pscg *> all;
    for (const auto &v : *pscgs)
      for (const auto &ps : v)
        all.push_back(&ps);
    std::stable_sort(all.begin(), all.end(),
                     [](const Pscg *a, const Pscg *b) { return a->support > b->support; });
    for (const Pscg *ps : all)
      for (FuncId f : ps->functions)
        take(f);
  }
  for (FuncId f = 0; f < p.functions.size(); ++f)
    take(f);

  std::uint64_t cursor = 0;
  for (FuncId f : out.order) {
    std::uint64_t size = p.function(f).size_bytes;
    std::uint64_t room = page_size - cursor % page_size;
    if (size > room && cursor % page_size != 0)
      cursor += room;
    std::uint64_t left = size;
    while (left > 0) {
      std::uint64_t page = cursor / page_size;
      std::uint64_t chunk = std::min(left, page_size - cursor % page_size);
      out.pieces[f].push_back(PagePiece{page, chunk});
      cursor += chunk;
      left -= chunk;
    }
  }
  out.page_count = (cursor + page_size - 1) / page_size;
  return out;
}

void PageMap::acquire(const std::vector<std::uint64_t> &pages) {
  for (auto pg : pages)
    ++refcount_[pg];
}

void PageMap::release(const std::vector<std::uint64_t> &pages) {
  for (auto pg : pages) {
    if (refcount_[pg] == 0)
      throw std::logic_error("page released more often than acquired");
    --refcount_[pg];
  }
}

bool PageMap::executable(FuncId f) const {
  for (const auto &pc : layout_->pieces[f])
    if (refcount_[pc.page] == 0)
      return false;
  return true;
}

bool PageMap::all_released() const {
  return std::all_of(refcount_.begin(), refcount_.end(), [](std::uint32_t c) { return c == 0; });
}

// ---------------------------------------------------------------------------

Simulator::Simulator(const Program &p, const ScopePlan &plan, const EnsueDb &db,
                     const PredictorModel *model, const SimConfig &config,
                     const std::vector<std::vector<Pscg>> *colocate_pscgs)
    : p_(p), plan_(plan), db_(db), model_(model), config_(config) {
  if (config_.predictor == PredictorMode::model && !model_)
    throw std::invalid_argument("model predictor selected without a model");
  if (config_.history < 1)
    throw std::invalid_argument("history length must be at least 1");
  layout_ = layout_functions(p, config_.page_size ? config_.page_size : p.page_size, config_.layout,
                             colocate_pscgs);
  for (const auto &fn : p.functions)
    total_gadgets_ += static_cast<double>(fn.gadget_count);
  pages_.resize(p.functions.size());
  for (FuncId f = 0; f < p.functions.size(); ++f)
    pages_[f] = layout_.pages_of(f);
}

const std::set<CallsiteId> &Simulator::rps_for(ScgId scg, const std::vector<FuncId> &predicted) {
  auto key = std::make_pair(scg, predicted);
  if (auto it = rp_cache_.find(key); it != rp_cache_.end())
    return it->second;
  auto v = rectification_callsites(p_, plan_, plan_.scgs[scg], predicted);
  return rp_cache_.emplace(std::move(key), std::set<CallsiteId>(v.begin(), v.end())).first->second;
}

namespace {

struct OpenActivation {
  ScgId scg = 0;
  std::vector<FuncId> predicted;
  const std::set<CallsiteId> *rps = nullptr;
  bool rectified = false;
  std::vector<std::vector<std::uint64_t>> held; // page lists acquired
};

std::vector<std::uint64_t> pages_for(const std::vector<std::vector<std::uint64_t>> &pages,
                                     const std::vector<FuncId> &fs) {
  std::set<std::uint64_t> u;
  for (FuncId f : fs)
    u.insert(pages[f].begin(), pages[f].end());
  return {u.begin(), u.end()};
}

} // namespace

RunResult Simulator::run(const Trace &t) {
  RunResult res;
  Metrics &m = res.metrics;
  PageMap pm(layout_);
  std::vector<OpenActivation> acts;
  std::vector<FuncId> frames;
  std::deque<CallsiteId> history;

  std::map<std::size_t, std::vector<FuncId>> oracle_sets;
  if (config_.predictor == PredictorMode::oracle)
    for (const auto &a : collect_activations(t, t.attack_index))
      oracle_sets[a.begin] = a.executed;

  auto sample = [&] {
    SurfaceSample s;
    for (FuncId f = 0; f < p_.functions.size(); ++f) {
      std::uint64_t active_bytes = 0;
      for (const auto &pc : layout_.pieces[f])
        if (pm.page_active(pc.page))
          active_bytes += pc.bytes;
      if (active_bytes == p_.function(f).size_bytes)
        ++s.functions;
      s.bytes += active_bytes;
      s.gadgets += static_cast<double>(p_.function(f).gadget_count) *
                   static_cast<double>(active_bytes) /
                   static_cast<double>(p_.function(f).size_bytes);
    }
    double red = total_gadgets_ > 0 ? 100.0 * (1.0 - s.gadgets / total_gadgets_) : 100.0;
    if (m.samples == 0) {
      m.reduction_min = m.reduction_max = red;
    } else {
      m.reduction_min = std::min(m.reduction_min, red);
      m.reduction_max = std::max(m.reduction_max, red);
    }
    m.reduction_sum += red;
    ++m.samples;
    m.surface.push_back(s);
  };

  auto halt = [&](Verdict v, std::size_t i, std::string why) {
    res.verdict = v;
    res.halted_at = i;
    res.detail = std::move(why);
  };

  for (std::size_t i = 0; i < t.events.size() && !res.halted_at; ++i) {
    const auto &e = t.events[i];
    ++m.events;
    if (const auto *en = std::get_if<EnterScg>(&e)) {
      if (en->scg >= plan_.scgs.size())
        throw MalformedTrace(i, "unknown SCG " + std::to_string(en->scg));
      const Scg &scg = plan_.scgs[en->scg];
      OpenActivation a;
      a.scg = scg.id;
      bool counted = true;
      switch (config_.predictor) {
      case PredictorMode::model: {
        std::optional<PscgId> id;
        try {
          id = model_->predict_id(scg.id, en->features);
        } catch (const ArityError &err) {
          throw MalformedTrace(i, err.what());
        }
        if (id) {
          a.predicted = model_->entries[scg.id].pscgs.at(*id).functions;
        } else {
          a.predicted = scg.functions;
          counted = false;
        }
        break;
      }
      case PredictorMode::fallback:
        a.predicted = scg.functions;
        counted = false;
        break;
      case PredictorMode::adversarial:
        break;
      case PredictorMode::oracle:
        a.predicted = oracle_sets.at(i);
        break;
      }
      if (counted)
        ++m.predicts;
      else
        ++m.fallbacks;
      a.rps = &rps_for(scg.id, a.predicted);
      a.held.push_back(pages_for(pages_, a.predicted));
      pm.acquire(a.held.back());
      acts.push_back(std::move(a));
    } else if (const auto *x = std::get_if<ExitScg>(&e)) {
      if (acts.empty() || acts.back().scg != x->scg)
        throw MalformedTrace(i, "exit of SCG " + std::to_string(x->scg) + " that is not innermost");
      for (const auto &h : acts.back().held)
        pm.release(h);
      acts.pop_back();
    } else if (const auto *c = std::get_if<Call>(&e)) {
      if (c->callee >= p_.functions.size())
        throw MalformedTrace(i, "unknown callee");
      history.push_back(c->callsite);
      if (history.size() > config_.history)
        history.pop_front();
      if (!acts.empty()) {
        auto &a = acts.back();
        if (!a.rectified && !std::binary_search(a.predicted.begin(), a.predicted.end(), c->callee) &&
            a.rps->count(c->callsite)) {
          ++m.ensue_checks;
          bool ok = true;
          for (std::size_t k = 0; k + 1 < history.size() && ok; ++k)
            ok = db_.check_pair(history[k], history[k + 1]);
          if (!ok) {
            ++m.attacks_detected;
            halt(Verdict::attack, i, "path check failed at callsite " + std::to_string(c->callsite));
          } else {
            a.held.push_back(pages_for(pages_, set_difference(plan_.scgs[a.scg].functions, a.predicted)));
            pm.acquire(a.held.back());
            a.rectified = true;
            ++m.rectifies;
          }
        }
      }
      if (!res.halted_at && !pm.executable(c->callee)) {
        ++m.faults;
        halt(Verdict::fault, i, "call to non-executable " + p_.function_name(c->callee));
      }
      if (!res.halted_at)
        frames.push_back(c->callee);
    } else {
      const auto &r = std::get<Return>(e);
      if (frames.empty() || frames.back() != r.function)
        throw MalformedTrace(i, "return from " + p_.function_name(r.function) +
                                    " which is not on top of the stack");
      frames.pop_back();
    }
    sample();
  }
  if (!res.halted_at) {
    if (!frames.empty() || !acts.empty())
      res.detail = "trace ended with open frames or scopes";
    res.refcounts_released = pm.all_released();
  } else {
    // A halted run tears down whatever was still active.
    for (auto it = acts.rbegin(); it != acts.rend(); ++it)
      for (const auto &h : it->held)
        pm.release(h);
    res.refcounts_released = pm.all_released();
  }
  return res;
}

// ---------------------------------------------------------------------------

Summary summarize(const std::vector<RunResult> &runs) {
  Summary s;
  double sum = 0;
  std::size_t n = 0;
  for (const auto &r : runs) {
    ++s.runs;
    s.clean += r.verdict == Verdict::clean;
    s.attacks += r.verdict == Verdict::attack;
    s.faults += r.verdict == Verdict::fault;
    const auto &m = r.metrics;
    s.predicts += m.predicts;
    s.fallbacks += m.fallbacks;
    s.rectifies += m.rectifies;
    s.ensue_checks += m.ensue_checks;
    if (m.samples) {
      s.reduction_min = n ? std::min(s.reduction_min, m.reduction_min) : m.reduction_min;
      s.reduction_max = n ? std::max(s.reduction_max, m.reduction_max) : m.reduction_max;
      sum += m.reduction_sum;
      n += m.samples;
    }
  }
  s.reduction_avg = n ? sum / static_cast<double>(n) : 100.0;
  return s;
}

nlohmann::ordered_json run_record(std::size_t index, const RunResult &r) {
  const auto &m = r.metrics;
  nlohmann::ordered_json j;
  j["trace"] = index;
  j["verdict"] = to_string(r.verdict);
  j["predicts"] = m.predicts;
  j["fallbacks"] = m.fallbacks;
  j["rectifies"] = m.rectifies;
  j["ensue_checks"] = m.ensue_checks;
  j["attacks_detected"] = m.attacks_detected;
  j["faults"] = m.faults;
  j["events"] = m.events;
  j["samples"] = m.samples;
  j["reduction_min"] = m.reduction_min;
  j["reduction_max"] = m.reduction_max;
  j["reduction_sum"] = m.reduction_sum;
  j["reduction_avg"] = m.reduction_avg();
  j["refcounts_released"] = r.refcounts_released;
  if (r.halted_at)
    j["halted_at"] = *r.halted_at;
  if (!r.detail.empty())
    j["detail"] = r.detail;
  return j;
}

nlohmann::ordered_json summary_record(const std::string &program, const Summary &s) {
  nlohmann::ordered_json j;
  j["program"] = program;
  j["runs"] = s.runs;
  j["clean"] = s.clean;
  j["attacks"] = s.attacks;
  j["faults"] = s.faults;
  j["predicts"] = s.predicts;
  j["fallbacks"] = s.fallbacks;
  j["rectifies"] = s.rectifies;
  j["rectify_percent"] = s.rectify_percent();
  j["ensue_checks"] = s.ensue_checks;
  j["reduction_min"] = s.reduction_min;
  j["reduction_max"] = s.reduction_max;
  j["reduction_avg"] = s.reduction_avg;
  return j;
}

Summary summary_from_records(const std::vector<nlohmann::json> &records) {
  std::vector<RunResult> runs;
  for (const auto &j : records) {
    RunResult r;
    std::string v = j.at("verdict").get<std::string>();
    r.verdict = v == "attack" ? Verdict::attack : v == "fault" ? Verdict::fault : Verdict::clean;
    auto &m = r.metrics;
    m.predicts = j.at("predicts").get<std::size_t>();
    m.fallbacks = j.at("fallbacks").get<std::size_t>();
    m.rectifies = j.at("rectifies").get<std::size_t>();
    m.ensue_checks = j.at("ensue_checks").get<std::size_t>();
    m.samples = j.at("samples").get<std::size_t>();
    m.reduction_min = j.at("reduction_min").get<double>();
    m.reduction_max = j.at("reduction_max").get<double>();
    m.reduction_sum = j.at("reduction_sum").get<double>();
    runs.push_back(std::move(r));
  }
  return summarize(runs);
}

namespace {

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

} // namespace

std::string format_summary_table(const std::vector<std::pair<std::string, Summary>> &rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %6s %6s %6s %6s %9s %10s %11s %7s %8s %8s %8s\n",
                "program", "runs", "clean", "attack", "fault", "#predicts", "#rectifies",
                "%rectifies", "checks", "min%", "max%", "avg%");
  out << line;
  for (const auto &[name, s] : rows) {
    std::snprintf(line, sizeof line,
                  "%-20s %6zu %6zu %6zu %6zu %9zu %10zu %11s %7zu %8s %8s %8s\n", name.c_str(),
                  s.runs, s.clean, s.attacks, s.faults, s.predicts, s.rectifies,
                  fmt("%.2f", s.rectify_percent()).c_str(), s.ensue_checks,
                  fmt("%.2f", s.reduction_min).c_str(), fmt("%.2f", s.reduction_max).c_str(),
                  fmt("%.2f", s.reduction_avg).c_str());
    out << line;
  }
  return out.str();
}

std::string format_ensue_table(const std::vector<EnsueStats> &rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %10s %10s %12s\n", "program", "#facts", "#ensue",
                "time(ms)");
  out << line;
  for (const auto &r : rows) {
    std::snprintf(line, sizeof line, "%-20s %10zu %10zu %12s\n", r.program.c_str(), r.facts,
                  r.ensue, r.millis ? fmt("%.3f", *r.millis).c_str() : "-");
    out << line;
  }
  return out.str();
}

} // namespace pdsg
