#include "doctest.h"

#include "pdsg/ensue.hpp"
#include "pdsg/runtime.hpp"
#include "pdsg/workload.hpp"
#include "support.hpp"

using namespace pdsg;
using namespace testing;

namespace {

Program three_hundred_byte_program(std::uint64_t page) {
  return parse_program(R"({"program":{"entry":"a","page_size":)" + std::to_string(page) +
                       R"(,"functions":[
    {"name":"a","size_bytes":100,"blocks":[{"id":"e","callsite":{"callees":["b"]},"succ":["x"]},
      {"id":"x","callsite":{"callees":["c"]}}]},
    {"name":"b","size_bytes":100,"blocks":[{"id":"e"}]},
    {"name":"c","size_bytes":100,"blocks":[{"id":"e"}]}]}})");
}

// A model for the root SCG that always predicts `set`.
PredictorModel constant_model(const Program &p, const ScopePlan &plan, std::vector<FuncId> set) {
  PredictorModel m;
  m.program = p.name;
  for (const auto &scg : plan.scgs) {
    ScgModel e;
    e.scg = scg.id;
    e.arity = scg.feature_arity;
    if (scg.id == 0) {
      e.pscgs.push_back(Pscg{0, 0, set, 1});
      e.tree = train({Sample{0, FeatureVector(scg.feature_arity, 0), 0}});
    }
    m.entries.push_back(e);
  }
  return m;
}

struct Fig3 {
  Program p = fixture("fig3");
  ScopePlan plan = find_scg_entries(p);
  EnsueDb db = derive(extract_factbase(p));
};

} // namespace

TEST_CASE("three 100-byte functions share one 4096-byte page") {
  Program p = three_hundred_byte_program(4096);
  Layout l = layout_functions(p, 4096, LayoutMode::declaration);
  CHECK(l.page_count == 1);
  for (FuncId f = 0; f < 3; ++f)
    CHECK(l.pages_of(f) == std::vector<std::uint64_t>{0});
}

TEST_CASE("three 100-byte functions with 128-byte pages get a page each") {
  Program p = three_hundred_byte_program(128);
  Layout l = layout_functions(p, 128, LayoutMode::declaration);
  CHECK(l.page_count == 3);
  for (FuncId f = 0; f < 3; ++f)
    CHECK(l.pages_of(f) == std::vector<std::uint64_t>{f});
}

TEST_CASE("large functions span pages") {
  Program p = fixture("loops");
  Layout l = layout_functions(p, 256, LayoutMode::declaration);
  CHECK(l.pages_of(fid(p, "work")).size() == 2);
  std::uint64_t bytes = 0;
  for (FuncId f = 0; f < p.functions.size(); ++f)
    for (const auto &pc : l.pieces[f])
      bytes += pc.bytes;
  std::uint64_t want = 0;
  for (const auto &fn : p.functions)
    want += fn.size_bytes;
  CHECK(bytes == want);
  CHECK_THROWS(layout_functions(p, 0, LayoutMode::declaration));
}

TEST_CASE("colocate places the hottest PSCG first") {
  Program p = fixture("fig3");
  ScopePlan plan = find_scg_entries(p);
  std::vector<std::vector<Pscg>> hot_a{{Pscg{0, 0, fset(p, {"F0", "F1", "F2"}), 9},
                                        Pscg{1, 0, fset(p, {"F0", "F2", "F3"}), 1}}};
  Layout a = layout_functions(p, 4096, LayoutMode::colocate, &hot_a);
  CHECK(a.order == fset(p, {"F0", "F1", "F2", "F3", "F4"}));
  std::vector<std::vector<Pscg>> hot_b{{Pscg{0, 0, fset(p, {"F0", "F2", "F3"}), 9},
                                        Pscg{1, 0, fset(p, {"F0", "F1", "F2"}), 1}}};
  Layout b = layout_functions(p, 4096, LayoutMode::colocate, &hot_b);
  CHECK(b.order == std::vector<FuncId>{fid(p, "F0"), fid(p, "F2"), fid(p, "F3"), fid(p, "F1"),
                                       fid(p, "F4")});
  CHECK(layout_functions(p, 4096, LayoutMode::colocate, &hot_b).pieces == b.pieces);
}

TEST_CASE("fig3: predicting A and executing A is clean with no rectification") {
  Fig3 f;
  auto model = constant_model(f.p, f.plan, fset(f.p, {"F0", "F1", "F2"}));
  Simulator sim(f.p, f.plan, f.db, &model, {});
  RunResult r = sim.run(fig3_run(f.p, -5, {"F1"}));
  CHECK(r.verdict == Verdict::clean);
  CHECK(r.metrics.predicts == 1);
  CHECK(r.metrics.rectifies == 0);
  CHECK(r.metrics.ensue_checks == 0);
  CHECK(r.refcounts_released);
}

TEST_CASE("fig3: predicting A and calling F2->F3 rectifies") {
  Fig3 f;
  auto model = constant_model(f.p, f.plan, fset(f.p, {"F0", "F1", "F2"}));
  Simulator sim(f.p, f.plan, f.db, &model, {});
  RunResult r = sim.run(fig3_run(f.p, -5, {"F1", "F3", "F4"}));
  CHECK(r.verdict == Verdict::clean);
  CHECK(r.metrics.predicts == 1);
  CHECK(r.metrics.rectifies == 1);
  CHECK(r.metrics.ensue_checks == 1);
  // the rectify sample (after C3) shows F3 and F4 on top of A
  const auto &s = r.metrics.surface;
  CHECK(s[3].functions == 3);
  CHECK(s[5].functions == 5);
  CHECK(s[5].bytes >= s[3].bytes);
  CHECK(r.refcounts_released);
}

TEST_CASE("fig3: jumping from F0 straight to F4 faults") {
  Fig3 f;
  auto model = constant_model(f.p, f.plan, fset(f.p, {"F0", "F1", "F2"}));
  Simulator sim(f.p, f.plan, f.db, &model, {});
  Trace t = TraceBuilder(f.p).enter(0, {-5}).call(0, "F0").call(4, "F4").build();
  RunResult r = sim.run(t);
  CHECK(r.verdict == Verdict::fault);
  CHECK(r.halted_at == 2u);
  CHECK(r.metrics.ensue_checks == 0);
  CHECK(r.refcounts_released);
}

TEST_CASE("listing3: pair (2,4) at a rectification point is an attack") {
  Program p = fixture("listing3");
  ScopePlan plan = find_scg_entries(p);
  EnsueDb db = derive(extract_factbase(p));
  auto model = constant_model(p, plan, fset(p, {"main", "B", "D"}));
  SimConfig cfg;
  cfg.page_size = 32;
  Simulator sim(p, plan, db, &model, cfg);
  CHECK(sim.rps_for(0, fset(p, {"main", "B", "D"})).count(4) == 1);
  Trace t = TraceBuilder(p).enter(0).call(0, "main").leaf(2, "B").leaf(4, "E").ret().exit(0).build();
  RunResult r = sim.run(t);
  CHECK(r.verdict == Verdict::attack);
  CHECK(r.metrics.attacks_detected == 1);
  CHECK(r.metrics.ensue_checks == 1);
  CHECK(r.halted_at == 4u);
  CHECK(r.refcounts_released);
}

TEST_CASE("history longer than two catches an older bad pair") {
  Program p = fixture("listing3");
  ScopePlan plan = find_scg_entries(p);
  EnsueDb db = derive(extract_factbase(p));
  auto model = constant_model(p, plan, fset(p, {"main", "B", "D"}));
  // (2,2) is not an ensue pair but B is predicted, so nothing checks it
  // until the RP at callsite 4.
  Trace t = TraceBuilder(p).enter(0).call(0, "main").leaf(2, "B").leaf(2, "B").leaf(3, "D")
                .leaf(4, "E").ret().exit(0).build();
  SimConfig cfg;
  cfg.page_size = 32;
  Simulator two(p, plan, db, &model, cfg);
  CHECK(two.run(t).verdict == Verdict::clean);
  cfg.history = 4;
  Simulator four(p, plan, db, &model, cfg);
  CHECK(four.run(t).verdict == Verdict::attack);
}

TEST_CASE("one of four equal-gadget functions active gives 75% reduction") {
  Program p = parse_program(R"({"program":{"entry":"m","page_size":64,"functions":[
    {"name":"m","size_bytes":64,"gadget_count":10,"blocks":[{"id":"e"}]},
    {"name":"a","size_bytes":64,"gadget_count":10,"blocks":[{"id":"e"}]},
    {"name":"b","size_bytes":64,"gadget_count":10,"blocks":[{"id":"e"}]},
    {"name":"c","size_bytes":64,"gadget_count":10,"blocks":[{"id":"e"}]}]}})");
  ScopePlan plan = find_scg_entries(p);
  EnsueDb db = derive(extract_factbase(p));
  SimConfig cfg;
  cfg.predictor = PredictorMode::fallback;
  Simulator sim(p, plan, db, nullptr, cfg);
  // the program never leaves m; stop before the scope closes
  Trace t = TraceBuilder(p).enter(0).call(0, "m").ret().build();
  RunResult r = sim.run(t);
  CHECK(r.metrics.samples == 3);
  CHECK(r.metrics.reduction_avg() == 75.0);
  CHECK(r.metrics.reduction_min == 75.0);
  CHECK(r.metrics.reduction_max == 75.0);
  CHECK(sim.total_gadgets() == 40.0);
}

TEST_CASE("perfect prediction triggers no checks and no rectification") {
  for (std::uint64_t s = 0; s < 60; ++s) {
    RandomProgramOptions o;
    o.cyclic = s % 2;
    Program p = random_program(mix_seed({91, s}), o);
    ScopePlan plan = find_scg_entries(p);
    EnsueDb db = derive(extract_factbase(p));
    SimConfig cfg;
    cfg.predictor = PredictorMode::oracle;
    Simulator sim(p, plan, db, nullptr, cfg);
    for (const auto &t : generate_workload(p, plan, s, 4)) {
      RunResult r = sim.run(t);
      CHECK(r.verdict == Verdict::clean);
      CHECK(r.metrics.ensue_checks == 0);
      CHECK(r.metrics.rectifies == 0);
    }
  }
}

TEST_CASE("always-wrong predictor on fig3 activates the whole SCG at the first call") {
  Fig3 f;
  SimConfig cfg;
  cfg.predictor = PredictorMode::adversarial;
  Simulator sim(f.p, f.plan, f.db, nullptr, cfg);
  RunResult r = sim.run(fig3_run(f.p, 1, {}));
  CHECK(r.metrics.surface[0].functions == 0);
  CHECK(r.metrics.surface[1].functions == 5);
  CHECK(r.metrics.rectifies == 1);
}

TEST_CASE("always-wrong predictor: one rectification per activation") {
  for (std::uint64_t s = 0; s < 80; ++s) {
    RandomProgramOptions o;
    o.cyclic = s % 2;
    Program p = random_program(mix_seed({101, s}), o);
    ScopePlan plan = find_scg_entries(p);
    EnsueDb db = derive(extract_factbase(p));
    SimConfig cfg;
    cfg.predictor = PredictorMode::adversarial;
    Simulator sim(p, plan, db, nullptr, cfg);
    for (const auto &t : generate_workload(p, plan, s, 3)) {
      RunResult r = sim.run(t);
      CHECK(r.verdict == Verdict::clean);
      CHECK(r.refcounts_released);
      std::size_t with_calls = 0;
      for (const auto &a : collect_activations(t))
        with_calls += a.calls > 0;
      CHECK(r.metrics.rectifies == with_calls);
      CHECK(r.metrics.predicts == collect_activations(t).size());
    }
  }
}

TEST_CASE("valid traces are sound under every predictor, with refcounts restored") {
  for (std::uint64_t s = 0; s < 60; ++s) {
    RandomProgramOptions o;
    o.cyclic = s % 3 == 2;
    Program p = random_program(mix_seed({111, s}), o);
    ScopePlan plan = find_scg_entries(p);
    EnsueDb db = derive(extract_factbase(p));
    PredictorModel model = fit_all(p, plan, generate_workload(p, plan, s + 1, 6));
    auto traces = generate_workload(p, plan, s, 5);
    for (auto mode : {PredictorMode::model, PredictorMode::fallback, PredictorMode::adversarial,
                      PredictorMode::oracle})
      for (auto layout : {LayoutMode::declaration, LayoutMode::colocate}) {
        SimConfig cfg;
        cfg.predictor = mode;
        cfg.layout = layout;
        for (std::size_t h : {2u, 16u}) {
          cfg.history = h;
          std::vector<std::vector<Pscg>> ps;
          collect_samples(plan, traces, &ps);
          Simulator sim(p, plan, db, &model, cfg, &ps);
          for (const auto &t : traces) {
            RunResult r = sim.run(t);
            CHECK(r.verdict == Verdict::clean);
            CHECK(r.refcounts_released);
            CHECK(r.metrics.reduction_min <= r.metrics.reduction_avg() + 1e-9);
            CHECK(r.metrics.reduction_avg() <= r.metrics.reduction_max + 1e-9);
          }
        }
      }
  }
}

TEST_CASE("malformed traces are reported separately from verdicts") {
  Fig3 f;
  SimConfig cfg;
  cfg.predictor = PredictorMode::fallback;
  Simulator sim(f.p, f.plan, f.db, nullptr, cfg);
  Trace bad_ret;
  bad_ret.events = {EnterScg{0, {1}}, Call{0, 0}, Return{2}};
  CHECK_THROWS_AS(sim.run(bad_ret), MalformedTrace);
  Trace bad_exit;
  bad_exit.events = {EnterScg{0, {1}}, ExitScg{3}};
  CHECK_THROWS_AS(sim.run(bad_exit), MalformedTrace);
  Trace bad_scg;
  bad_scg.events = {EnterScg{9, {}}};
  CHECK_THROWS_AS(sim.run(bad_scg), MalformedTrace);
}

TEST_CASE("summaries pool samples across runs") {
  Fig3 f;
  SimConfig cfg;
  cfg.predictor = PredictorMode::adversarial;
  Simulator sim(f.p, f.plan, f.db, nullptr, cfg);
  std::vector<RunResult> runs{sim.run(fig3_run(f.p, 1, {})), sim.run(fig3_run(f.p, 1, {"F1", "F3", "F4"}))};
  Summary s = summarize(runs);
  CHECK(s.runs == 2);
  CHECK(s.clean == 2);
  CHECK(s.rectifies == 2);
  double sum = 0;
  std::size_t n = 0;
  for (const auto &r : runs)
    for (const auto &x : r.metrics.surface) {
      sum += 100.0 * (1 - x.gadgets / sim.total_gadgets());
      ++n;
    }
  CHECK(s.reduction_avg == doctest::Approx(sum / n));
  CHECK(s.reduction_min <= s.reduction_avg);
  CHECK(s.reduction_avg <= s.reduction_max);

  std::vector<nlohmann::json> recs;
  for (std::size_t i = 0; i < runs.size(); ++i)
    recs.push_back(nlohmann::json::parse(run_record(i, runs[i]).dump()));
  Summary back = summary_from_records(recs);
  CHECK(back.rectifies == s.rectifies);
  CHECK(back.reduction_avg == doctest::Approx(s.reduction_avg));
  std::string table = format_summary_table({{"fig3", s}});
  CHECK(table.find("%rectifies") != std::string::npos);
  CHECK(table.find("fig3") != std::string::npos);
  std::string et = format_ensue_table({{"fig3", 12, 4, std::nullopt}});
  CHECK(et.find("#ensue") != std::string::npos);
}

TEST_CASE("mode names parse") {
  CHECK(parse_predictor_mode("trained") == PredictorMode::model);
  CHECK(parse_predictor_mode("adversarial") == PredictorMode::adversarial);
  CHECK_FALSE(parse_predictor_mode("nope"));
  CHECK(parse_layout_mode("colocate") == LayoutMode::colocate);
  CHECK(std::string(to_string(Verdict::attack)) == "attack");
}
