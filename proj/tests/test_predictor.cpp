#include "doctest.h"

#include <filesystem>

#include "pdsg/predictor.hpp"
#include "pdsg/workload.hpp"
#include "support.hpp"

using namespace pdsg;
using namespace testing;

namespace {

std::vector<Sample> xor_samples() {
  std::vector<Sample> s;
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    auto f0 = static_cast<std::int64_t>(rng.below(10));
    auto f1 = static_cast<std::int64_t>(rng.below(16));
    s.push_back({0, {f0, f1}, static_cast<PscgId>((f0 > 3) != (f1 > 7))});
  }
  return s;
}

double accuracy(const DecisionTree &t, const std::vector<Sample> &s) {
  std::size_t ok = 0;
  for (const auto &x : s)
    ok += t.predict(x.features) == x.label;
  return static_cast<double>(ok) / static_cast<double>(s.size());
}

std::vector<Trace> fig3_training(const Program &p) {
  std::vector<Trace> ts;
  for (std::int64_t x : {-5, -1, -3, -2})
    ts.push_back(fig3_run(p, x, {"F1"}));
  for (std::int64_t x : {0, 3, 9, 4})
    ts.push_back(fig3_run(p, x, {"F3"}));
  return ts;
}

} // namespace

TEST_CASE("uniform labels give a single leaf") {
  std::vector<Sample> s{{0, {1}, 0}, {0, {5}, 0}, {0, {9}, 0}};
  DecisionTree t = train(s);
  REQUIRE(t.nodes.size() == 1);
  CHECK(t.nodes[0].leaf());
  CHECK(t.predict({123}) == 0);
  CHECK(t.depth() == 0);
}

TEST_CASE("separable data splits at the midpoint") {
  DecisionTree t = train({{0, {0}, 0}, {0, {1}, 1}});
  REQUIRE(t.nodes.size() == 3);
  CHECK(t.nodes[0].feature == 0);
  CHECK(t.nodes[0].threshold == 0.5);
  CHECK(t.nodes[t.nodes[0].left].label == 0);
  CHECK(t.nodes[t.nodes[0].right].label == 1);
  CHECK(predict(t, {1}) == 1);
  CHECK(predict(t, {0}) == 0);
}

TEST_CASE("XOR data is learned exactly and matches the reference trainer") {
  auto s = xor_samples();
  DecisionTree t = train(s, kUnbounded);
  CHECK(accuracy(t, s) == 1.0);
  CHECK(t.depth() >= 2);
  CHECK(t.predict({5, 2}) == 1);
  CHECK(t.predict({1, 12}) == 1);
  CHECK(t.predict({1, 2}) == 0);
  CHECK(accuracy(train(s, 3), s) == 1.0);
  CHECK(t == ReferenceTrainer(s, kUnbounded).run());
}

TEST_CASE("trainer matches the reference on random data sets") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    std::vector<Sample> s;
    std::size_t arity = 1 + rng.below(3), n = 5 + rng.below(60), labels = 1 + rng.below(4);
    for (std::size_t i = 0; i < n; ++i) {
      FeatureVector f;
      for (std::size_t k = 0; k < arity; ++k)
        f.push_back(static_cast<std::int64_t>(rng.below(8)) - 3);
      s.push_back({0, f, static_cast<PscgId>(rng.below(labels))});
    }
    for (std::uint32_t d : {kUnbounded, 2u, 4u}) {
      DecisionTree t = train(s, d);
      CHECK(t == ReferenceTrainer(s, d).run());
      if (d != kUnbounded)
        CHECK(t.depth() <= d);
    }
  }
}

TEST_CASE("labels that are a function of the features reach accuracy 1 unbounded") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed + 1000);
    std::map<FeatureVector, PscgId> truth;
    std::vector<Sample> s;
    for (int i = 0; i < 120; ++i) {
      FeatureVector f{static_cast<std::int64_t>(rng.below(6)), static_cast<std::int64_t>(rng.below(6))};
      auto [it, fresh] = truth.emplace(f, static_cast<PscgId>(rng.below(5)));
      s.push_back({0, f, it->second});
    }
    DecisionTree t = train(s, kUnbounded);
    CHECK(accuracy(t, s) == 1.0);
    auto labels = t.labels();
    for (PscgId l : labels)
      CHECK(l < 5);
  }
}

TEST_CASE("majority ties go to the lowest label") {
  DecisionTree t = train({{0, {1}, 2}, {0, {1}, 1}}, kUnbounded);
  REQUIRE(t.nodes.size() == 1);
  CHECK(t.nodes[0].label == 1);
}

TEST_CASE("training and prediction errors") {
  CHECK_THROWS_AS(train({}), std::invalid_argument);
  CHECK_THROWS_AS(train({{0, {1}, 0}, {0, {1, 2}, 1}}), ArityError);
  DecisionTree t = train({{0, {0}, 0}, {0, {1}, 1}});
  CHECK_THROWS_AS(t.predict({1, 2}), ArityError);
  CHECK_THROWS_AS(t.predict({}), ArityError);
}

TEST_CASE("training is deterministic") {
  auto s = xor_samples();
  CHECK(train(s) == train(s));
}

TEST_CASE("fit_all on fig3: negative x predicts A, non-negative predicts B") {
  Program p = fixture("fig3");
  ScopePlan plan = find_scg_entries(p);
  PredictorModel m = fit_all(p, plan, fig3_training(p));
  REQUIRE(m.entries.size() == 1);
  CHECK_FALSE(m.entries[0].fallback());
  CHECK(m.predict_set(plan, 0, {-5}) == fset(p, {"F0", "F1", "F2"}));
  CHECK(m.predict_set(plan, 0, {9}) == fset(p, {"F0", "F2", "F3"}));
  CHECK(m.predict_set(plan, 0, {0}) == fset(p, {"F0", "F2", "F3"}));
  CHECK(m.fallback_count() == 0);
}

TEST_CASE("collect_samples labels activations with PSCG ids") {
  Program p = fixture("fig3");
  ScopePlan plan = find_scg_entries(p);
  std::vector<std::vector<Pscg>> ps;
  auto s = collect_samples(plan, fig3_training(p), &ps);
  REQUIRE(s.size() == 8);
  REQUIRE(ps.size() == 1);
  REQUIRE(ps[0].size() == 2);
  for (const auto &x : s)
    CHECK(ps[0][x.label].functions ==
          (x.features[0] < 0 ? fset(p, {"F0", "F1", "F2"}) : fset(p, {"F0", "F2", "F3"})));
}

TEST_CASE("zero traces: every entry falls back to the full SCG") {
  Program p = fixture("loops");
  ScopePlan plan = find_scg_entries(p);
  PredictorModel m = fit_all(p, plan, {});
  REQUIRE(m.entries.size() == plan.scgs.size());
  CHECK(m.fallback_count() == plan.scgs.size());
  for (const auto &scg : plan.scgs) {
    CHECK_FALSE(m.predict_id(scg.id, FeatureVector(scg.feature_arity, 0)));
    CHECK(m.predict_set(plan, scg.id, FeatureVector(scg.feature_arity, 0)) == scg.functions);
  }
}

TEST_CASE("model serialization round trip keeps every prediction") {
  Program p = fixture("loops");
  ScopePlan plan = find_scg_entries(p);
  PredictorModel m = fit_all(p, plan, generate_workload(p, plan, 3, 60), kUnbounded);
  PredictorModel back = model_from_json(p, plan, model_to_json(p, m));
  CHECK(back.max_depth == kUnbounded);
  CHECK(model_to_json(p, back).dump() == model_to_json(p, m).dump());
  Rng rng(5);
  for (int i = 0; i < 1000; ++i)
    for (const auto &scg : plan.scgs) {
      FeatureVector f;
      for (std::size_t k = 0; k < scg.feature_arity; ++k)
        f.push_back(static_cast<std::int64_t>(rng.below(41)) - 20);
      CHECK(back.predict_id(scg.id, f) == m.predict_id(scg.id, f));
    }

  auto path = std::filesystem::temp_directory_path() / "pdsg-test-model.json";
  write_model_file(p, m, path);
  CHECK(model_to_json(p, read_model_file(p, plan, path)).dump() == model_to_json(p, m).dump());
  std::filesystem::remove(path);
}

TEST_CASE("model files from another program are rejected") {
  Program p = fixture("loops");
  Program q = fixture("fig3");
  ScopePlan pp = find_scg_entries(p), qp = find_scg_entries(q);
  auto doc = model_to_json(p, fit_all(p, pp, {}));
  CHECK_THROWS(model_from_json(q, qp, doc));
}

TEST_CASE("predictions stay inside each entry's PSCG list") {
  for (std::uint64_t s = 0; s < 40; ++s) {
    Program p = random_program(mix_seed({81, s}));
    ScopePlan plan = find_scg_entries(p);
    PredictorModel m = fit_all(p, plan, generate_workload(p, plan, s, 10));
    Rng rng(s);
    for (const auto &e : m.entries)
      for (int k = 0; k < 20; ++k) {
        FeatureVector f;
        for (std::size_t i = 0; i < e.arity; ++i)
          f.push_back(static_cast<std::int64_t>(rng.below(200)) - 100);
        if (auto id = m.predict_id(e.scg, f))
          CHECK(*id < e.pscgs.size());
      }
  }
}
