#include "pdsg/predictor.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

namespace pdsg {

PscgId DecisionTree::predict(const FeatureVector &features) const {
  if (features.size() != arity)
    throw ArityError("feature arity " + std::to_string(features.size()) + ", tree expects " +
                     std::to_string(arity));
  std::uint32_t n = 0;
  while (!nodes[n].leaf()) {
    const auto &node = nodes[n];
    n = static_cast<double>(features[node.feature]) <= node.threshold ? node.left : node.right;
  }
  return nodes[n].label;
}

std::uint32_t DecisionTree::depth() const {
  std::function<std::uint32_t(std::uint32_t)> walk = [&](std::uint32_t n) -> std::uint32_t {
    if (nodes[n].leaf())
      return 0;
    return 1 + std::max(walk(nodes[n].left), walk(nodes[n].right));
  };
  return nodes.empty() ? 0 : walk(0);
}

std::vector<PscgId> DecisionTree::labels() const {
  std::vector<PscgId> out;
  for (const auto &n : nodes)
    if (n.leaf())
      out.push_back(n.label);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

using Wide = __int128;

// Split quality sum_k cL_k^2 / nL + sum_k cR_k^2 / nR as an exact fraction;
// larger is better (equivalent to lower weighted Gini impurity).
struct Score {
  Wide num = 0;
  Wide den = 1;
  bool better_than(const Score &o) const { return num * o.den > o.num * den; }
};

class Trainer {
public:
  Trainer(const std::vector<Sample> &s, std::uint32_t max_depth) : s_(s), max_depth_(max_depth) {
    PscgId top = 0;
    for (const auto &x : s)
      top = std::max(top, x.label);
    classes_ = top + 1;
  }

  DecisionTree run() {
    tree_.arity = s_.front().features.size();
    tree_.max_depth = max_depth_;
    std::vector<std::size_t> idx(s_.size());
    std::iota(idx.begin(), idx.end(), 0);
    grow(idx, 0);
    return std::move(tree_);
  }

private:
  std::uint32_t grow(const std::vector<std::size_t> &idx, std::uint32_t depth) {
    std::uint32_t id = static_cast<std::uint32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    std::vector<std::size_t> counts(classes_, 0);
    for (std::size_t i : idx)
      ++counts[s_[i].label];
    PscgId majority = 0;
    for (PscgId k = 1; k < classes_; ++k)
      if (counts[k] > counts[majority])
        majority = k;
    tree_.nodes[id].label = majority;
    bool pure = counts[majority] == idx.size();
    if (pure || (max_depth_ != kUnbounded && depth >= max_depth_))
      return id;

    int best_f = -1;
    double best_thr = 0;
    Score best;
    for (std::size_t f = 0; f < tree_.arity; ++f) {
      std::vector<std::size_t> order = idx;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return s_[a].features[f] < s_[b].features[f];
      });
      std::vector<Wide> left(classes_, 0), right(classes_, 0);
      Wide a = 0, b = 0;
      for (std::size_t i : order)
        ++right[s_[i].label];
      for (PscgId k = 0; k < classes_; ++k)
        b += right[k] * right[k];
      for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
        PscgId k = s_[order[pos]].label;
        a += 2 * left[k] + 1;
        b -= 2 * right[k] - 1;
        ++left[k];
        --right[k];
        std::int64_t v = s_[order[pos]].features[f];
        std::int64_t w = s_[order[pos + 1]].features[f];
        if (v == w)
          continue;
        Wide nl = static_cast<Wide>(pos + 1), nr = static_cast<Wide>(order.size() - pos - 1);
        Score sc{a * nr + b * nl, nl * nr};
        if (best_f < 0 || sc.better_than(best)) {
          best = sc;
          best_f = static_cast<int>(f);
          best_thr = (static_cast<double>(v) + static_cast<double>(w)) / 2.0;
        }
      }
    }
    if (best_f < 0)
      return id; // every feature constant on this node

    std::vector<std::size_t> lo, hi;
    for (std::size_t i : idx)
      (static_cast<double>(s_[i].features[best_f]) <= best_thr ? lo : hi).push_back(i);
    tree_.nodes[id].feature = best_f;
    tree_.nodes[id].threshold = best_thr;
    std::uint32_t l = grow(lo, depth + 1);
    std::uint32_t r = grow(hi, depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  const std::vector<Sample> &s_;
  std::uint32_t max_depth_;
  PscgId classes_ = 1;
  DecisionTree tree_;
};

} // namespace

DecisionTree train(const std::vector<Sample> &samples, std::uint32_t max_depth) {
  if (samples.empty())
    throw std::invalid_argument("cannot train on an empty sample set");
  for (const auto &s : samples)
    if (s.features.size() != samples.front().features.size())
      throw ArityError("samples have mixed feature arity");
  return Trainer(samples, max_depth).run();
}

std::optional<PscgId> PredictorModel::predict_id(ScgId scg, const FeatureVector &features) const {
  if (scg >= entries.size() || entries[scg].fallback())
    return std::nullopt;
  return entries[scg].tree->predict(features);
}

std::vector<FuncId> PredictorModel::predict_set(const ScopePlan &plan, ScgId scg,
                                                const FeatureVector &features) const {
  auto id = predict_id(scg, features);
  if (!id)
    return plan.scgs.at(scg).functions;
  return entries[scg].pscgs.at(*id).functions;
}

std::size_t PredictorModel::fallback_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const ScgModel &e) { return e.fallback(); }));
}

std::vector<Sample> collect_samples(const ScopePlan &plan, const std::vector<Trace> &traces,
                                    std::vector<std::vector<Pscg>> *pscgs_out) {
  std::vector<Activation> acts;
  for (const auto &t : traces) {
    auto a = collect_activations(t, t.attack_index);
    acts.insert(acts.end(), a.begin(), a.end());
  }
  std::vector<std::vector<Pscg>> pscgs;
  std::vector<std::map<std::vector<FuncId>, PscgId>> lookup;
  for (const auto &scg : plan.scgs) {
    pscgs.push_back(enumerate_pscgs(scg, acts));
    lookup.emplace_back();
    for (const auto &ps : pscgs.back())
      lookup.back()[ps.functions] = ps.id;
  }
  std::vector<Sample> out;
  for (const auto &a : acts) {
    if (a.scg >= plan.scgs.size())
      throw std::runtime_error("trace enters unknown SCG " + std::to_string(a.scg));
    if (a.features.size() != plan.scgs[a.scg].feature_arity)
      throw ArityError("SCG " + std::to_string(a.scg) + " entered with " +
                       std::to_string(a.features.size()) + " features, expected " +
                       std::to_string(plan.scgs[a.scg].feature_arity));
    out.push_back(Sample{a.scg, a.features, lookup[a.scg].at(a.executed)});
  }
  if (pscgs_out)
    *pscgs_out = std::move(pscgs);
  return out;
}

PredictorModel fit_all(const Program &p, const ScopePlan &plan, const std::vector<Trace> &traces,
                       std::uint32_t max_depth) {
  std::vector<std::vector<Pscg>> pscgs;
  auto samples = collect_samples(plan, traces, &pscgs);
  PredictorModel m;
  m.program = p.name;
  m.max_depth = max_depth;
  std::vector<std::vector<Sample>> per(plan.scgs.size());
  for (auto &s : samples)
    per[s.scg].push_back(std::move(s));
  for (const auto &scg : plan.scgs) {
    ScgModel e;
    e.scg = scg.id;
    e.arity = scg.feature_arity;
    e.pscgs = std::move(pscgs[scg.id]);
    if (!per[scg.id].empty())
      e.tree = train(per[scg.id], max_depth);
    m.entries.push_back(std::move(e));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Model file

namespace {

nlohmann::ordered_json tree_to_json(const DecisionTree &t, std::uint32_t n) {
  const auto &node = t.nodes[n];
  nlohmann::ordered_json j;
  if (node.leaf()) {
    j["label"] = node.label;
    return j;
  }
  j["feature"] = node.feature;
  j["threshold"] = node.threshold;
  j["left"] = tree_to_json(t, node.left);
  j["right"] = tree_to_json(t, node.right);
  return j;
}

std::uint32_t tree_from_json(DecisionTree &t, const nlohmann::json &j) {
  std::uint32_t id = static_cast<std::uint32_t>(t.nodes.size());
  t.nodes.emplace_back();
  if (j.contains("label")) {
    t.nodes[id].label = j.at("label").get<PscgId>();
    return id;
  }
  int f = j.at("feature").get<int>();
  if (f < 0 || static_cast<std::size_t>(f) >= t.arity)
    throw std::runtime_error("model: feature index out of range");
  t.nodes[id].feature = f;
  t.nodes[id].threshold = j.at("threshold").get<double>();
  std::uint32_t l = tree_from_json(t, j.at("left"));
  std::uint32_t r = tree_from_json(t, j.at("right"));
  t.nodes[id].left = l;
  t.nodes[id].right = r;
  return id;
}

} // namespace

nlohmann::ordered_json model_to_json(const Program &p, const PredictorModel &m) {
  nlohmann::ordered_json doc;
  doc["format"] = "pdsg-model";
  doc["version"] = 1;
  doc["program"] = m.program;
  if (m.max_depth == kUnbounded)
    doc["max_depth"] = nullptr;
  else
    doc["max_depth"] = m.max_depth;
  auto entries = nlohmann::ordered_json::array();
  for (const auto &e : m.entries) {
    nlohmann::ordered_json je;
    je["scg"] = e.scg;
    je["arity"] = e.arity;
    auto ps = nlohmann::ordered_json::array();
    for (const auto &x : e.pscgs) {
      nlohmann::ordered_json jp;
      jp["id"] = x.id;
      jp["support"] = x.support;
      auto fs = nlohmann::ordered_json::array();
      for (FuncId f : x.functions)
        fs.push_back(p.function_name(f));
      jp["functions"] = fs;
      ps.push_back(jp);
    }
    je["pscgs"] = ps;
    if (e.tree)
      je["tree"] = tree_to_json(*e.tree, 0);
    else
      je["tree"] = nullptr;
    entries.push_back(je);
  }
  doc["entries"] = entries;
  return doc;
}

PredictorModel model_from_json(const Program &p, const ScopePlan &plan, const nlohmann::json &doc) {
  if (doc.value("format", "") != "pdsg-model")
    throw std::runtime_error("model: not a pdsg-model document");
  if (doc.value("version", 0) != 1)
    throw std::runtime_error("model: unsupported version");
  PredictorModel m;
  m.program = doc.at("program").get<std::string>();
  m.max_depth = doc.at("max_depth").is_null() ? kUnbounded : doc.at("max_depth").get<std::uint32_t>();
  for (const auto &je : doc.at("entries")) {
    ScgModel e;
    e.scg = je.at("scg").get<ScgId>();
    e.arity = je.at("arity").get<std::size_t>();
    if (e.scg != m.entries.size() || e.scg >= plan.scgs.size())
      throw std::runtime_error("model: entries do not match the program's SCGs");
    for (const auto &jp : je.at("pscgs")) {
      Pscg ps;
      ps.id = jp.at("id").get<std::uint32_t>();
      ps.scg = e.scg;
      ps.support = jp.at("support").get<std::size_t>();
      for (const auto &name : jp.at("functions")) {
        auto f = p.find_function(name.get<std::string>());
        if (!f)
          throw std::runtime_error("model: unknown function " + name.get<std::string>());
        ps.functions.push_back(*f);
      }
      std::sort(ps.functions.begin(), ps.functions.end());
      e.pscgs.push_back(std::move(ps));
    }
    if (!je.at("tree").is_null()) {
      DecisionTree t;
      t.arity = e.arity;
      t.max_depth = m.max_depth;
      tree_from_json(t, je.at("tree"));
      for (PscgId l : t.labels())
        if (l >= e.pscgs.size())
          throw std::runtime_error("model: leaf label out of range");
      e.tree = std::move(t);
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.size() != plan.scgs.size())
    throw std::runtime_error("model: entries do not match the program's SCGs");
  return m;
}

void write_model_file(const Program &p, const PredictorModel &m, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << model_to_json(p, m).dump(2) << '\n';
}

PredictorModel read_model_file(const Program &p, const ScopePlan &plan,
                               const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot read " + path.string());
  return model_from_json(p, plan, nlohmann::json::parse(in));
}

} // namespace pdsg
