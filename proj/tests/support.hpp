#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "pdsg/predictor.hpp"
#include "pdsg/program.hpp"
#include "pdsg/trace.hpp"

namespace testing {

using namespace pdsg;

inline Program fixture(const std::string &name) {
  return load_program_file(std::string(PDSG_SOURCE_DIR) + "/fixtures/" + name + ".json");
}

inline FuncId fid(const Program &p, const std::string &name) { return *p.find_function(name); }

inline std::vector<FuncId> fset(const Program &p, std::vector<std::string> names) {
  std::vector<FuncId> out;
  for (const auto &n : names)
    out.push_back(fid(p, n));
  std::sort(out.begin(), out.end());
  return out;
}

/// Builds event streams by name, tracking the stack so `ret()` needs no
/// argument.
class TraceBuilder {
public:
  explicit TraceBuilder(const Program &p) : p_(p) {}

  TraceBuilder &enter(ScgId s, FeatureVector f = {}) {
    t_.events.emplace_back(EnterScg{s, std::move(f)});
    return *this;
  }
  TraceBuilder &exit(ScgId s) {
    t_.events.emplace_back(ExitScg{s});
    return *this;
  }
  TraceBuilder &call(CallsiteId c, const std::string &callee) {
    FuncId g = fid(p_, callee);
    t_.events.emplace_back(Call{c, g});
    stack_.push_back(g);
    return *this;
  }
  TraceBuilder &ret() {
    t_.events.emplace_back(Return{stack_.back()});
    stack_.pop_back();
    return *this;
  }
  /// Call immediately followed by its return.
  TraceBuilder &leaf(CallsiteId c, const std::string &callee) { return call(c, callee).ret(); }
  Trace build() const { return t_; }

private:
  const Program &p_;
  Trace t_;
  std::vector<FuncId> stack_;
};

/// One fig3 run with root features {x} executing exactly `names`.
/// F0 and F2 always run; F1, F3 and F4 run when listed.
inline Trace fig3_run(const Program &p, std::int64_t x, std::vector<std::string> names) {
  auto has = [&](const char *n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  TraceBuilder b(p);
  b.enter(0, {x}).call(0, "F0");
  if (has("F1"))
    b.leaf(1, "F1");
  b.call(2, "F2");
  if (has("F3")) {
    b.call(3, "F3");
    if (has("F4"))
      b.leaf(4, "F4");
    b.ret();
  }
  b.ret().ret().exit(0);
  return b.build();
}

/// Exhaustive reference CART: scans every feature and every midpoint
/// candidate at each node, partitions by direct comparison and ranks splits
/// by exact weighted Gini impurity (lower wins, first candidate wins ties).
class ReferenceTrainer {
public:
  ReferenceTrainer(const std::vector<Sample> &s, std::uint32_t max_depth)
      : s_(s), max_depth_(max_depth) {}

  DecisionTree run() {
    t_.arity = s_.front().features.size();
    t_.max_depth = max_depth_;
    std::vector<std::size_t> all;
    for (std::size_t i = 0; i < s_.size(); ++i)
      all.push_back(i);
    grow(all, 0);
    return t_;
  }

private:
  using Wide = __int128;

  std::uint32_t grow(const std::vector<std::size_t> &idx, std::uint32_t depth) {
    auto id = static_cast<std::uint32_t>(t_.nodes.size());
    t_.nodes.emplace_back();
    std::map<PscgId, std::size_t> counts;
    for (auto i : idx)
      ++counts[s_[i].label];
    PscgId best_label = counts.begin()->first;
    for (auto [l, c] : counts)
      if (c > counts[best_label])
        best_label = l;
    t_.nodes[id].label = best_label;
    if (counts.size() == 1 || (max_depth_ != kUnbounded && depth >= max_depth_))
      return id;

    bool found = false;
    int bf = 0;
    double bthr = 0;
    Wide bnum = 0, bden = 1;
    for (std::size_t f = 0; f < t_.arity; ++f) {
      std::vector<std::int64_t> vals;
      for (auto i : idx)
        vals.push_back(s_[i].features[f]);
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
        double thr = (static_cast<double>(vals[k]) + static_cast<double>(vals[k + 1])) / 2;
        std::map<PscgId, Wide> l, r;
        Wide nl = 0, nr = 0;
        for (auto i : idx) {
          if (static_cast<double>(s_[i].features[f]) <= thr) {
            ++l[s_[i].label];
            ++nl;
          } else {
            ++r[s_[i].label];
            ++nr;
          }
        }
        Wide sl = 0, sr = 0;
        for (auto [k2, c] : l)
          sl += c * c;
        for (auto [k2, c] : r)
          sr += c * c;
        // Weighted impurity * N = (nl - sl/nl) + (nr - sr/nr).
        Wide num = (nl * nl - sl) * nr + (nr * nr - sr) * nl;
        Wide den = nl * nr;
        if (!found || num * bden < bnum * den) {
          found = true;
          bf = static_cast<int>(f);
          bthr = thr;
          bnum = num;
          bden = den;
        }
      }
    }
    if (!found)
      return id;
    std::vector<std::size_t> lo, hi;
    for (auto i : idx)
      (static_cast<double>(s_[i].features[bf]) <= bthr ? lo : hi).push_back(i);
    t_.nodes[id].feature = bf;
    t_.nodes[id].threshold = bthr;
    auto a = grow(lo, depth + 1);
    auto b = grow(hi, depth + 1);
    t_.nodes[id].left = a;
    t_.nodes[id].right = b;
    return id;
  }

  const std::vector<Sample> &s_;
  std::uint32_t max_depth_;
  DecisionTree t_;
};

} // namespace testing
