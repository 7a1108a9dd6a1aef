#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pdsg/program.hpp"
#include "pdsg/scope.hpp"
#include "pdsg/trace.hpp"

namespace pdsg {

using PscgId = std::uint32_t;

struct Sample {
  ScgId scg = 0;
  FeatureVector features;
  PscgId label = 0;
};

/// Internal nodes test `features[feature] <= threshold` and go left when it
/// holds. Leaves have feature == -1.
struct TreeNode {
  int feature = -1;
  double threshold = 0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  PscgId label = 0;

  bool leaf() const { return feature < 0; }
  bool operator==(const TreeNode &) const = default;
};

class ArityError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class DecisionTree {
public:
  /// Node 0 is the root.
  std::vector<TreeNode> nodes;
  std::size_t arity = 0;
  std::uint32_t max_depth = 10;

  PscgId predict(const FeatureVector &features) const;
  /// Edges on the longest root-to-leaf path.
  std::uint32_t depth() const;
  std::vector<PscgId> labels() const;

  bool operator==(const DecisionTree &) const = default;
};

/// Greedy CART on Gini impurity. Candidate thresholds are midpoints between
/// adjacent distinct values. Scores are compared exactly; ties go to the
/// lowest feature, then the lowest threshold. Impure nodes keep splitting
/// even when the best split does not lower impurity, so a node stops only
/// when pure, at the depth bound, or when every feature is constant.
/// Pass kUnbounded for no depth limit. Throws std::invalid_argument on an
/// empty sample set or mixed arities.
DecisionTree train(const std::vector<Sample> &samples, std::uint32_t max_depth = 10);

inline PscgId predict(const DecisionTree &tree, const FeatureVector &features) {
  return tree.predict(features);
}

/// One SCG's predictor: a tree over its PSCG ids, or the full-SCG fallback
/// when the SCG was never observed.
struct ScgModel {
  ScgId scg = 0;
  std::size_t arity = 0;
  std::vector<Pscg> pscgs;
  std::optional<DecisionTree> tree;

  bool fallback() const { return !tree.has_value(); }
};

struct PredictorModel {
  std::string program;
  std::uint32_t max_depth = 10;
  std::vector<ScgModel> entries; // indexed by SCG id

  /// PSCG chosen for an activation, or nullopt for fallback.
  std::optional<PscgId> predict_id(ScgId scg, const FeatureVector &features) const;
  /// Predicted function set; the whole SCG on fallback.
  std::vector<FuncId> predict_set(const ScopePlan &plan, ScgId scg,
                                  const FeatureVector &features) const;
  std::size_t fallback_count() const;
};

/// Samples from every activation in the traces (injected attack events are
/// skipped), labeled with PSCG ids from `enumerate_pscgs`.
std::vector<Sample> collect_samples(const ScopePlan &plan, const std::vector<Trace> &traces,
                                    std::vector<std::vector<Pscg>> *pscgs_out = nullptr);

PredictorModel fit_all(const Program &p, const ScopePlan &plan, const std::vector<Trace> &traces,
                       std::uint32_t max_depth = 10);

nlohmann::ordered_json model_to_json(const Program &p, const PredictorModel &m);
PredictorModel model_from_json(const Program &p, const ScopePlan &plan, const nlohmann::json &doc);
void write_model_file(const Program &p, const PredictorModel &m, const std::filesystem::path &path);
PredictorModel read_model_file(const Program &p, const ScopePlan &plan,
                               const std::filesystem::path &path);

} // namespace pdsg
