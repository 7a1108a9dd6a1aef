#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pdsg/ensue.hpp"
#include "pdsg/predictor.hpp"
#include "pdsg/program.hpp"
#include "pdsg/scope.hpp"
#include "pdsg/trace.hpp"

namespace pdsg {

enum class PredictorMode { model, fallback, adversarial, oracle };
enum class LayoutMode { declaration, colocate };

const char *to_string(PredictorMode m);
const char *to_string(LayoutMode m);
std::optional<PredictorMode> parse_predictor_mode(std::string_view s);
std::optional<LayoutMode> parse_layout_mode(std::string_view s);

struct PagePiece {
  std::uint64_t page = 0;
  std::uint64_t bytes = 0;
  bool operator==(const PagePiece &) const = default;
};

struct Layout {
  std::uint64_t page_size = 4096;
  std::uint64_t page_count = 0;
  std::vector<FuncId> order;                 // placement order
  std::vector<std::vector<PagePiece>> pieces; // per function

  std::vector<std::uint64_t> pages_of(FuncId f) const;
};

/// Packs functions back to back. A function that does not fit in the rest of
/// the current page starts on the next page boundary. `declaration` keeps
/// program order; `colocate` places PSCG members together, most supported
/// PSCG first, then everything left in program order.
Layout layout_functions(const Program &p, std::uint64_t page_size, LayoutMode mode,
                        const std::vector<std::vector<Pscg>> *pscgs = nullptr);

/// Page permissions as activation reference counts.
class PageMap {
public:
  explicit PageMap(const Layout &layout) : layout_(&layout), refcount_(layout.page_count, 0) {}

  void acquire(const std::vector<std::uint64_t> &pages);
  void release(const std::vector<std::uint64_t> &pages);
  bool page_active(std::uint64_t page) const { return refcount_[page] > 0; }
  bool executable(FuncId f) const;
  std::uint32_t refcount(std::uint64_t page) const { return refcount_[page]; }
  bool all_released() const;

private:
  const Layout *layout_;
  std::vector<std::uint32_t> refcount_;
};

struct SurfaceSample {
  std::size_t functions = 0;
  std::uint64_t bytes = 0;
  double gadgets = 0;
};

struct Metrics {
  std::size_t predicts = 0;
  std::size_t fallbacks = 0;
  std::size_t rectifies = 0;
  std::size_t ensue_checks = 0;
  std::size_t attacks_detected = 0;
  std::size_t faults = 0;
  std::size_t events = 0;
  std::vector<SurfaceSample> surface;
  /// Surface reduction in percent of the total gadget proxy.
  double reduction_min = 100;
  double reduction_max = 100;
  double reduction_sum = 0;
  std::size_t samples = 0;

  double reduction_avg() const { return samples ? reduction_sum / samples : 100.0; }
};

enum class Verdict { clean, attack, fault };
const char *to_string(Verdict v);

class MalformedTrace : public std::runtime_error {
public:
  MalformedTrace(std::size_t event, const std::string &message);
  std::size_t event() const noexcept { return event_; }

private:
  std::size_t event_;
};

struct RunResult {
  Verdict verdict = Verdict::clean;
  Metrics metrics;
  std::optional<std::size_t> halted_at;
  std::string detail;
  /// Every page refcount back at zero when the replay ended.
  bool refcounts_released = true;
};

struct SimConfig {
  /// 0 keeps the program's page size.
  std::uint64_t page_size = 0;
  std::size_t history = 2;
  PredictorMode predictor = PredictorMode::model;
  LayoutMode layout = LayoutMode::declaration;
};

/// Replays traces against one program's analysis artifacts. Not thread-safe
/// (it caches rectification points per predicted set); use one per thread.
class Simulator {
public:
  Simulator(const Program &p, const ScopePlan &plan, const EnsueDb &db,
            const PredictorModel *model, const SimConfig &config,
            const std::vector<std::vector<Pscg>> *colocate_pscgs = nullptr);

  /// Throws MalformedTrace on stack or scope violations.
  RunResult run(const Trace &t);

  const Layout &layout() const { return layout_; }
  double total_gadgets() const { return total_gadgets_; }
  /// Callsites gated for `predicted` in `scg` (cached).
  const std::set<CallsiteId> &rps_for(ScgId scg, const std::vector<FuncId> &predicted);

private:
  const Program &p_;
  const ScopePlan &plan_;
  const EnsueDb &db_;
  const PredictorModel *model_;
  SimConfig config_;
  Layout layout_;
  double total_gadgets_ = 0;
  std::vector<std::vector<std::uint64_t>> pages_;
  std::map<std::pair<ScgId, std::vector<FuncId>>, std::set<CallsiteId>> rp_cache_;
};

struct Summary {
  std::size_t runs = 0, clean = 0, attacks = 0, faults = 0;
  std::size_t predicts = 0, fallbacks = 0, rectifies = 0, ensue_checks = 0;
  double reduction_min = 100, reduction_max = 100, reduction_avg = 100;

  /// 100 * rectifies / predicts (0 when nothing was predicted).
  double rectify_percent() const { return predicts ? 100.0 * rectifies / predicts : 0.0; }
};

/// Pooled over runs: min/max over all samples, avg time-weighted over all
/// samples.
Summary summarize(const std::vector<RunResult> &runs);

nlohmann::ordered_json run_record(std::size_t index, const RunResult &r);
nlohmann::ordered_json summary_record(const std::string &program, const Summary &s);
Summary summary_from_records(const std::vector<nlohmann::json> &records);

/// Per-program rows: verdict counts, predict/rectify counts, surface reduction.
std::string format_summary_table(const std::vector<std::pair<std::string, Summary>> &rows);
/// Per-program rows: base facts, ensue relations, derivation time.
struct EnsueStats {
  std::string program;
  std::size_t facts = 0;
  std::size_t ensue = 0;
  std::optional<double> millis;
};
std::string format_ensue_table(const std::vector<EnsueStats> &rows);

} // namespace pdsg
