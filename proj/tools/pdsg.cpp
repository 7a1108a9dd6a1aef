#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdsg/ensue.hpp"
#include "pdsg/facts.hpp"
#include "pdsg/fuzz.hpp"
#include "pdsg/predictor.hpp"
#include "pdsg/program.hpp"
#include "pdsg/runtime.hpp"
#include "pdsg/scope.hpp"
#include "pdsg/trace.hpp"
#include "pdsg/workload.hpp"

namespace fs = std::filesystem;
using namespace pdsg;

namespace {

enum Exit : int {
  kOk = 0,
  kLoadError = 1,
  kUsage = 2,
  kAttack = 3,
  kFault = 4,
  kStageOrder = 5,
  kMalformed = 6,
  kCounterexample = 7,
};

const char *kExitCodes = "Exit codes:\n"
                         "  0 success\n"
                         "  1 program or artifact failed to load\n"
                         "  2 usage error\n"
                         "  3 attack detected (path check failed)\n"
                         "  4 fault (call into an inactive function outside any RP)\n"
                         "  5 stage-order violation (a required earlier stage output is missing)\n"
                         "  6 malformed trace\n"
                         "  7 fuzz counterexample found\n";

struct StageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  std::string out = "out";
  std::uint64_t page_size = 0;
  std::size_t history = 2;
};

void write_text(const fs::path &path, const std::string &text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Program load(const std::string &path) { return load_program_file(resolve_program_path(path)); }

std::vector<Trace> load_traces(const Program &p, const fs::path &dir) {
  if (!fs::is_directory(dir))
    throw StageError("trace directory " + dir.string() +
                     " does not exist; run `pdsg profile <program>` first");
  return read_trace_dir(p, dir);
}

int cmd_facts(const Globals &g, const std::string &program) {
  Program p = load(program);
  auto t0 = std::chrono::steady_clock::now();
  FactBase fb = extract_factbase(p);
  EnsueDb db = derive(fb);
  double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  fs::path out(g.out);
  write_text(out / "facts.dl", serialize_facts(p, fb));
  write_text(out / "ensue.dl", serialize_ensue(db));
  write_text(out / "last.dl", serialize_last(p, db));
  nlohmann::ordered_json stats;
  stats["program"] = p.name;
  stats["facts"] = fb.size();
  stats["head"] = fb.head.size();
  stats["tail"] = fb.tail.size();
  stats["next"] = fb.next.size();
  stats["leaf"] = fb.leaf.size();
  stats["belong"] = fb.belong.size();
  stats["last"] = db.last().size();
  stats["ensue"] = db.counts().ensue_out;
  stats["rounds"] = db.rounds();
  write_text(out / "stats.json", stats.dump(2) + "\n");
  std::cout << format_ensue_table({EnsueStats{p.name, fb.size(), db.counts().ensue_out, ms}});
  return kOk;
}

int cmd_analyze(const Globals &g, const std::string &program, const std::string &traces_dir) {
  Program p = load(program);
  ScopePlan plan = find_scg_entries(p);
  std::vector<Trace> traces;
  if (!traces_dir.empty())
    traces = load_traces(p, traces_dir);
  std::vector<std::vector<Pscg>> pscgs;
  collect_samples(plan, traces, &pscgs);

  std::size_t edges = 0;
  std::set<std::pair<CallsiteId, FuncId>> gated;
  for (CallsiteId c : p.callsite_ids())
    edges += p.callsite(c)->callees.size();

  nlohmann::ordered_json doc;
  doc["program"] = p.name;
  auto jscgs = nlohmann::ordered_json::array();
  std::ostringstream text;
  for (const auto &scg : plan.scgs) {
    auto rps = instrument_at_rps(p, plan, scg, pscgs[scg.id]);
    for (const auto &rp : rps)
      for (FuncId f : p.callsite(rp.callsite)->callees)
        if (!std::binary_search(pscgs[scg.id][rp.pscg].functions.begin(),
                                pscgs[scg.id][rp.pscg].functions.end(), f))
          gated.emplace(rp.callsite, f);
    nlohmann::ordered_json j;
    j["id"] = scg.id;
    j["kind"] = to_string(scg.kind);
    j["entry"] = scg.describe(p);
    j["size"] = scg.functions.size();
    auto fnames = nlohmann::ordered_json::array();
    for (FuncId f : scg.functions)
      fnames.push_back(p.function_name(f));
    j["functions"] = fnames;
    auto jp = nlohmann::ordered_json::array();
    text << "scg " << scg.id << " " << scg.describe(p) << " |scg|=" << scg.functions.size()
         << " pscgs=" << pscgs[scg.id].size() << " rps=" << rps.size() << "\n";
    for (const auto &ps : pscgs[scg.id]) {
      nlohmann::ordered_json x;
      x["id"] = ps.id;
      x["support"] = ps.support;
      auto names = nlohmann::ordered_json::array();
      text << "  pscg " << ps.id << " support=" << ps.support << " {";
      for (std::size_t k = 0; k < ps.functions.size(); ++k) {
        names.push_back(p.function_name(ps.functions[k]));
        text << (k ? "," : "") << p.function_name(ps.functions[k]);
      }
      text << "}\n";
      x["functions"] = names;
      auto xr = nlohmann::ordered_json::array();
      for (const auto &rp : rps) {
        if (rp.pscg != ps.id)
          continue;
        nlohmann::ordered_json r;
        r["callsite"] = rp.callsite;
        r["caller"] = rp.caller ? p.function_name(*rp.caller) : "<root>";
        auto rs = nlohmann::ordered_json::array();
        text << "    rp callsite " << rp.callsite << " in "
             << (rp.caller ? p.function_name(*rp.caller) : "<root>") << " rectify {";
        for (std::size_t k = 0; k < rp.rectify_set.size(); ++k) {
          rs.push_back(p.function_name(rp.rectify_set[k]));
          text << (k ? "," : "") << p.function_name(rp.rectify_set[k]);
        }
        text << "}\n";
        r["rectify_set"] = rs;
        xr.push_back(r);
      }
      x["rps"] = xr;
      jp.push_back(x);
    }
    j["pscgs"] = jp;
    j["rp_count"] = rps.size();
    jscgs.push_back(j);
  }
  double pct = edges ? 100.0 * static_cast<double>(gated.size()) / static_cast<double>(edges) : 0.0;
  doc["scgs"] = jscgs;
  doc["callgraph_edges"] = edges;
  doc["edges_with_rps"] = gated.size();
  doc["edges_with_rps_percent"] = pct;
  char line[128];
  std::snprintf(line, sizeof line, "callgraph edges %zu, gated by RPs %zu (%.2f%%)\n", edges,
                gated.size(), pct);
  text << line;
  write_text(fs::path(g.out) / "analysis.json", doc.dump(2) + "\n");
  std::cout << text.str();
  return kOk;
}

int cmd_profile(const Globals &g, const std::string &program, std::size_t n,
                const WorkloadOptions &wo) {
  Program p = load(program);
  ScopePlan plan = find_scg_entries(p);
  auto traces = generate_workload(p, plan, g.seed, n, wo);
  fs::path dir = fs::path(g.out) / "traces";
  if (fs::exists(dir))
    for (const auto &e : fs::directory_iterator(dir))
      if (e.path().extension() == ".trace")
        fs::remove(e.path());
  write_trace_dir(p, traces, dir);
  std::cout << "wrote " << traces.size() << " traces to " << dir.string() << "\n";
  return kOk;
}

int cmd_train(const Globals &g, const std::string &program, const std::string &traces_dir,
              std::uint32_t max_depth) {
  Program p = load(program);
  ScopePlan plan = find_scg_entries(p);
  auto traces = load_traces(p, traces_dir.empty() ? fs::path(g.out) / "traces" : fs::path(traces_dir));
  if (traces.empty())
    std::cerr << "warning: no traces found; every SCG uses the full-SCG fallback\n";
  PredictorModel m = fit_all(p, plan, traces, max_depth);
  fs::path path = fs::path(g.out) / "model.json";
  fs::create_directories(path.parent_path());
  write_model_file(p, m, path);
  std::size_t trained = m.entries.size() - m.fallback_count();
  std::cout << "trained " << trained << " of " << m.entries.size() << " SCG predictors ("
            << m.fallback_count() << " fallback) -> " << path.string() << "\n";
  return kOk;
}

struct SimulateArgs {
  std::string program, traces_dir, model_path, predictor = "model", layout = "declaration";
  bool attack = false;
};

int cmd_simulate(const Globals &g, const SimulateArgs &a) {
  Program p = load(a.program);
  ScopePlan plan = find_scg_entries(p);
  auto mode = parse_predictor_mode(a.predictor);
  auto layout = parse_layout_mode(a.layout);
  if (!mode || !layout)
    throw CLI::ValidationError("unknown predictor or layout mode");
  auto traces = load_traces(p, a.traces_dir.empty() ? fs::path(g.out) / "traces" : fs::path(a.traces_dir));
  std::optional<PredictorModel> model;
  if (*mode == PredictorMode::model) {
    fs::path mp = a.model_path.empty() ? fs::path(g.out) / "model.json" : fs::path(a.model_path);
    if (!fs::exists(mp))
      throw StageError("model " + mp.string() + " does not exist; run `pdsg train <program>` first");
    model = read_model_file(p, plan, mp);
  }
  std::vector<std::vector<Pscg>> pscgs;
  collect_samples(plan, traces, &pscgs);
  EnsueDb db = derive(extract_factbase(p));
  if (a.attack) {
    std::vector<Trace> mutated;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      try {
        mutated.push_back(inject_attack(traces[i], p, db, mix_seed({g.seed, i})));
      } catch (const NoAttackPossible &) {
        std::cerr << "trace " << i << ": no attack can be injected, skipped\n";
      }
    }
    if (mutated.empty())
      throw NoAttackPossible("no trace admits an injected attack");
    traces = std::move(mutated);
    write_trace_dir(p, traces, fs::path(g.out) / "attacks");
  }
  SimConfig cfg;
  cfg.page_size = g.page_size;
  cfg.history = g.history;
  cfg.predictor = *mode;
  cfg.layout = *layout;
  Simulator sim(p, plan, db, model ? &*model : nullptr, cfg, &pscgs);
  std::vector<RunResult> runs;
  std::ostringstream lines;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    try {
      runs.push_back(sim.run(traces[i]));
    } catch (const MalformedTrace &e) {
      std::cerr << "trace " << i << ": " << e.what() << "\n";
      return kMalformed;
    }
    lines << run_record(i, runs.back()).dump() << "\n";
  }
  Summary s = summarize(runs);
  write_text(fs::path(g.out) / "metrics.jsonl", lines.str());
  write_text(fs::path(g.out) / "summary.json", summary_record(p.name, s).dump(2) + "\n");
  std::cout << format_summary_table({{p.name, s}});
  for (std::size_t i = 0; i < runs.size(); ++i)
    if (runs[i].verdict != Verdict::clean)
      std::cout << "trace " << i << ": verdict=" << to_string(runs[i].verdict) << " ("
                << runs[i].detail << ")\n";
  if (s.attacks)
    return kAttack;
  if (s.faults)
    return kFault;
  return kOk;
}

int cmd_report(const Globals &g, std::vector<std::string> metrics, const std::string &program) {
  if (metrics.empty())
    metrics.push_back((fs::path(g.out) / "metrics.jsonl").string());
  std::optional<Program> p;
  if (!program.empty())
    p = load(program);
  std::vector<std::pair<std::string, Summary>> rows;
  for (const auto &m : metrics) {
    std::ifstream in(m);
    if (!in)
      throw StageError("metrics file " + m + " does not exist; run `pdsg simulate <program>` first");
    std::vector<nlohmann::json> recs;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty())
        recs.push_back(nlohmann::json::parse(line));
    std::string name = fs::path(m).parent_path().filename().string();
    if (p && metrics.size() == 1)
      name = p->name;
    rows.emplace_back(name.empty() ? m : name, summary_from_records(recs));
  }
  std::cout << format_summary_table(rows);
  if (p) {
    FactBase fb = extract_factbase(*p);
    EnsueDb db = derive(fb);
    std::cout << "\n" << format_ensue_table({EnsueStats{p->name, fb.size(), db.counts().ensue_out, {}}});
  }
  return kOk;
}

int cmd_fuzz(const Globals &g, FuzzOptions opts) {
  opts.seed = g.seed;
  FuzzReport rep = run_fuzz(opts);
  std::cout << "programs " << rep.programs << " (cyclic " << rep.cyclic << "), skipped "
            << rep.skipped << ", counterexamples " << rep.failures.size() << "\n";
  if (rep.failures.empty())
    return kOk;
  fs::path dir = fs::path(g.out) / "fuzz";
  fs::create_directories(dir);
  for (const auto &cx : rep.failures) {
    fs::path path = dir / ("counterexample-" + std::to_string(cx.index) + ".json");
    auto doc = program_to_json(cx.minimized);
    doc["fuzz"] = {{"index", cx.index}, {"program_seed", cx.program_seed},
                   {"cyclic", cx.cyclic}, {"detail", cx.detail}};
    write_text(path, doc.dump(2) + "\n");
    std::cout << "program " << cx.index << ": " << cx.detail << " -> " << path.string() << "\n";
  }
  return kCounterexample;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Predictive debloating toolkit: static call-sequence facts, SCG prediction and "
               "page-permission simulation"};
  app.footer(kExitCodes);
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--page-size", g.page_size, "Page size override (0: the program's)")
      ->capture_default_str();
  app.add_option("--history", g.history, "Call-sequence history length")
      ->check(CLI::Range(1, 16))
      ->capture_default_str();

  std::string program, traces_dir;
  auto *facts = app.add_subcommand("facts", "Extract base facts and derive ensue/last");
  facts->add_option("program", program, "Program document")->required();

  auto *analyze = app.add_subcommand("analyze", "SCG, PSCG and rectification point report");
  analyze->add_option("program", program, "Program document")->required();
  analyze->add_option("--traces", traces_dir, "Trace directory for PSCGs");

  std::size_t n = 100;
  WorkloadOptions wo;
  auto *profile = app.add_subcommand("profile", "Generate profiling traces");
  profile->add_option("program", program, "Program document")->required();
  profile->add_option("--n", n, "Number of traces")->capture_default_str();
  profile->add_option("--loop-bound", wo.loop_bound, "Back edges per loop entry")
      ->capture_default_str();
  profile->add_option("--max-depth", wo.max_depth, "Call depth budget")->capture_default_str();

  std::uint32_t max_depth = 10;
  auto *trainc = app.add_subcommand("train", "Train per-SCG decision trees");
  trainc->add_option("program", program, "Program document")->required();
  trainc->add_option("--traces", traces_dir, "Trace directory (default <out>/traces)");
  trainc->add_option("--max-depth", max_depth, "Tree depth bound (0: unbounded)")
      ->capture_default_str();

  SimulateArgs sa;
  auto *simulate = app.add_subcommand("simulate", "Replay traces through the runtime model");
  simulate->add_option("program", sa.program, "Program document")->required();
  simulate->add_option("--traces", sa.traces_dir, "Trace directory (default <out>/traces)");
  simulate->add_option("--model", sa.model_path, "Model file (default <out>/model.json)");
  simulate->add_option("--predictor", sa.predictor, "model|fallback|adversarial|oracle")
      ->check(CLI::IsMember({"model", "trained", "fallback", "adversarial", "oracle"}))
      ->capture_default_str();
  simulate->add_option("--layout", sa.layout, "declaration|colocate")
      ->check(CLI::IsMember({"declaration", "colocate"}))
      ->capture_default_str();
  simulate->add_flag("--attack", sa.attack, "Inject one attack into every trace");

  std::vector<std::string> metrics;
  auto *report = app.add_subcommand("report", "Tabulate simulation metrics");
  report->add_option("metrics", metrics, "metrics.jsonl files (default <out>/metrics.jsonl)");
  report->add_option("--program", program, "Also report fact/ensue counts for this program");

  FuzzOptions fo;
  auto *fuzz = app.add_subcommand("fuzz", "Random-program oracle and soundness checks");
  fuzz->add_option("--n", fo.n, "Number of programs")->capture_default_str();
  fuzz->add_option("--threads", fo.threads, "Worker threads (0: all cores)")->capture_default_str();
  fuzz->add_option("--cyclic-every", fo.cyclic_every, "Every k-th program is cyclic (0: none)")
      ->capture_default_str();
  fuzz->add_option("--traces", fo.traces_per_program, "Traces per program")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*facts)
      return cmd_facts(g, program);
    if (*analyze)
      return cmd_analyze(g, program, traces_dir);
    if (*profile)
      return cmd_profile(g, program, n, wo);
    if (*trainc)
      return cmd_train(g, program, traces_dir, max_depth == 0 ? kUnbounded : max_depth);
    if (*simulate)
      return cmd_simulate(g, sa);
    if (*report)
      return cmd_report(g, metrics, program);
    if (*fuzz)
      return cmd_fuzz(g, fo);
  } catch (const CLI::ValidationError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const StageError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageOrder;
  } catch (const TraceFormatError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMalformed;
  } catch (const MalformedTrace &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMalformed;
  } catch (const NoAttackPossible &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kLoadError;
  }
  return kUsage;
}
