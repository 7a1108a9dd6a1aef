#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pdsg/ensue.hpp"
#include "pdsg/program.hpp"
#include "pdsg/workload.hpp"

namespace pdsg {

struct FuzzOptions {
  std::size_t n = 500;
  std::uint64_t seed = 1;
  /// Every `cyclic_every`-th program gets loops and recursion and is held
  /// to oracle-subset instead of equality. 0 disables cyclic programs.
  std::size_t cyclic_every = 3;
  std::size_t traces_per_program = 4;
  unsigned threads = 0; // 0: hardware concurrency
  OracleOptions oracle;
  RandomProgramOptions shape;
  WorkloadOptions workload;
};

enum class CheckStatus { ok, failed, skipped };

struct CheckResult {
  CheckStatus status = CheckStatus::ok;
  std::string detail;
};

/// One program through all checks: derived ensue vs. oracle (equality when
/// `exact`, subset otherwise), workload validity, and replay soundness
/// under the trained, fallback and adversarial predictors.
CheckResult check_program(const Program &p, bool exact, std::uint64_t seed,
                          const FuzzOptions &opts);

struct Counterexample {
  std::size_t index = 0;
  std::uint64_t program_seed = 0;
  bool cyclic = false;
  std::string detail;
  Program minimized;
};

struct FuzzReport {
  std::size_t programs = 0;
  std::size_t cyclic = 0;
  std::size_t skipped = 0;
  std::vector<Counterexample> failures;
};

FuzzReport run_fuzz(const FuzzOptions &opts);

/// Greedy reduction: drops callsites, indirect callees, CFG edges and
/// unreachable functions while the program stays valid, callsite-uniform
/// and `still_fails` keeps returning true.
Program minimize_program(const Program &p, const std::function<bool(const Program &)> &still_fails);

} // namespace pdsg
