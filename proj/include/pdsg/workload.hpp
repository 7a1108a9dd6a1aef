#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <vector>

#include "pdsg/ensue.hpp"
#include "pdsg/program.hpp"
#include "pdsg/scope.hpp"
#include "pdsg/trace.hpp"

namespace pdsg {

/// Order-sensitive 64-bit seed combiner (splitmix64 finalizer per word).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words);
std::uint64_t hash_string(std::string_view s);

struct Rng {
  explicit Rng(std::uint64_t seed) : engine(seed) {}
  std::uint64_t below(std::uint64_t n) { return engine() % n; }
  bool chance(double p) { return static_cast<double>(engine() >> 11) * 0x1.0p-53 < p; }
  std::mt19937_64 engine;
};

struct WorkloadOptions {
  /// Back edges taken per loop entry before the walk heads for the exit.
  std::uint32_t loop_bound = 3;
  /// Call stack depth budget below the entry function.
  std::uint32_t max_depth = 12;
};

/// Valid execution walks. Entry features come from a per-trace stream; all
/// choices inside an SCG activation come from a stream seeded by the
/// program, the SCG and the entry features, so behavior is a function of
/// the features.
Trace generate_trace(const Program &p, const ScopePlan &plan, std::uint64_t seed,
                     std::size_t index, const WorkloadOptions &opts = {});
std::vector<Trace> generate_workload(const Program &p, const ScopePlan &plan, std::uint64_t seed,
                                     std::size_t n, const WorkloadOptions &opts = {});

class NoAttackPossible : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Inserts one Call(c, g) where (previous callsite, c) is not in the ensue
/// relation and g was never executed by any activation open at that point,
/// then truncates the trace after it. Callees of c are preferred as g.
Trace inject_attack(const Trace &t, const Program &p, const EnsueDb &db, std::uint64_t seed);

struct RandomProgramOptions {
  std::size_t max_functions = 12;
  std::size_t max_blocks = 6;
  /// Adds loop back edges and recursive callees.
  bool cyclic = false;
  std::uint64_t page_size = 64;
  double leaf_probability = 0.3;
  double callsite_probability = 0.5;
  double indirect_probability = 0.2;
};

/// Callsite-uniform random program. Function 0 ("main") is the entry; every
/// function is reachable from it when possible.
Program random_program(std::uint64_t seed, const RandomProgramOptions &opts = {});

/// Every function has a callsite on all entry-to-exit paths or on none.
bool callsite_uniform(const Program &p);

} // namespace pdsg
