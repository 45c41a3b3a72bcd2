// Benchmark harness: code-size and dynamic-instruction overhead per policy
// granularity, over a directory of kernels.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cat/bundle.hpp"

namespace cat::bench {

struct BenchRow {
  std::string name;
  std::string policy_set;  // P1, P1+P2, P1-P5, P1-P6
  uint64_t size_base = 0;
  uint64_t size_instrumented = 0;
  double size_overhead_pct = 0;
  uint64_t dinsn_base = 0;
  uint64_t dinsn_instrumented = 0;
  double dinsn_overhead_pct = 0;
  bool ok = false;
  std::string note;
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

struct Granularity {
  const char* name;
  uint8_t policies;
};

// The four policy granularities, in ladder order.
const std::vector<Granularity>& granularities();

// Deterministic input block every bench kernel receives.
std::vector<uint8_t> default_bench_input();

BenchReport run_bench(const std::vector<std::pair<std::string, std::string>>& kernels,
                      uint64_t step_limit);

std::string to_csv(const BenchReport& r);
std::string to_table(const BenchReport& r);

}  // namespace cat::bench
