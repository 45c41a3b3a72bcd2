#include "cat/bench.hpp"

#include <iomanip>
#include <sstream>

#include "cat/pipeline.hpp"

namespace cat::bench {

const std::vector<Granularity>& granularities() {
  using namespace bundle;
  static const std::vector<Granularity> g = {
      {"P1", P1},
      {"P1+P2", static_cast<uint8_t>(P1 | P2)},
      {"P1-P5", static_cast<uint8_t>(P1 | P2 | P3 | P4 | P5)},
      {"P1-P6", kAllPolicies},
  };
  return g;
}

std::vector<uint8_t> default_bench_input() {
  // 4 KiB of a fixed xorshift stream.
  std::vector<uint8_t> data(4096);
  uint64_t s = 0x9E3779B97F4A7C15ull;
  for (size_t i = 0; i < data.size(); i += 8) {
    s ^= s << 13;
    s ^= s >> 7;
    s ^= s << 17;
    for (size_t k = 0; k < 8 && i + k < data.size(); k++)
      data[i + k] = (s >> (8 * k)) & 0xFF;
  }
  return data;
}

BenchReport run_bench(const std::vector<std::pair<std::string, std::string>>& kernels,
                      uint64_t step_limit) {
  BenchReport rep;
  std::vector<uint8_t> input = default_bench_input();

  for (const auto& [name, source] : kernels) {
    uint64_t size_base = 0, dinsn_base = 0;
    std::string base_err;
    try {
      size_base = instrument::assemble(source).bytes.size();
      pipeline::ConsumeOptions opts;
      opts.run.step_limit = step_limit;
      opts.run.record_writes = false;
      emu::ExecutionOutcome out = pipeline::baseline_run(
          source, input, emu::recording_hooks(nullptr), opts);
      if (out.status != emu::Status::Completed)
        base_err = std::string("baseline ") + emu::status_name(out.status);
      dinsn_base = out.steps;
    } catch (const std::exception& e) {
      base_err = e.what();
    }

    for (const Granularity& g : granularities()) {
      BenchRow row;
      row.name = name;
      row.policy_set = g.name;
      row.size_base = size_base;
      row.dinsn_base = dinsn_base;
      if (!base_err.empty()) {
        row.note = base_err;
        rep.rows.push_back(std::move(row));
        continue;
      }
      try {
        bundle::PolicyManifest m;
        m.policies = g.policies;
        bundle::CodeProofBundle b = pipeline::produce(source, m);
        row.size_instrumented = b.code.size();

        pipeline::ConsumeOptions opts;
        opts.run.step_limit = step_limit;
        opts.run.record_writes = false;
        pipeline::ConsumeResult res = pipeline::consume_and_run(
            b, input, emu::recording_hooks(nullptr), opts);
        if (!res.ran) {
          row.note = "verification rejected";
        } else if (res.outcome.status != emu::Status::Completed) {
          row.note = emu::status_name(res.outcome.status);
        } else {
          row.dinsn_instrumented = res.outcome.steps;
          row.size_overhead_pct =
              100.0 * (double(row.size_instrumented) - double(size_base)) /
              double(size_base);
          row.dinsn_overhead_pct =
              100.0 * (double(row.dinsn_instrumented) - double(dinsn_base)) /
              double(dinsn_base);
          row.ok = true;
        }
      } catch (const std::exception& e) {
        row.note = e.what();
      }
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

std::string to_csv(const BenchReport& r) {
  std::ostringstream os;
  os << "name,policy_set,size_base,size_instrumented,size_overhead_pct,"
        "dinsn_base,dinsn_instrumented,dinsn_overhead_pct,status\n";
  for (const BenchRow& row : r.rows) {
    os << row.name << ',' << row.policy_set << ',' << row.size_base << ','
       << row.size_instrumented << ',' << std::fixed << std::setprecision(2)
       << row.size_overhead_pct << ',' << row.dinsn_base << ','
       << row.dinsn_instrumented << ',' << row.dinsn_overhead_pct << ','
       << (row.ok ? "ok" : (row.note.empty() ? "failed" : row.note)) << "\n";
  }
  return os.str();
}

std::string to_table(const BenchReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "kernel" << std::setw(8) << "policy"
     << std::right << std::setw(10) << "size" << std::setw(10) << "size+"
     << std::setw(9) << "size%" << std::setw(12) << "dinsn" << std::setw(12)
     << "dinsn+" << std::setw(9) << "dinsn%" << "  status\n";
  for (const BenchRow& row : r.rows) {
    os << std::left << std::setw(22) << row.name << std::setw(8) << row.policy_set
       << std::right << std::setw(10) << row.size_base << std::setw(10)
       << row.size_instrumented << std::setw(8) << std::fixed
       << std::setprecision(1) << row.size_overhead_pct << '%' << std::setw(12)
       << row.dinsn_base << std::setw(12) << row.dinsn_instrumented
       << std::setw(8) << row.dinsn_overhead_pct << '%' << "  "
       << (row.ok ? "ok" : row.note) << "\n";
  }
  return os.str();
}

}  // namespace cat::bench
