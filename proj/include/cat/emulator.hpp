// Deterministic instruction-level executor for verified images: permissioned
// regions, guard pages, SSA counters with explicit AEX injection, and the
// 0xFFFFFFFF violation convention.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cat/loader.hpp"
#include "cat/program.hpp"

namespace cat::emu {

enum class Status : uint8_t { Running, Completed, Violation, Fault, StepLimit };
enum class FaultKind : uint8_t { None, GuardPage, Perm, Exec, Undecodable };

const char* status_name(Status s);
const char* fault_name(FaultKind f);

struct Flags {
  bool zf = false, cf = false, sf = false, of = false;
};

struct WriteRec {
  uint64_t step;
  uint64_t addr;
  uint32_t len;
  bool trusted;  // issued from annotation/runtime code or by the host side
};

// Host-call surface reachable from target code. send returns false when the
// gateway refuses the call (quota/budget); that aborts the run as a policy
// violation. recv returns nullopt on refusal.
struct GatewayHooks {
  std::function<bool(std::span<const uint8_t>)> send;
  std::function<std::optional<std::vector<uint8_t>>()> recv;
};

GatewayHooks recording_hooks(std::vector<std::vector<uint8_t>>* sink);

struct RunConfig {
  uint64_t step_limit = 20'000'000;
  std::set<uint64_t> aex_schedule;  // step indices that trigger one AEX each
  bool record_writes = true;
  bool trace_calls = false;  // record (step, target) for every call executed
};

struct ExecutionOutcome {
  Status status = Status::Running;
  FaultKind fault = FaultKind::None;
  uint32_t violation_code = 0;
  uint64_t steps = 0;
  std::vector<std::vector<uint8_t>> outputs;  // plaintext send payloads
  uint64_t data_digest = 0;
  std::vector<WriteRec> write_log;
  std::vector<std::pair<uint64_t, uint64_t>> call_trace;
  std::string message;
};

class Emulator {
 public:
  // annotation_ranges: absolute [start,end) spans of verified guard and
  // runtime-support code, the only instructions allowed to write the shadow
  // region and SSA page.
  Emulator(const loader::LoadedImage& img, std::span<const uint8_t> data_input,
           GatewayHooks hooks, RunConfig config,
           std::vector<std::pair<uint64_t, uint64_t>> annotation_ranges);

  ExecutionOutcome run();

  // Single-step interface for tests.
  void step();
  bool running() const { return outcome_.status == Status::Running; }

  std::array<uint64_t, 16>& gprs() { return regs_; }
  uint64_t& rip() { return rip_; }
  Flags& flags() { return flags_; }
  uint64_t steps() const { return steps_; }
  uint64_t ssa_marker() const;
  uint64_t ssa_aex_count() const;
  uint64_t ssa_last_checked() const;
  uint64_t data_digest() const;
  std::span<const uint8_t> data_region() const { return data_; }
  std::span<uint8_t> data_region_mut() { return data_; }
  std::span<const uint8_t> shadow_region() const { return shadow_; }
  const ExecutionOutcome& outcome() const { return outcome_; }

 private:
  struct Mapping {
    const loader::Region* region;
    std::vector<uint8_t>* bytes;
  };
  std::optional<Mapping> map_addr(uint64_t addr);

  bool in_annotation(uint64_t addr) const;
  bool check_read(uint64_t addr, uint32_t len);
  bool check_write(uint64_t addr, uint32_t len);
  uint64_t read_mem(uint64_t addr, uint32_t len);       // after check
  void write_mem(uint64_t addr, uint32_t len, uint64_t v, bool trusted);
  void raw_write(uint64_t addr, uint32_t len, uint64_t v);  // host-side, no checks

  void fault(FaultKind k, const std::string& msg);
  void violation(uint32_t code, const std::string& msg);
  void inject_aex();
  void gateway_send();
  void gateway_recv();
  bool push(uint64_t v);
  std::optional<uint64_t> pop();
  void execute(const isa::Instruction& ins);
  const isa::Instruction* decode_at(uint64_t rip);
  uint64_t operand_value(const isa::Operand& op, uint8_t width, bool& ok);
  uint64_t mem_addr(const isa::MemRef& m) const;
  void set_alu_flags_addsub(uint64_t a, uint64_t b, uint64_t r, bool is_sub);
  void set_alu_flags_logic(uint64_t r);
  bool cond_holds(isa::Mnemonic m) const;

  const loader::LoadedImage& img_;
  GatewayHooks hooks_;
  RunConfig cfg_;
  std::vector<std::pair<uint64_t, uint64_t>> annotations_;  // sorted

  std::array<uint64_t, 16> regs_{};
  uint64_t rip_ = 0;
  Flags flags_;
  uint64_t steps_ = 0;
  uint64_t current_insn_addr_ = 0;

  std::vector<uint8_t> code_;  // copy of the sealed image bytes
  std::vector<uint8_t> data_, stack_, shadow_, ssa_, table_, heap_;
  std::map<uint64_t, isa::Instruction> decode_cache_;

  ExecutionOutcome outcome_;
};

// Full run of a rewritten, sealed image.
ExecutionOutcome run(const loader::LoadedImage& img,
                     std::span<const uint8_t> data_input, GatewayHooks hooks,
                     const RunConfig& config,
                     std::vector<std::pair<uint64_t, uint64_t>> annotation_ranges);

// Assembles and runs a program with no policies applied: the reference
// oracle and overhead baseline.
ExecutionOutcome run_uninstrumented(const prog::Program& program,
                                    const loader::EnclaveLayout& layout,
                                    std::span<const uint8_t> data_input,
                                    GatewayHooks hooks, const RunConfig& config);

}  // namespace cat::emu
