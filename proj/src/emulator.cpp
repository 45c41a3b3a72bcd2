#include "cat/emulator.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>

#include "cat/guards.hpp"
#include "cat/instrument.hpp"

namespace cat::emu {

using isa::Instruction;
using isa::MemRef;
using isa::Mnemonic;
using isa::Operand;
using isa::Reg;
using loader::Region;
using loader::Role;

namespace {

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

// FNV-1a over qword blocks; the region size is always a multiple of 8.
uint64_t fnv1a(std::span<const uint8_t> bytes) {
  uint64_t h = kFnvOffset;
  size_t i = 0;
  for (; i + 8 <= bytes.size(); i += 8) {
    uint64_t w;
    std::memcpy(&w, bytes.data() + i, 8);
    h ^= w;
    h *= kFnvPrime;
  }
  for (; i < bytes.size(); i++) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
  return h;
}

uint64_t load_le(const uint8_t* p, uint32_t len) {
  uint64_t v = 0;
  for (uint32_t i = 0; i < len; i++) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

void store_le(uint8_t* p, uint32_t len, uint64_t v) {
  for (uint32_t i = 0; i < len; i++) p[i] = (v >> (8 * i)) & 0xFF;
}

}  // namespace

const char* status_name(Status s) {
  switch (s) {
    case Status::Running: return "running";
    case Status::Completed: return "completed";
    case Status::Violation: return "violation";
    case Status::Fault: return "fault";
    case Status::StepLimit: return "step-limit";
  }
  return "?";
}

const char* fault_name(FaultKind f) {
  switch (f) {
    case FaultKind::None: return "none";
    case FaultKind::GuardPage: return "guard-page";
    case FaultKind::Perm: return "permission";
    case FaultKind::Exec: return "exec";
    case FaultKind::Undecodable: return "undecodable";
  }
  return "?";
}

GatewayHooks recording_hooks(std::vector<std::vector<uint8_t>>* sink) {
  GatewayHooks h;
  h.send = [sink](std::span<const uint8_t> payload) {
    if (sink) sink->emplace_back(payload.begin(), payload.end());
    return true;
  };
  h.recv = []() -> std::optional<std::vector<uint8_t>> { return std::nullopt; };
  return h;
}

Emulator::Emulator(const loader::LoadedImage& img,
                   std::span<const uint8_t> data_input, GatewayHooks hooks,
                   RunConfig config,
                   std::vector<std::pair<uint64_t, uint64_t>> annotation_ranges)
    : img_(img), hooks_(std::move(hooks)), cfg_(std::move(config)),
      annotations_(std::move(annotation_ranges)) {
  std::sort(annotations_.begin(), annotations_.end());
  code_ = img.code;
  data_.assign(img.layout.data.size, 0);
  stack_.assign(img.layout.stack.size, 0);
  shadow_.assign(img.layout.shadow.size, 0);
  ssa_.assign(img.layout.ssa.size, 0);
  table_ = img.table_init;
  table_.resize(img.layout.table.size, 0);
  heap_.assign(img.layout.heap.size, 0);

  assert(data_input.size() <= data_.size());
  std::memcpy(data_.data(), data_input.data(), data_input.size());

  store_le(ssa_.data(), 8, guards::kSsaMarkerValue);

  regs_[static_cast<int>(Reg::Rdi)] = img.layout.data.base;
  regs_[static_cast<int>(Reg::Rsi)] = data_input.size();
  uint64_t top = img.layout.stack.end() - 8;
  regs_[static_cast<int>(Reg::Rsp)] = top;
  store_le(stack_.data() + (top - img.layout.stack.base), 8,
           img.layout.return_sentinel());
  rip_ = img.entry;
}

std::optional<Emulator::Mapping> Emulator::map_addr(uint64_t addr) {
  const loader::EnclaveLayout& l = img_.layout;
  auto pick = [&](const Region& r, std::vector<uint8_t>* buf) -> std::optional<Mapping> {
    if (r.contains(addr)) return Mapping{&r, buf};
    return std::nullopt;
  };
  if (auto m = pick(l.code, &code_)) return m;
  if (auto m = pick(l.data, &data_)) return m;
  if (auto m = pick(l.stack, &stack_)) return m;
  if (auto m = pick(l.shadow, &shadow_)) return m;
  if (auto m = pick(l.ssa, &ssa_)) return m;
  if (auto m = pick(l.table, &table_)) return m;
  if (auto m = pick(l.heap, &heap_)) return m;
  if (auto m = pick(l.guard_lo, nullptr)) return m;
  if (auto m = pick(l.guard_hi, nullptr)) return m;
  return std::nullopt;
}

bool Emulator::in_annotation(uint64_t addr) const {
  for (const auto& [start, end] : annotations_)
    if (addr >= start && addr < end) return true;
  return false;
}

bool Emulator::check_read(uint64_t addr, uint32_t len) {
  auto lo = map_addr(addr);
  auto hi = map_addr(addr + len - 1);
  if ((lo && lo->region->role == Role::GuardLow) ||
      (lo && lo->region->role == Role::GuardHigh) ||
      (hi && (hi->region->role == Role::GuardLow || hi->region->role == Role::GuardHigh))) {
    fault(FaultKind::GuardPage, "read touches a guard page");
    return false;
  }
  if (!lo || !hi || lo->region->base != hi->region->base) {
    fault(FaultKind::Perm, "read outside mapped regions");
    return false;
  }
  if (lo->region->role == Role::Code && addr + len - img_.layout.code.base > code_.size()) {
    fault(FaultKind::Perm, "read past loaded image");
    return false;
  }
  return true;
}

bool Emulator::check_write(uint64_t addr, uint32_t len) {
  auto lo = map_addr(addr);
  auto hi = map_addr(addr + len - 1);
  if ((lo && (lo->region->role == Role::GuardLow || lo->region->role == Role::GuardHigh)) ||
      (hi && (hi->region->role == Role::GuardLow || hi->region->role == Role::GuardHigh))) {
    fault(FaultKind::GuardPage, "write touches a guard page");
    return false;
  }
  if (!lo || !hi || lo->region->base != hi->region->base) {
    fault(FaultKind::Perm, "write outside mapped regions");
    return false;
  }
  switch (lo->region->role) {
    case Role::Data:
    case Role::Stack:
      return true;
    case Role::Shadow:
    case Role::SsaPage:
      // Writable only from verified annotation or runtime-support code.
      if (in_annotation(current_insn_addr_)) return true;
      fault(FaultKind::Perm, "untrusted write to protected region");
      return false;
    default:
      fault(FaultKind::Perm, "write to read-only region");
      return false;
  }
}

uint64_t Emulator::read_mem(uint64_t addr, uint32_t len) {
  auto m = map_addr(addr);
  return load_le(m->bytes->data() + (addr - m->region->base), len);
}

void Emulator::write_mem(uint64_t addr, uint32_t len, uint64_t v, bool trusted) {
  auto m = map_addr(addr);
  store_le(m->bytes->data() + (addr - m->region->base), len, v);
  if (cfg_.record_writes) outcome_.write_log.push_back({steps_, addr, len, trusted});
}

void Emulator::raw_write(uint64_t addr, uint32_t len, uint64_t v) {
  auto m = map_addr(addr);
  store_le(m->bytes->data() + (addr - m->region->base), len, v);
  if (cfg_.record_writes) outcome_.write_log.push_back({steps_, addr, len, true});
}

void Emulator::fault(FaultKind k, const std::string& msg) {
  if (outcome_.status != Status::Running) return;
  outcome_.status = Status::Fault;
  outcome_.fault = k;
  outcome_.message = msg;
}

void Emulator::violation(uint32_t code, const std::string& msg) {
  if (outcome_.status != Status::Running) return;
  outcome_.status = Status::Violation;
  outcome_.violation_code = code;
  outcome_.message = msg;
}

uint64_t Emulator::ssa_marker() const { return load_le(ssa_.data(), 8); }
uint64_t Emulator::ssa_aex_count() const { return load_le(ssa_.data() + 8, 8); }
uint64_t Emulator::ssa_last_checked() const { return load_le(ssa_.data() + 16, 8); }
uint64_t Emulator::data_digest() const { return fnv1a(data_); }

void Emulator::inject_aex() {
  // An AEX saves the interrupted context into the SSA: the marker is
  // clobbered and the simulated exit counter advances.
  store_le(ssa_.data(), 8, ~static_cast<uint64_t>(guards::kSsaMarkerValue));
  store_le(ssa_.data() + 8, 8, ssa_aex_count() + 1);
  if (cfg_.record_writes) {
    outcome_.write_log.push_back({steps_, img_.layout.ssa.base, 8, true});
    outcome_.write_log.push_back({steps_, img_.layout.ssa.base + 8, 8, true});
  }
}

bool Emulator::push(uint64_t v) {
  uint64_t addr = regs_[static_cast<int>(Reg::Rsp)] - 8;
  if (!check_write(addr, 8)) return false;
  write_mem(addr, 8, v, in_annotation(current_insn_addr_));
  regs_[static_cast<int>(Reg::Rsp)] = addr;
  return true;
}

std::optional<uint64_t> Emulator::pop() {
  uint64_t addr = regs_[static_cast<int>(Reg::Rsp)];
  if (!check_read(addr, 8)) return std::nullopt;
  uint64_t v = read_mem(addr, 8);
  regs_[static_cast<int>(Reg::Rsp)] = addr + 8;
  return v;
}

uint64_t Emulator::mem_addr(const MemRef& m) const {
  uint64_t addr = regs_[reg_num(m.base)];
  if (m.has_index) addr += regs_[reg_num(m.index)] * m.scale;
  return addr + static_cast<int64_t>(m.disp);
}

void Emulator::set_alu_flags_addsub(uint64_t a, uint64_t b, uint64_t r, bool is_sub) {
  flags_.zf = r == 0;
  flags_.sf = r >> 63;
  if (is_sub) {
    flags_.cf = a < b;
    flags_.of = (((a ^ b) & (a ^ r)) >> 63) != 0;
  } else {
    flags_.cf = r < a;
    flags_.of = ((~(a ^ b) & (a ^ r)) >> 63) != 0;
  }
}

void Emulator::set_alu_flags_logic(uint64_t r) {
  flags_.zf = r == 0;
  flags_.sf = r >> 63;
  flags_.cf = false;
  flags_.of = false;
}

bool Emulator::cond_holds(Mnemonic m) const {
  switch (m) {
    case Mnemonic::Ja: return !flags_.cf && !flags_.zf;
    case Mnemonic::Jae: return !flags_.cf;
    case Mnemonic::Jb: return flags_.cf;
    case Mnemonic::Jbe: return flags_.cf || flags_.zf;
    case Mnemonic::Je: return flags_.zf;
    case Mnemonic::Jne: return !flags_.zf;
    case Mnemonic::Jg: return !flags_.zf && flags_.sf == flags_.of;
    case Mnemonic::Jl: return flags_.sf != flags_.of;
    default: return false;
  }
}

const Instruction* Emulator::decode_at(uint64_t rip) {
  uint64_t off = rip - img_.base;
  auto it = decode_cache_.find(off);
  if (it != decode_cache_.end()) return &it->second;
  try {
    Instruction ins = isa::decode_instruction(code_, off);
    return &decode_cache_.emplace(off, std::move(ins)).first->second;
  } catch (const isa::IsaError&) {
    return nullptr;
  }
}

uint64_t Emulator::operand_value(const Operand& op, uint8_t width, bool& ok) {
  ok = true;
  switch (op.kind) {
    case Operand::Kind::Reg: {
      uint64_t v = regs_[reg_num(op.reg)];
      return op.reg_width == 4 ? (v & 0xFFFFFFFFull) : v;
    }
    case Operand::Kind::Imm:
      return static_cast<uint64_t>(op.imm);
    case Operand::Kind::Mem: {
      uint64_t addr = mem_addr(op.mem);
      if (!check_read(addr, width)) {
        ok = false;
        return 0;
      }
      return read_mem(addr, width);
    }
  }
  ok = false;
  return 0;
}

void Emulator::gateway_send() {
  uint64_t buf = regs_[static_cast<int>(Reg::Rdi)];
  uint64_t len = regs_[static_cast<int>(Reg::Rsi)];
  if (len > (1ull << 20)) {
    violation(0xFFFFFFFF, "send length implausible");
    return;
  }
  std::vector<uint8_t> payload(len);
  for (uint64_t i = 0; i < len; i += 8) {
    uint32_t chunk = static_cast<uint32_t>(std::min<uint64_t>(8, len - i));
    if (!check_read(buf + i, chunk)) return;
    store_le(payload.data() + i, chunk, read_mem(buf + i, chunk));
  }
  if (!hooks_.send || !hooks_.send(payload)) {
    violation(0xFFFFFFFF, "gateway refused send");
    return;
  }
  outcome_.outputs.push_back(std::move(payload));
  regs_[static_cast<int>(Reg::Rax)] = 0;
  auto ra = pop();
  if (ra) rip_ = *ra;
}

void Emulator::gateway_recv() {
  uint64_t buf = regs_[static_cast<int>(Reg::Rdi)];
  uint64_t cap = regs_[static_cast<int>(Reg::Rsi)];
  std::optional<std::vector<uint8_t>> payload =
      hooks_.recv ? hooks_.recv() : std::nullopt;
  if (!payload) {
    violation(0xFFFFFFFF, "gateway refused recv");
    return;
  }
  if (payload->size() > cap) {
    violation(0xFFFFFFFF, "recv buffer too small");
    return;
  }
  for (uint64_t i = 0; i < payload->size(); i += 8) {
    uint32_t chunk = static_cast<uint32_t>(std::min<uint64_t>(8, payload->size() - i));
    auto m = map_addr(buf + i);
    if (!m || (m->region->role != Role::Data && m->region->role != Role::Stack)) {
      violation(0xFFFFFFFF, "recv buffer outside writable window");
      return;
    }
    write_mem(buf + i, chunk, load_le(payload->data() + i, chunk), true);
  }
  regs_[static_cast<int>(Reg::Rax)] = payload->size();
  auto ra = pop();
  if (ra) rip_ = *ra;
}

void Emulator::step() {
  if (outcome_.status != Status::Running) return;
  if (cfg_.aex_schedule.count(steps_)) inject_aex();

  if (rip_ == img_.layout.return_sentinel()) {
    outcome_.status = Status::Completed;
    return;
  }
  if (rip_ == img_.layout.trampoline_send()) {
    steps_++;
    gateway_send();
    return;
  }
  if (rip_ == img_.layout.trampoline_recv()) {
    steps_++;
    gateway_recv();
    return;
  }
  if (!img_.layout.code.contains(rip_) ||
      rip_ - img_.base >= code_.size()) {
    fault(FaultKind::Exec, "rip outside executable image");
    return;
  }

  const Instruction* ins = decode_at(rip_);
  if (!ins) {
    fault(FaultKind::Undecodable, "undecodable instruction reached");
    return;
  }
  current_insn_addr_ = rip_;
  steps_++;
  execute(*ins);
}

void Emulator::execute(const Instruction& ins) {
  bool annot = in_annotation(current_insn_addr_);
  uint64_t next = rip_ + ins.length;
  bool ok = true;

  switch (ins.mnem) {
    case Mnemonic::Nop:
      rip_ = next;
      break;

    case Mnemonic::Hlt:
      violation(static_cast<uint32_t>(regs_[static_cast<int>(Reg::Rdi)] & 0xFFFFFFFF),
                "hlt");
      break;

    case Mnemonic::Mov:
    case Mnemonic::Movabs: {
      uint8_t w = ins.mnem == Mnemonic::Movabs ? 8 : ins.width;
      uint64_t v = operand_value(ins.ops[1], w, ok);
      if (!ok) return;
      const Operand& dst = ins.ops[0];
      if (dst.kind == Operand::Kind::Reg) {
        regs_[reg_num(dst.reg)] = dst.reg_width == 4 ? (v & 0xFFFFFFFFull) : v;
      } else {
        uint64_t addr = mem_addr(dst.mem);
        if (!check_write(addr, w)) return;
        write_mem(addr, w, v, annot);
      }
      rip_ = next;
      break;
    }

    case Mnemonic::Lea:
      regs_[reg_num(ins.ops[0].reg)] = mem_addr(ins.ops[1].mem);
      rip_ = next;
      break;

    case Mnemonic::Add:
    case Mnemonic::Sub:
    case Mnemonic::And:
    case Mnemonic::Xor:
    case Mnemonic::Cmp: {
      const Operand& dst = ins.ops[0];
      uint64_t a;
      uint64_t daddr = 0;
      if (dst.kind == Operand::Kind::Reg) {
        a = regs_[reg_num(dst.reg)];
      } else {
        daddr = mem_addr(dst.mem);
        if (!check_read(daddr, 8)) return;
        a = read_mem(daddr, 8);
      }
      uint64_t b = operand_value(ins.ops[1], 8, ok);
      if (!ok) return;
      uint64_t r = 0;
      switch (ins.mnem) {
        case Mnemonic::Add: r = a + b; set_alu_flags_addsub(a, b, r, false); break;
        case Mnemonic::Sub:
        case Mnemonic::Cmp: r = a - b; set_alu_flags_addsub(a, b, r, true); break;
        case Mnemonic::And: r = a & b; set_alu_flags_logic(r); break;
        case Mnemonic::Xor: r = a ^ b; set_alu_flags_logic(r); break;
        default: break;
      }
      if (ins.mnem != Mnemonic::Cmp) {
        if (dst.kind == Operand::Kind::Reg) {
          regs_[reg_num(dst.reg)] = r;
        } else {
          if (!check_write(daddr, 8)) return;
          write_mem(daddr, 8, r, annot);
        }
      }
      rip_ = next;
      break;
    }

    case Mnemonic::Push: {
      if (!push(regs_[reg_num(ins.ops[0].reg)])) return;
      rip_ = next;
      break;
    }
    case Mnemonic::Pop: {
      auto v = pop();
      if (!v) return;
      regs_[reg_num(ins.ops[0].reg)] = *v;
      rip_ = next;
      break;
    }

    case Mnemonic::Call: {
      uint64_t target;
      if (ins.ops[0].kind == Operand::Kind::Imm) {
        target = img_.base + static_cast<uint64_t>(ins.ops[0].imm);
      } else {
        target = operand_value(ins.ops[0], 8, ok);
        if (!ok) return;
      }
      if (!push(next)) return;
      if (cfg_.trace_calls) outcome_.call_trace.emplace_back(steps_ - 1, target);
      rip_ = target;
      break;
    }
    case Mnemonic::Jmp: {
      if (ins.ops[0].kind == Operand::Kind::Imm) {
        rip_ = img_.base + static_cast<uint64_t>(ins.ops[0].imm);
      } else {
        uint64_t target = operand_value(ins.ops[0], 8, ok);
        if (!ok) return;
        rip_ = target;
      }
      break;
    }

    case Mnemonic::Ret: {
      auto v = pop();
      if (!v) return;
      rip_ = *v;
      break;
    }

    default: {  // conditional jumps
      if (cond_holds(ins.mnem))
        rip_ = img_.base + static_cast<uint64_t>(ins.ops[0].imm);
      else
        rip_ = next;
      break;
    }
  }
}

ExecutionOutcome Emulator::run() {
  if (code_.empty()) {
    outcome_.status = Status::Completed;
    outcome_.data_digest = data_digest();
    return outcome_;
  }
  while (outcome_.status == Status::Running) {
    if (steps_ >= cfg_.step_limit) {
      outcome_.status = Status::StepLimit;
      outcome_.message = "step limit reached";
      break;
    }
    step();
  }
  outcome_.steps = steps_;
  outcome_.data_digest = data_digest();
  return outcome_;
}

ExecutionOutcome run(const loader::LoadedImage& img,
                     std::span<const uint8_t> data_input, GatewayHooks hooks,
                     const RunConfig& config,
                     std::vector<std::pair<uint64_t, uint64_t>> annotation_ranges) {
  Emulator emu(img, data_input, std::move(hooks), config,
               std::move(annotation_ranges));
  return emu.run();
}

ExecutionOutcome run_uninstrumented(const prog::Program& program,
                                    const loader::EnclaveLayout& layout,
                                    std::span<const uint8_t> data_input,
                                    GatewayHooks hooks, const RunConfig& config) {
  bundle::PolicyManifest none;
  none.policies = 0;
  bundle::CodeProofBundle b = instrument::link(program, none);
  loader::LoadedImage img = loader::load(b, layout);
  loader::rewrite_immediates(img, {});
  loader::seal(img);
  return run(img, data_input, std::move(hooks), config, {});
}

}  // namespace cat::emu
