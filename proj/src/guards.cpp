#include "cat/guards.hpp"

#include "cat/bundle.hpp"

namespace cat::guards {

using bundle::Placeholder;
using bundle::placeholder_value;
using isa::Instruction;
using isa::MemRef;
using isa::Mnemonic;
using isa::Operand;
using isa::Reg;

namespace {

Operand reg(Reg r) { return Operand::make_reg(r); }
Operand imm(int64_t v) { return Operand::make_imm(v); }
Operand sym(const char* s) { return Operand::make_sym(s); }
Operand mem(Reg base, int32_t disp = 0) {
  MemRef m;
  m.base = base;
  m.disp = disp;
  return Operand::make_mem(m);
}

Instruction movabs_placeholder(Reg dst, Placeholder f) {
  return Instruction(Mnemonic::Movabs, reg(dst),
                     imm(static_cast<int64_t>(placeholder_value(f))));
}

}  // namespace

bool is_reserved_symbol(const std::string& name) {
  return name == kExitStub || name == kCfiCheck || name == kSsaCheck ||
         name == kOcallSend || name == kOcallRecv;
}

std::vector<Instruction> store_guard(const MemRef& dest, bool variant) {
  ScratchPair s = variant ? kVariantScratch : kCanonicalScratch;
  return {
      Instruction(Mnemonic::Push, reg(s.s0)),
      Instruction(Mnemonic::Push, reg(s.s1)),
      Instruction(Mnemonic::Lea, reg(s.s0), Operand::make_mem(dest)),
      movabs_placeholder(s.s1, Placeholder::UpperDataBound),
      Instruction(Mnemonic::Cmp, reg(s.s0), reg(s.s1)),
      Instruction(Mnemonic::Ja, sym(kExitStub)),
      movabs_placeholder(s.s1, Placeholder::LowerDataBound),
      Instruction(Mnemonic::Cmp, reg(s.s0), reg(s.s1)),
      Instruction(Mnemonic::Jb, sym(kExitStub)),
      Instruction(Mnemonic::Pop, reg(s.s1)),
      Instruction(Mnemonic::Pop, reg(s.s0)),
  };
}

std::vector<Instruction> rsp_guard(bool variant) {
  Reg s = variant ? kVariantScratch.s0 : kCanonicalScratch.s0;
  return {
      Instruction(Mnemonic::Push, reg(s)),
      movabs_placeholder(s, Placeholder::UpperStackBound),
      Instruction(Mnemonic::Cmp, reg(Reg::Rsp), reg(s)),
      Instruction(Mnemonic::Ja, sym(kExitStub)),
      movabs_placeholder(s, Placeholder::LowerStackBound),
      Instruction(Mnemonic::Cmp, reg(Reg::Rsp), reg(s)),
      Instruction(Mnemonic::Jb, sym(kExitStub)),
      Instruction(Mnemonic::Pop, reg(s)),
  };
}

std::vector<Instruction> cfi_guard(const Operand& src) {
  return {
      Instruction(Mnemonic::Mov, reg(Reg::Rdi), src),
      Instruction(Mnemonic::Call, sym(kCfiCheck)),
  };
}

std::vector<Instruction> shadow_prolog(bool variant) {
  ScratchPair s = variant ? kVariantScratch : kCanonicalScratch;
  return {
      Instruction(Mnemonic::Push, reg(s.s0)),
      Instruction(Mnemonic::Push, reg(s.s1)),
      movabs_placeholder(s.s0, Placeholder::ShadowStackBase),
      Instruction(Mnemonic::Add, mem(s.s0), imm(8)),
      Instruction(Mnemonic::Mov, reg(s.s1), mem(s.s0)),
      Instruction(Mnemonic::Add, reg(s.s1), reg(s.s0)),
      Instruction(Mnemonic::Mov, reg(s.s0), mem(Reg::Rsp, 16)),
      Instruction(Mnemonic::Mov, mem(s.s1), reg(s.s0)),
      Instruction(Mnemonic::Pop, reg(s.s1)),
      Instruction(Mnemonic::Pop, reg(s.s0)),
  };
}

std::vector<Instruction> shadow_epilog(bool variant) {
  ScratchPair s = variant ? kVariantScratch : kCanonicalScratch;
  return {
      Instruction(Mnemonic::Push, reg(s.s0)),
      Instruction(Mnemonic::Push, reg(s.s1)),
      movabs_placeholder(s.s0, Placeholder::ShadowStackBase),
      Instruction(Mnemonic::Mov, reg(s.s1), mem(s.s0)),
      Instruction(Mnemonic::Add, reg(s.s1), reg(s.s0)),
      Instruction(Mnemonic::Mov, reg(s.s1), mem(s.s1)),
      Instruction(Mnemonic::Cmp, reg(s.s1), mem(Reg::Rsp, 16)),
      Instruction(Mnemonic::Jne, sym(kExitStub)),
      Instruction(Mnemonic::Sub, mem(s.s0), imm(8)),
      Instruction(Mnemonic::Pop, reg(s.s1)),
      Instruction(Mnemonic::Pop, reg(s.s0)),
  };
}

Instruction ssa_check_call() {
  return Instruction(Mnemonic::Call, sym(kSsaCheck));
}

prog::Function exit_stub_function() {
  prog::Function f;
  f.name = kExitStub;
  Instruction mov_code(Mnemonic::Mov, Operand::make_reg(Reg::Rdi, 4),
                       imm(0xFFFFFFFFll));
  mov_code.width = 4;
  f.items.push_back({mov_code, prog::Provenance::Runtime});
  f.items.push_back({Instruction(Mnemonic::Hlt), prog::Provenance::Runtime});
  return f;
}

prog::Function cfi_check_function() {
  prog::Function f;
  f.name = kCfiCheck;
  std::vector<Instruction> body;

  // rdi holds the candidate target. rax is the running entry index, r10 the
  // table region base (count qword at +0, entries from +8), r11 the probe.
  body.push_back(Instruction(Mnemonic::Push, reg(Reg::Rax)));
  body.push_back(Instruction(Mnemonic::Push, reg(Reg::R10)));
  body.push_back(Instruction(Mnemonic::Push, reg(Reg::R11)));
  body.push_back(movabs_placeholder(Reg::R10, Placeholder::BranchTargetTableAddr));
  body.push_back(movabs_placeholder(Reg::Rax, Placeholder::BranchTargetCount));
  body.push_back(Instruction(Mnemonic::Cmp, reg(Reg::Rax), imm(0)));
  body.push_back(Instruction(Mnemonic::Je, sym(".miss")));
  body.push_back(Instruction(Mnemonic::Xor, reg(Reg::Rax), reg(Reg::Rax)));

  // Uniform lower-bound search over the sentinel-padded table: 19 fixed
  // power-of-two steps stand in for the usual midpoint halving, which the
  // subset cannot express (no shift instruction).
  std::map<std::string, size_t> labels;
  std::vector<std::pair<std::string, size_t>> pending_labels;
  for (int k = 18; k >= 0; k--) {
    int64_t step = 1ll << k;
    MemRef probe;
    probe.base = Reg::R10;
    probe.has_index = true;
    probe.index = Reg::Rax;
    probe.scale = 8;
    probe.disp = static_cast<int32_t>(step * 8);
    std::string skip = ".skip" + std::to_string(k);
    body.push_back(Instruction(Mnemonic::Mov, reg(Reg::R11), Operand::make_mem(probe)));
    body.push_back(Instruction(Mnemonic::Cmp, reg(Reg::R11), reg(Reg::Rdi)));
    body.push_back(Instruction(Mnemonic::Jae, Operand::make_sym(skip)));
    body.push_back(Instruction(Mnemonic::Add, reg(Reg::Rax), imm(step)));
    pending_labels.emplace_back(skip, body.size());
  }

  MemRef final_slot;
  final_slot.base = Reg::R10;
  final_slot.has_index = true;
  final_slot.index = Reg::Rax;
  final_slot.scale = 8;
  final_slot.disp = 8;
  body.push_back(Instruction(Mnemonic::Mov, reg(Reg::R11), Operand::make_mem(final_slot)));
  body.push_back(Instruction(Mnemonic::Cmp, reg(Reg::R11), reg(Reg::Rdi)));
  body.push_back(Instruction(Mnemonic::Jne, sym(".miss")));
  body.push_back(Instruction(Mnemonic::Pop, reg(Reg::R11)));
  body.push_back(Instruction(Mnemonic::Pop, reg(Reg::R10)));
  body.push_back(Instruction(Mnemonic::Pop, reg(Reg::Rax)));
  body.push_back(Instruction(Mnemonic::Ret));
  labels[".miss"] = body.size();
  body.push_back(Instruction(Mnemonic::Jmp, sym(kExitStub)));

  for (auto& [name, idx] : pending_labels) labels[name] = idx;
  for (const Instruction& ins : body)
    f.items.push_back({ins, prog::Provenance::Runtime});
  f.labels = std::move(labels);
  return f;
}

prog::Function ssa_check_function(uint32_t aex_threshold) {
  prog::Function f;
  f.name = kSsaCheck;
  std::vector<Instruction> body = {
      Instruction(Mnemonic::Push, reg(Reg::R10)),
      Instruction(Mnemonic::Push, reg(Reg::R11)),
      movabs_placeholder(Reg::R10, Placeholder::ShadowStackBase),
      Instruction(Mnemonic::Mov, reg(Reg::R11), mem(Reg::R10, kSsaAexCountOffset)),
      Instruction(Mnemonic::Sub, reg(Reg::R11), mem(Reg::R10, kSsaLastCheckedOffset)),
      Instruction(Mnemonic::Cmp, reg(Reg::R11), imm(aex_threshold)),
      Instruction(Mnemonic::Jae, sym(".abort")),
      Instruction(Mnemonic::Mov, reg(Reg::R11), mem(Reg::R10, kSsaAexCountOffset)),
      Instruction(Mnemonic::Mov, mem(Reg::R10, kSsaLastCheckedOffset), reg(Reg::R11)),
      Instruction(Mnemonic::Mov, mem(Reg::R10, kSsaMarkerOffset), imm(kSsaMarkerValue)),
      Instruction(Mnemonic::Pop, reg(Reg::R11)),
      Instruction(Mnemonic::Pop, reg(Reg::R10)),
      Instruction(Mnemonic::Ret),
  };
  f.labels[".abort"] = body.size();
  body.push_back(Instruction(Mnemonic::Jmp, sym(kExitStub)));
  for (const Instruction& ins : body)
    f.items.push_back({ins, prog::Provenance::Runtime});
  return f;
}

}  // namespace cat::guards
