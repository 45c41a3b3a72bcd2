// Instruction model, encoder and decoder for the restricted x86-64 subset
// shared by the producer (emits it) and the consumer (disassembles and
// executes it). Real machine encodings (REX.W forms), no invented bytecode.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cat::isa {

enum class Reg : uint8_t {
  Rax = 0, Rcx, Rdx, Rbx, Rsp, Rbp, Rsi, Rdi,
  R8, R9, R10, R11, R12, R13, R14, R15,
};

constexpr uint8_t reg_num(Reg r) { return static_cast<uint8_t>(r); }

const char* reg_name64(Reg r);
const char* reg_name32(Reg r);
std::optional<Reg> reg_from_name(const std::string& name, uint8_t* width_out);

// [base + index*scale + disp]; base is mandatory, rsp cannot be an index.
struct MemRef {
  Reg base = Reg::Rax;
  bool has_index = false;
  Reg index = Reg::Rax;
  uint8_t scale = 1;  // 1,2,4,8
  int32_t disp = 0;

  bool uses(Reg r) const {
    return base == r || (has_index && index == r);
  }
  bool operator==(const MemRef& o) const {
    return base == o.base && has_index == o.has_index && disp == o.disp &&
           (!has_index || (index == o.index && scale == o.scale));
  }
};

enum class Mnemonic : uint8_t {
  Mov, Movabs, Lea, Add, Sub, And, Xor, Cmp,
  Push, Pop, Call, Jmp, Ret,
  Ja, Jae, Jb, Jbe, Je, Jne, Jg, Jl,
  Nop, Hlt,
};

const char* mnemonic_name(Mnemonic m);

struct Operand {
  enum class Kind : uint8_t { Reg, Imm, Mem };

  Kind kind = Kind::Imm;
  Reg reg = Reg::Rax;
  uint8_t reg_width = 8;  // bytes; 8 or 4, only meaningful for Kind::Reg
  int64_t imm = 0;
  MemRef mem{};
  std::string sym;  // unresolved label reference (producer side only)

  static Operand make_reg(Reg r, uint8_t width = 8) {
    Operand o;
    o.kind = Kind::Reg;
    o.reg = r;
    o.reg_width = width;
    return o;
  }
  static Operand make_imm(int64_t v) {
    Operand o;
    o.kind = Kind::Imm;
    o.imm = v;
    return o;
  }
  static Operand make_sym(std::string name) {
    Operand o;
    o.kind = Kind::Imm;
    o.sym = std::move(name);
    return o;
  }
  static Operand make_mem(MemRef m) {
    Operand o;
    o.kind = Kind::Mem;
    o.mem = m;
    return o;
  }

  bool is_reg(Reg r) const { return kind == Kind::Reg && reg == r; }

  // Semantic equality; an unresolved sym never equals a resolved imm.
  bool operator==(const Operand& o) const {
    if (kind != o.kind) return false;
    switch (kind) {
      case Kind::Reg: return reg == o.reg && reg_width == o.reg_width;
      case Kind::Imm: return imm == o.imm && sym == o.sym;
      case Kind::Mem: return mem == o.mem;
    }
    return false;
  }
};

struct Instruction {
  Mnemonic mnem = Mnemonic::Nop;
  uint8_t nops = 0;
  std::array<Operand, 2> ops{};
  uint8_t width = 8;  // operation width in bytes (8 or 4) for mem/imm forms

  // Decode/encode metadata; not part of semantic equality.
  uint64_t offset = 0;   // byte offset of the instruction start
  uint8_t length = 0;    // encoded length in bytes
  uint8_t imm_offset = 0;  // offset of the imm/rel32 field inside the encoding
  uint8_t imm_size = 0;    // size of that field (4 or 8), 0 if none

  Instruction() = default;
  Instruction(Mnemonic m) : mnem(m) {}
  Instruction(Mnemonic m, Operand a) : mnem(m), nops(1) { ops[0] = std::move(a); }
  Instruction(Mnemonic m, Operand a, Operand b) : mnem(m), nops(2) {
    ops[0] = std::move(a);
    ops[1] = std::move(b);
  }

  bool same_semantics(const Instruction& o) const {
    if (mnem != o.mnem || nops != o.nops || width != o.width) return false;
    for (int i = 0; i < nops; i++)
      if (!(ops[i] == o.ops[i])) return false;
    return true;
  }
  bool operator==(const Instruction& o) const { return same_semantics(o); }

  bool is_cond_jump() const {
    return mnem >= Mnemonic::Ja && mnem <= Mnemonic::Jl;
  }
  bool is_direct_branch() const {
    return (mnem == Mnemonic::Call || mnem == Mnemonic::Jmp || is_cond_jump()) &&
           nops == 1 && ops[0].kind == Operand::Kind::Imm;
  }
  bool is_indirect_branch() const {
    return (mnem == Mnemonic::Call || mnem == Mnemonic::Jmp) && nops == 1 &&
           ops[0].kind != Operand::Kind::Imm;
  }
  // Instructions after which control never falls through.
  bool is_terminator() const {
    return mnem == Mnemonic::Jmp || mnem == Mnemonic::Ret || mnem == Mnemonic::Hlt;
  }
  // Explicit memory write through a Mem destination. PUSH is handled
  // separately (implicit stack write, exempt from store guards).
  bool writes_memory() const {
    switch (mnem) {
      case Mnemonic::Mov:
      case Mnemonic::Add:
      case Mnemonic::Sub:
      case Mnemonic::And:
      case Mnemonic::Xor:
        return nops == 2 && ops[0].kind == Operand::Kind::Mem;
      default:
        return false;
    }
  }
  // Explicit write of the stack pointer (MOV/LEA/arith with rsp destination).
  bool writes_rsp() const {
    switch (mnem) {
      case Mnemonic::Mov:
      case Mnemonic::Movabs:
      case Mnemonic::Lea:
      case Mnemonic::Add:
      case Mnemonic::Sub:
      case Mnemonic::And:
      case Mnemonic::Xor:
        return nops == 2 && ops[0].is_reg(Reg::Rsp);
      default:
        return false;
    }
  }
  // For a decoded direct branch: signed image-relative target.
  int64_t branch_target() const { return ops[0].imm; }
};

struct IsaError : std::runtime_error {
  enum class Kind {
    UnknownMnemonic,
    UndefinedLabel,
    OperandMismatch,
    UnsupportedAddressingMode,
    UndecodableByte,
    Truncated,
  };
  Kind kind;
  uint64_t offset;
  IsaError(Kind k, const std::string& msg, uint64_t off = 0)
      : std::runtime_error(msg), kind(k), offset(off) {}
};

// Length of the canonical encoding, computable before operand resolution
// (symbolic branch targets and movabs symbols have fixed field widths).
uint8_t instruction_length(const Instruction& ins);

// Canonical encoding of a resolved instruction placed at `at_offset`.
// Direct branch operands hold the signed image-relative target; unresolved
// syms encode a zero field (the caller records a relocation against it).
// Returns the instruction with offset/length/imm metadata filled in.
Instruction encode_instruction(const Instruction& ins, uint64_t at_offset,
                               std::vector<uint8_t>& out);

// Decodes the instruction starting at `offset`. Throws IsaError with
// UndecodableByte / Truncated; never reads past the image end.
Instruction decode_instruction(std::span<const uint8_t> image, uint64_t offset);

std::string to_string(const Instruction& ins);
std::string to_string(const Operand& op);

}  // namespace cat::isa
