#include "cat/isa.hpp"

#include <cassert>
#include <cstring>
#include <sstream>

namespace cat::isa {

namespace {

const char* kReg64[16] = {"rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
                          "r8",  "r9",  "r10", "r11", "r12", "r13", "r14", "r15"};
const char* kReg32[16] = {"eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi",
                          "r8d", "r9d", "r10d", "r11d", "r12d", "r13d", "r14d", "r15d"};

[[noreturn]] void fail(IsaError::Kind k, const std::string& msg, uint64_t off = 0) {
  throw IsaError(k, msg, off);
}

bool fits_i8(int64_t v) { return v >= -128 && v <= 127; }
bool fits_i32(int64_t v) { return v >= INT32_MIN && v <= INT32_MAX; }

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(v & 0xFF);
  out.push_back((v >> 8) & 0xFF);
  out.push_back((v >> 16) & 0xFF);
  out.push_back((v >> 24) & 0xFF);
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}

struct ModRmEnc {
  uint8_t modrm = 0;
  bool has_sib = false;
  uint8_t sib = 0;
  uint8_t disp_size = 0;  // 0, 1, or 4
  int32_t disp = 0;
  bool rex_x = false;
  bool rex_b = false;
};

uint8_t scale_bits(uint8_t scale) {
  switch (scale) {
    case 1: return 0;
    case 2: return 1;
    case 4: return 2;
    case 8: return 3;
  }
  fail(IsaError::Kind::OperandMismatch, "bad scale");
}

ModRmEnc encode_mem(uint8_t regfield, const MemRef& m) {
  if (m.has_index && m.index == Reg::Rsp)
    fail(IsaError::Kind::UnsupportedAddressingMode, "rsp cannot be an index register");
  ModRmEnc e;
  uint8_t base_low = reg_num(m.base) & 7;
  e.rex_b = reg_num(m.base) >= 8;
  e.has_sib = m.has_index || base_low == 4;
  uint8_t mod;
  if (m.disp == 0 && base_low != 5) {
    mod = 0;
  } else if (fits_i8(m.disp)) {
    mod = 1;
    e.disp_size = 1;
  } else {
    mod = 2;
    e.disp_size = 4;
  }
  e.disp = m.disp;
  uint8_t rm = e.has_sib ? 4 : base_low;
  e.modrm = static_cast<uint8_t>((mod << 6) | ((regfield & 7) << 3) | rm);
  if (e.has_sib) {
    uint8_t idx_bits = 4;  // none
    if (m.has_index) {
      idx_bits = reg_num(m.index) & 7;
      e.rex_x = reg_num(m.index) >= 8;
    }
    e.sib = static_cast<uint8_t>((scale_bits(m.scale) << 6) | (idx_bits << 3) | base_low);
  }
  return e;
}

void put_modrm(std::vector<uint8_t>& out, const ModRmEnc& e) {
  out.push_back(e.modrm);
  if (e.has_sib) out.push_back(e.sib);
  if (e.disp_size == 1) out.push_back(static_cast<uint8_t>(e.disp));
  else if (e.disp_size == 4) put_u32(out, static_cast<uint32_t>(e.disp));
}

uint8_t modrm_reg_direct(uint8_t regfield, uint8_t rm_low) {
  return static_cast<uint8_t>(0xC0 | ((regfield & 7) << 3) | rm_low);
}

// Opcode table for the two-operand ALU group, indexed store/load/imm-digit.
struct AluOp {
  uint8_t store;  // r/m, r
  uint8_t load;   // r, r/m
  uint8_t imm_digit;
};
std::optional<AluOp> alu_op(Mnemonic m) {
  switch (m) {
    case Mnemonic::Add: return AluOp{0x01, 0x03, 0};
    case Mnemonic::And: return AluOp{0x21, 0x23, 4};
    case Mnemonic::Sub: return AluOp{0x29, 0x2B, 5};
    case Mnemonic::Xor: return AluOp{0x31, 0x33, 6};
    case Mnemonic::Cmp: return AluOp{0x39, 0x3B, 7};
    default: return std::nullopt;
  }
}

uint8_t cond_code(Mnemonic m) {
  switch (m) {
    case Mnemonic::Ja: return 0x87;
    case Mnemonic::Jae: return 0x83;
    case Mnemonic::Jb: return 0x82;
    case Mnemonic::Jbe: return 0x86;
    case Mnemonic::Je: return 0x84;
    case Mnemonic::Jne: return 0x85;
    case Mnemonic::Jg: return 0x8F;
    case Mnemonic::Jl: return 0x8C;
    default: assert(false); return 0;
  }
}

std::optional<Mnemonic> cond_from_code(uint8_t c) {
  switch (c) {
    case 0x87: return Mnemonic::Ja;
    case 0x83: return Mnemonic::Jae;
    case 0x82: return Mnemonic::Jb;
    case 0x86: return Mnemonic::Jbe;
    case 0x84: return Mnemonic::Je;
    case 0x85: return Mnemonic::Jne;
    case 0x8F: return Mnemonic::Jg;
    case 0x8C: return Mnemonic::Jl;
    default: return std::nullopt;
  }
}

struct Emitter {
  std::vector<uint8_t> bytes;
  uint8_t imm_offset = 0;
  uint8_t imm_size = 0;

  void rex(bool w, bool r, bool x, bool b, bool force = false) {
    uint8_t v = static_cast<uint8_t>(0x40 | (w << 3) | (r << 2) | (x << 1) | (b ? 1 : 0));
    if (force || v != 0x40) bytes.push_back(v);
  }
  void op(uint8_t o) { bytes.push_back(o); }
  void mark_imm(uint8_t size) {
    imm_offset = static_cast<uint8_t>(bytes.size());
    imm_size = size;
  }
};

}  // namespace

const char* reg_name64(Reg r) { return kReg64[reg_num(r)]; }
const char* reg_name32(Reg r) { return kReg32[reg_num(r)]; }

std::optional<Reg> reg_from_name(const std::string& name, uint8_t* width_out) {
  for (int i = 0; i < 16; i++) {
    if (name == kReg64[i]) {
      if (width_out) *width_out = 8;
      return static_cast<Reg>(i);
    }
    if (name == kReg32[i]) {
      if (width_out) *width_out = 4;
      return static_cast<Reg>(i);
    }
  }
  return std::nullopt;
}

const char* mnemonic_name(Mnemonic m) {
  switch (m) {
    case Mnemonic::Mov: return "mov";
    case Mnemonic::Movabs: return "movabs";
    case Mnemonic::Lea: return "lea";
    case Mnemonic::Add: return "add";
    case Mnemonic::Sub: return "sub";
    case Mnemonic::And: return "and";
    case Mnemonic::Xor: return "xor";
    case Mnemonic::Cmp: return "cmp";
    case Mnemonic::Push: return "push";
    case Mnemonic::Pop: return "pop";
    case Mnemonic::Call: return "call";
    case Mnemonic::Jmp: return "jmp";
    case Mnemonic::Ret: return "ret";
    case Mnemonic::Ja: return "ja";
    case Mnemonic::Jae: return "jae";
    case Mnemonic::Jb: return "jb";
    case Mnemonic::Jbe: return "jbe";
    case Mnemonic::Je: return "je";
    case Mnemonic::Jne: return "jne";
    case Mnemonic::Jg: return "jg";
    case Mnemonic::Jl: return "jl";
    case Mnemonic::Nop: return "nop";
    case Mnemonic::Hlt: return "hlt";
  }
  return "?";
}

Instruction encode_instruction(const Instruction& ins, uint64_t at_offset,
                               std::vector<uint8_t>& out) {
  using K = Operand::Kind;
  Emitter e;
  const Operand& a = ins.ops[0];
  const Operand& b = ins.ops[1];

  auto bad = [&](const char* what) -> void {
    fail(IsaError::Kind::OperandMismatch,
         std::string(what) + " in " + to_string(ins), at_offset);
  };

  switch (ins.mnem) {
    case Mnemonic::Nop: e.op(0x90); break;
    case Mnemonic::Ret: e.op(0xC3); break;
    case Mnemonic::Hlt: e.op(0xF4); break;

    case Mnemonic::Push:
    case Mnemonic::Pop: {
      if (ins.nops != 1 || a.kind != K::Reg || a.reg_width != 8) bad("push/pop needs r64");
      uint8_t base = ins.mnem == Mnemonic::Push ? 0x50 : 0x58;
      e.rex(false, false, false, reg_num(a.reg) >= 8);
      e.op(static_cast<uint8_t>(base + (reg_num(a.reg) & 7)));
      break;
    }

    case Mnemonic::Movabs: {
      if (ins.nops != 2 || a.kind != K::Reg || a.reg_width != 8 || b.kind != K::Imm)
        bad("movabs needs r64, imm64");
      e.rex(true, false, false, reg_num(a.reg) >= 8);
      e.op(static_cast<uint8_t>(0xB8 + (reg_num(a.reg) & 7)));
      e.mark_imm(8);
      put_u64(e.bytes, static_cast<uint64_t>(b.imm));
      break;
    }

    case Mnemonic::Mov: {
      if (ins.nops != 2) bad("mov needs 2 operands");
      if (a.kind == K::Reg && b.kind == K::Imm) {
        if (a.reg_width == 8) {
          if (!b.sym.empty() || !fits_i32(b.imm)) bad("imm too wide for mov, use movabs");
          e.rex(true, false, false, reg_num(a.reg) >= 8);
          e.op(0xC7);
          e.bytes.push_back(modrm_reg_direct(0, reg_num(a.reg) & 7));
          e.mark_imm(4);
          put_u32(e.bytes, static_cast<uint32_t>(b.imm));
        } else {
          if (!b.sym.empty() || b.imm < 0 || b.imm > UINT32_MAX) bad("imm out of range for r32");
          e.rex(false, false, false, reg_num(a.reg) >= 8);
          e.op(static_cast<uint8_t>(0xB8 + (reg_num(a.reg) & 7)));
          e.mark_imm(4);
          put_u32(e.bytes, static_cast<uint32_t>(b.imm));
        }
      } else if (a.kind == K::Mem && b.kind == K::Imm) {
        if (!b.sym.empty() || !fits_i32(b.imm)) bad("imm too wide for mov to mem");
        ModRmEnc m = encode_mem(0, a.mem);
        e.rex(ins.width == 8, false, m.rex_x, m.rex_b);
        e.op(0xC7);
        put_modrm(e.bytes, m);
        e.mark_imm(4);
        put_u32(e.bytes, static_cast<uint32_t>(b.imm));
      } else if (a.kind == K::Reg && b.kind == K::Reg) {
        if (a.reg_width != b.reg_width) bad("mov reg width mismatch");
        e.rex(a.reg_width == 8, reg_num(b.reg) >= 8, false, reg_num(a.reg) >= 8);
        e.op(0x89);
        e.bytes.push_back(modrm_reg_direct(reg_num(b.reg), reg_num(a.reg) & 7));
      } else if (a.kind == K::Mem && b.kind == K::Reg) {
        ModRmEnc m = encode_mem(reg_num(b.reg), a.mem);
        e.rex(b.reg_width == 8, reg_num(b.reg) >= 8, m.rex_x, m.rex_b);
        e.op(0x89);
        put_modrm(e.bytes, m);
      } else if (a.kind == K::Reg && b.kind == K::Mem) {
        ModRmEnc m = encode_mem(reg_num(a.reg), b.mem);
        e.rex(a.reg_width == 8, reg_num(a.reg) >= 8, m.rex_x, m.rex_b);
        e.op(0x8B);
        put_modrm(e.bytes, m);
      } else {
        bad("unsupported mov form");
      }
      break;
    }

    case Mnemonic::Lea: {
      if (ins.nops != 2 || a.kind != K::Reg || a.reg_width != 8 || b.kind != K::Mem)
        bad("lea needs r64, mem");
      ModRmEnc m = encode_mem(reg_num(a.reg), b.mem);
      e.rex(true, reg_num(a.reg) >= 8, m.rex_x, m.rex_b);
      e.op(0x8D);
      put_modrm(e.bytes, m);
      break;
    }

    case Mnemonic::Add:
    case Mnemonic::Sub:
    case Mnemonic::And:
    case Mnemonic::Xor:
    case Mnemonic::Cmp: {
      AluOp ao = *alu_op(ins.mnem);
      if (ins.nops != 2) bad("alu needs 2 operands");
      if (a.kind == K::Reg && a.reg_width != 8) bad("alu ops are 64-bit only");
      if (b.kind == K::Reg && b.reg_width != 8) bad("alu ops are 64-bit only");
      if (a.kind == K::Reg && b.kind == K::Reg) {
        e.rex(true, reg_num(b.reg) >= 8, false, reg_num(a.reg) >= 8);
        e.op(ao.store);
        e.bytes.push_back(modrm_reg_direct(reg_num(b.reg), reg_num(a.reg) & 7));
      } else if (a.kind == K::Mem && b.kind == K::Reg) {
        ModRmEnc m = encode_mem(reg_num(b.reg), a.mem);
        e.rex(true, reg_num(b.reg) >= 8, m.rex_x, m.rex_b);
        e.op(ao.store);
        put_modrm(e.bytes, m);
      } else if (a.kind == K::Reg && b.kind == K::Mem) {
        ModRmEnc m = encode_mem(reg_num(a.reg), b.mem);
        e.rex(true, reg_num(a.reg) >= 8, m.rex_x, m.rex_b);
        e.op(ao.load);
        put_modrm(e.bytes, m);
      } else if (b.kind == K::Imm) {
        if (!b.sym.empty() || !fits_i32(b.imm)) bad("alu imm must fit in 32 bits");
        if (a.kind == K::Reg) {
          e.rex(true, false, false, reg_num(a.reg) >= 8);
          e.op(0x81);
          e.bytes.push_back(modrm_reg_direct(ao.imm_digit, reg_num(a.reg) & 7));
        } else {
          ModRmEnc m = encode_mem(ao.imm_digit, a.mem);
          e.rex(true, false, m.rex_x, m.rex_b);
          e.op(0x81);
          put_modrm(e.bytes, m);
        }
        e.mark_imm(4);
        put_u32(e.bytes, static_cast<uint32_t>(b.imm));
      } else {
        bad("unsupported alu form");
      }
      break;
    }

    case Mnemonic::Call:
    case Mnemonic::Jmp: {
      if (ins.nops != 1) bad("call/jmp needs 1 operand");
      if (a.kind == K::Imm) {
        e.op(ins.mnem == Mnemonic::Call ? 0xE8 : 0xE9);
        e.mark_imm(4);
        int64_t target = a.sym.empty() ? a.imm : 0;
        int64_t disp = target - (static_cast<int64_t>(at_offset) + 5);
        if (a.sym.empty() && !fits_i32(disp)) bad("rel32 out of range");
        put_u32(e.bytes, a.sym.empty() ? static_cast<uint32_t>(disp) : 0);
      } else if (a.kind == K::Reg) {
        if (a.reg_width != 8) bad("indirect branch needs r64");
        e.rex(false, false, false, reg_num(a.reg) >= 8);
        e.op(0xFF);
        e.bytes.push_back(modrm_reg_direct(ins.mnem == Mnemonic::Call ? 2 : 4,
                                           reg_num(a.reg) & 7));
      } else {
        ModRmEnc m = encode_mem(ins.mnem == Mnemonic::Call ? 2 : 4, a.mem);
        e.rex(false, false, m.rex_x, m.rex_b);
        e.op(0xFF);
        put_modrm(e.bytes, m);
      }
      break;
    }

    case Mnemonic::Ja:
    case Mnemonic::Jae:
    case Mnemonic::Jb:
    case Mnemonic::Jbe:
    case Mnemonic::Je:
    case Mnemonic::Jne:
    case Mnemonic::Jg:
    case Mnemonic::Jl: {
      if (ins.nops != 1 || a.kind != K::Imm) bad("jcc needs a direct target");
      e.op(0x0F);
      e.op(cond_code(ins.mnem));
      e.mark_imm(4);
      int64_t target = a.sym.empty() ? a.imm : 0;
      int64_t disp = target - (static_cast<int64_t>(at_offset) + 6);
      if (a.sym.empty() && !fits_i32(disp)) bad("rel32 out of range");
      put_u32(e.bytes, a.sym.empty() ? static_cast<uint32_t>(disp) : 0);
      break;
    }
  }

  if (e.bytes.size() > 15) bad("encoding exceeds 15 bytes");

  Instruction done = ins;
  done.offset = at_offset;
  done.length = static_cast<uint8_t>(e.bytes.size());
  done.imm_offset = e.imm_offset;
  done.imm_size = e.imm_size;
  out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  return done;
}

uint8_t instruction_length(const Instruction& ins) {
  std::vector<uint8_t> tmp;
  // Length never depends on the final rel32 value; encode unresolved branches
  // as if the displacement were zero.
  Instruction copy = ins;
  for (int i = 0; i < copy.nops; i++) {
    if (copy.ops[i].kind == Operand::Kind::Imm && !copy.ops[i].sym.empty() &&
        copy.mnem != Mnemonic::Movabs) {
      copy.ops[i].sym.clear();
      copy.ops[i].imm = 0;
    }
  }
  encode_instruction(copy, 0, tmp);
  return static_cast<uint8_t>(tmp.size());
}

namespace {

struct Cursor {
  std::span<const uint8_t> image;
  uint64_t start;
  uint64_t pos;

  uint8_t u8() {
    if (pos >= image.size())
      fail(IsaError::Kind::Truncated, "instruction runs past image end", start);
    return image[pos++];
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v |= static_cast<uint32_t>(u8()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(u8()) << (8 * i);
    return v;
  }
  uint8_t len() const { return static_cast<uint8_t>(pos - start); }
};

struct DecodedRm {
  bool is_reg;
  Reg reg;
  MemRef mem;
  uint8_t regfield;  // the /r or /digit field, REX.R applied
};

DecodedRm decode_modrm(Cursor& c, bool rex_r, bool rex_x, bool rex_b) {
  uint8_t modrm = c.u8();
  uint8_t mod = modrm >> 6;
  uint8_t regf = static_cast<uint8_t>(((modrm >> 3) & 7) | (rex_r ? 8 : 0));
  uint8_t rm = modrm & 7;
  DecodedRm d;
  d.regfield = regf;
  if (mod == 3) {
    d.is_reg = true;
    d.reg = static_cast<Reg>(rm | (rex_b ? 8 : 0));
    return d;
  }
  d.is_reg = false;
  MemRef m;
  if (rm == 4) {
    uint8_t sib = c.u8();
    uint8_t base_low = sib & 7;
    uint8_t idx = static_cast<uint8_t>(((sib >> 3) & 7) | (rex_x ? 8 : 0));
    if (base_low == 5 && mod == 0)
      fail(IsaError::Kind::UndecodableByte, "baseless SIB not in subset", c.start);
    m.base = static_cast<Reg>(base_low | (rex_b ? 8 : 0));
    if (idx != 4) {  // index=100 with REX.X=0 means none
      m.has_index = true;
      m.index = static_cast<Reg>(idx);
      m.scale = static_cast<uint8_t>(1 << (sib >> 6));
    }
  } else {
    if (rm == 5 && mod == 0)
      fail(IsaError::Kind::UndecodableByte, "RIP-relative not in subset", c.start);
    m.base = static_cast<Reg>(rm | (rex_b ? 8 : 0));
  }
  if (mod == 1) m.disp = static_cast<int8_t>(c.u8());
  else if (mod == 2) m.disp = static_cast<int32_t>(c.u32());
  d.mem = m;
  return d;
}

Operand rm_operand(const DecodedRm& d, uint8_t width) {
  if (d.is_reg) return Operand::make_reg(d.reg, width);
  return Operand::make_mem(d.mem);
}

}  // namespace

Instruction decode_instruction(std::span<const uint8_t> image, uint64_t offset) {
  if (offset >= image.size())
    fail(IsaError::Kind::Truncated, "offset past image end", offset);
  Cursor c{image, offset, offset};

  uint8_t rex = 0;
  uint8_t b = c.u8();
  if ((b & 0xF0) == 0x40) {
    rex = b;
    b = c.u8();
  }
  bool W = rex & 8, R = rex & 4, X = rex & 2, B = rex & 1;
  uint8_t width = W ? 8 : 4;

  auto finish = [&](Instruction ins, uint8_t imm_off = 0, uint8_t imm_sz = 0) {
    ins.offset = offset;
    ins.length = c.len();
    ins.imm_offset = imm_off;
    ins.imm_size = imm_sz;
    return ins;
  };
  auto no_rex = [&](const char* what) {
    if (rex) fail(IsaError::Kind::UndecodableByte,
                  std::string("unexpected REX on ") + what, offset);
  };
  auto rel32_target = [&](uint8_t insn_len) -> int64_t {
    int32_t disp = static_cast<int32_t>(c.u32());
    return static_cast<int64_t>(offset) + insn_len + disp;
  };

  // Single-byte, no-operand forms.
  switch (b) {
    case 0x90: no_rex("nop"); return finish(Instruction(Mnemonic::Nop));
    case 0xC3: no_rex("ret"); return finish(Instruction(Mnemonic::Ret));
    case 0xF4: no_rex("hlt"); return finish(Instruction(Mnemonic::Hlt));
    case 0xE8:
    case 0xE9: {
      no_rex("rel32 branch");
      Mnemonic m = b == 0xE8 ? Mnemonic::Call : Mnemonic::Jmp;
      int64_t target = rel32_target(5);
      return finish(Instruction(m, Operand::make_imm(target)), 1, 4);
    }
    case 0x0F: {
      no_rex("jcc");
      uint8_t cc = c.u8();
      auto m = cond_from_code(cc);
      if (!m) fail(IsaError::Kind::UndecodableByte, "escape opcode not in subset", offset);
      int64_t target = rel32_target(6);
      return finish(Instruction(*m, Operand::make_imm(target)), 2, 4);
    }
  }

  if (b >= 0x50 && b <= 0x57) {
    if (rex && rex != 0x41)
      fail(IsaError::Kind::UndecodableByte, "non-canonical push prefix", offset);
    Reg r = static_cast<Reg>((b - 0x50) | (B ? 8 : 0));
    return finish(Instruction(Mnemonic::Push, Operand::make_reg(r)));
  }
  if (b >= 0x58 && b <= 0x5F) {
    if (rex && rex != 0x41)
      fail(IsaError::Kind::UndecodableByte, "non-canonical pop prefix", offset);
    Reg r = static_cast<Reg>((b - 0x58) | (B ? 8 : 0));
    return finish(Instruction(Mnemonic::Pop, Operand::make_reg(r)));
  }

  if (b >= 0xB8 && b <= 0xBF) {
    Reg r = static_cast<Reg>((b - 0xB8) | (B ? 8 : 0));
    if (W) {
      uint8_t imm_off = c.len();
      int64_t imm = static_cast<int64_t>(c.u64());
      return finish(Instruction(Mnemonic::Movabs, Operand::make_reg(r),
                                Operand::make_imm(imm)), imm_off, 8);
    }
    uint8_t imm_off = c.len();
    uint32_t imm = c.u32();
    Instruction ins(Mnemonic::Mov, Operand::make_reg(r, 4), Operand::make_imm(imm));
    ins.width = 4;
    return finish(ins, imm_off, 4);
  }

  switch (b) {
    case 0x89:
    case 0x8B: {
      DecodedRm d = decode_modrm(c, R, X, B);
      Operand rm = rm_operand(d, width);
      Operand rg = Operand::make_reg(static_cast<Reg>(d.regfield), width);
      Instruction ins = b == 0x89 ? Instruction(Mnemonic::Mov, rm, rg)
                                  : Instruction(Mnemonic::Mov, rg, rm);
      ins.width = width;
      return finish(ins);
    }
    case 0x8D: {
      if (!W) fail(IsaError::Kind::UndecodableByte, "lea requires REX.W", offset);
      DecodedRm d = decode_modrm(c, R, X, B);
      if (d.is_reg) fail(IsaError::Kind::UndecodableByte, "lea needs a memory source", offset);
      return finish(Instruction(Mnemonic::Lea,
                                Operand::make_reg(static_cast<Reg>(d.regfield)),
                                Operand::make_mem(d.mem)));
    }
    case 0x01: case 0x29: case 0x21: case 0x31: case 0x39:
    case 0x03: case 0x2B: case 0x23: case 0x33: case 0x3B: {
      if (!W) fail(IsaError::Kind::UndecodableByte, "alu ops are 64-bit in subset", offset);
      Mnemonic m;
      bool store;
      switch (b) {
        case 0x01: m = Mnemonic::Add; store = true; break;
        case 0x29: m = Mnemonic::Sub; store = true; break;
        case 0x21: m = Mnemonic::And; store = true; break;
        case 0x31: m = Mnemonic::Xor; store = true; break;
        case 0x39: m = Mnemonic::Cmp; store = true; break;
        case 0x03: m = Mnemonic::Add; store = false; break;
        case 0x2B: m = Mnemonic::Sub; store = false; break;
        case 0x23: m = Mnemonic::And; store = false; break;
        case 0x33: m = Mnemonic::Xor; store = false; break;
        default:   m = Mnemonic::Cmp; store = false; break;
      }
      DecodedRm d = decode_modrm(c, R, X, B);
      Operand rm = rm_operand(d, 8);
      Operand rg = Operand::make_reg(static_cast<Reg>(d.regfield));
      return finish(store ? Instruction(m, rm, rg) : Instruction(m, rg, rm));
    }
    case 0x81: {
      if (!W) fail(IsaError::Kind::UndecodableByte, "alu imm is 64-bit in subset", offset);
      DecodedRm d = decode_modrm(c, R, X, B);
      Mnemonic m;
      switch (d.regfield & 7) {
        case 0: m = Mnemonic::Add; break;
        case 4: m = Mnemonic::And; break;
        case 5: m = Mnemonic::Sub; break;
        case 6: m = Mnemonic::Xor; break;
        case 7: m = Mnemonic::Cmp; break;
        default:
          fail(IsaError::Kind::UndecodableByte, "alu /digit not in subset", offset);
      }
      uint8_t imm_off = c.len();
      int64_t imm = static_cast<int32_t>(c.u32());
      return finish(Instruction(m, rm_operand(d, 8), Operand::make_imm(imm)),
                    imm_off, 4);
    }
    case 0xC7: {
      DecodedRm d = decode_modrm(c, R, X, B);
      if ((d.regfield & 7) != 0)
        fail(IsaError::Kind::UndecodableByte, "C7 /digit not in subset", offset);
      uint8_t imm_off = c.len();
      int64_t imm = static_cast<int32_t>(c.u32());
      Instruction ins(Mnemonic::Mov, rm_operand(d, width), Operand::make_imm(imm));
      ins.width = width;
      return finish(ins, imm_off, 4);
    }
    case 0xFF: {
      if (W) fail(IsaError::Kind::UndecodableByte, "FF with REX.W not in subset", offset);
      DecodedRm d = decode_modrm(c, R, X, B);
      Mnemonic m;
      switch (d.regfield & 7) {
        case 2: m = Mnemonic::Call; break;
        case 4: m = Mnemonic::Jmp; break;
        default:
          fail(IsaError::Kind::UndecodableByte, "FF /digit not in subset", offset);
      }
      return finish(Instruction(m, rm_operand(d, 8)));
    }
  }

  fail(IsaError::Kind::UndecodableByte, "opcode not in subset", offset);
}

std::string to_string(const Operand& op) {
  std::ostringstream os;
  switch (op.kind) {
    case Operand::Kind::Reg:
      os << (op.reg_width == 8 ? reg_name64(op.reg) : reg_name32(op.reg));
      break;
    case Operand::Kind::Imm:
      if (!op.sym.empty()) os << op.sym;
      else os << "0x" << std::hex << static_cast<uint64_t>(op.imm);
      break;
    case Operand::Kind::Mem: {
      os << "[" << reg_name64(op.mem.base);
      if (op.mem.has_index)
        os << "+" << reg_name64(op.mem.index) << "*" << int(op.mem.scale);
      if (op.mem.disp > 0) os << "+0x" << std::hex << op.mem.disp;
      else if (op.mem.disp < 0) os << "-0x" << std::hex << -int64_t(op.mem.disp);
      os << "]";
      break;
    }
  }
  return os.str();
}

std::string to_string(const Instruction& ins) {
  std::string s = mnemonic_name(ins.mnem);
  for (int i = 0; i < ins.nops; i++) {
    s += i == 0 ? " " : ", ";
    if (ins.is_indirect_branch() && i == 0) s += "*";
    s += to_string(ins.ops[i]);
  }
  return s;
}

}  // namespace cat::isa
