#include <doctest.h>

#include <random>

#include "cat/instrument.hpp"
#include "cat/isa.hpp"

using namespace cat;
using isa::Instruction;
using isa::MemRef;
using isa::Mnemonic;
using isa::Operand;
using isa::Reg;

namespace {

std::vector<uint8_t> enc(const Instruction& ins, uint64_t at = 0) {
  std::vector<uint8_t> out;
  isa::encode_instruction(ins, at, out);
  return out;
}

std::vector<uint8_t> assemble_text(const std::string& src) {
  return instrument::assemble(src).bytes;
}

Operand mem(Reg base, int32_t disp = 0) {
  MemRef m;
  m.base = base;
  m.disp = disp;
  return Operand::make_mem(m);
}

}  // namespace

TEST_CASE("fixed encodings match the architecture manual") {
  CHECK(enc(Instruction(Mnemonic::Ret)) == std::vector<uint8_t>{0xC3});
  CHECK(enc(Instruction(Mnemonic::Nop)) == std::vector<uint8_t>{0x90});
  CHECK(enc(Instruction(Mnemonic::Hlt)) == std::vector<uint8_t>{0xF4});
  CHECK(enc(Instruction(Mnemonic::Push, Operand::make_reg(Reg::Rax))) ==
        std::vector<uint8_t>{0x50});
  CHECK(enc(Instruction(Mnemonic::Push, Operand::make_reg(Reg::R10))) ==
        std::vector<uint8_t>{0x41, 0x52});
  CHECK(enc(Instruction(Mnemonic::Pop, Operand::make_reg(Reg::R11))) ==
        std::vector<uint8_t>{0x41, 0x5B});
  CHECK(enc(Instruction(Mnemonic::Mov, Operand::make_reg(Reg::Rax),
                        Operand::make_reg(Reg::Rbx))) ==
        std::vector<uint8_t>{0x48, 0x89, 0xD8});
  CHECK(enc(Instruction(Mnemonic::Mov, mem(Reg::Rbx, 8),
                        Operand::make_reg(Reg::Rax))) ==
        std::vector<uint8_t>{0x48, 0x89, 0x43, 0x08});
  CHECK(enc(Instruction(Mnemonic::Mov, Operand::make_reg(Reg::Rax),
                        mem(Reg::Rbx))) ==
        std::vector<uint8_t>{0x48, 0x8B, 0x03});
  CHECK(enc(Instruction(Mnemonic::Mov, mem(Reg::Rsp),
                        Operand::make_reg(Reg::Rax))) ==
        std::vector<uint8_t>{0x48, 0x89, 0x04, 0x24});
  CHECK(enc(Instruction(Mnemonic::Mov, mem(Reg::Rbp),
                        Operand::make_reg(Reg::Rax))) ==
        std::vector<uint8_t>{0x48, 0x89, 0x45, 0x00});
  CHECK(enc(Instruction(Mnemonic::Mov, mem(Reg::R13, 16),
                        Operand::make_reg(Reg::Rax))) ==
        std::vector<uint8_t>{0x49, 0x89, 0x45, 0x10});
  CHECK(enc(Instruction(Mnemonic::Lea, Operand::make_reg(Reg::R10),
                        mem(Reg::Rbx, 8))) ==
        std::vector<uint8_t>{0x4C, 0x8D, 0x53, 0x08});
  CHECK(enc(Instruction(Mnemonic::Cmp, Operand::make_reg(Reg::R10),
                        Operand::make_reg(Reg::R11))) ==
        std::vector<uint8_t>{0x4D, 0x39, 0xDA});
  CHECK(enc(Instruction(Mnemonic::Cmp, Operand::make_reg(Reg::Rsp),
                        Operand::make_reg(Reg::R10))) ==
        std::vector<uint8_t>{0x4C, 0x39, 0xD4});
  CHECK(enc(Instruction(Mnemonic::Add, Operand::make_reg(Reg::Rax),
                        Operand::make_imm(8))) ==
        std::vector<uint8_t>{0x48, 0x81, 0xC0, 0x08, 0x00, 0x00, 0x00});
  CHECK(enc(Instruction(Mnemonic::Add, mem(Reg::R10), Operand::make_imm(8))) ==
        std::vector<uint8_t>{0x49, 0x81, 0x02, 0x08, 0x00, 0x00, 0x00});
  CHECK(enc(Instruction(Mnemonic::Sub, mem(Reg::R10), Operand::make_imm(8))) ==
        std::vector<uint8_t>{0x49, 0x81, 0x2A, 0x08, 0x00, 0x00, 0x00});
  CHECK(enc(Instruction(Mnemonic::Xor, Operand::make_reg(Reg::Rax),
                        Operand::make_reg(Reg::Rax))) ==
        std::vector<uint8_t>{0x48, 0x31, 0xC0});
  CHECK(enc(Instruction(Mnemonic::And, Operand::make_reg(Reg::Rsp),
                        Operand::make_imm(-16))) ==
        std::vector<uint8_t>{0x48, 0x81, 0xE4, 0xF0, 0xFF, 0xFF, 0xFF});
  CHECK(enc(Instruction(Mnemonic::Call, Operand::make_reg(Reg::Rbx))) ==
        std::vector<uint8_t>{0xFF, 0xD3});
  CHECK(enc(Instruction(Mnemonic::Jmp, Operand::make_reg(Reg::Rax))) ==
        std::vector<uint8_t>{0xFF, 0xE0});
  // mov edi, 0xFFFFFFFF: the exit stub's violation code load
  Instruction mov32(Mnemonic::Mov, Operand::make_reg(Reg::Rdi, 4),
                    Operand::make_imm(0xFFFFFFFFll));
  mov32.width = 4;
  CHECK(enc(mov32) == std::vector<uint8_t>{0xBF, 0xFF, 0xFF, 0xFF, 0xFF});
  // SIB with index scaling
  MemRef sib;
  sib.base = Reg::R10;
  sib.has_index = true;
  sib.index = Reg::Rax;
  sib.scale = 8;
  sib.disp = 8;
  CHECK(enc(Instruction(Mnemonic::Mov, Operand::make_mem(sib),
                        Operand::make_reg(Reg::Rcx))) ==
        std::vector<uint8_t>{0x49, 0x89, 0x4C, 0xC2, 0x08});
}

TEST_CASE("movabs places the placeholder immediate little-endian at +2") {
  std::vector<uint8_t> out;
  Instruction ins(Mnemonic::Movabs, Operand::make_reg(Reg::R11),
                  Operand::make_imm(0x3FFFFFFFFFFFFFFFll));
  Instruction done = isa::encode_instruction(ins, 0, out);
  REQUIRE(out.size() == 10);
  CHECK(done.length == 10);
  CHECK(done.imm_offset == 2);
  CHECK(done.imm_size == 8);
  CHECK(out[0] == 0x49);
  CHECK(out[1] == 0xBB);
  for (int i = 0; i < 7; i++) CHECK(out[2 + i] == 0xFF);
  CHECK(out[9] == 0x3F);
}

TEST_CASE("assembling 'ret' yields the single-byte opcode") {
  auto bytes = assemble_text(".global f\nf:\n    ret\n");
  CHECK(bytes == std::vector<uint8_t>{0xC3});
}

TEST_CASE("decode reports instruction length and operands") {
  std::vector<uint8_t> bytes{0x41, 0x52};  // push r10
  Instruction ins = isa::decode_instruction(bytes, 0);
  CHECK(ins.mnem == Mnemonic::Push);
  CHECK(ins.ops[0].is_reg(Reg::R10));
  CHECK(ins.length == 2);
}

TEST_CASE("truncated and foreign bytes are rejected") {
  std::vector<uint8_t> ff{0xFF};
  CHECK_THROWS_AS(isa::decode_instruction(ff, 0), isa::IsaError);
  std::vector<uint8_t> esc{0x0F, 0x05};  // syscall: not in the subset
  CHECK_THROWS_AS(isa::decode_instruction(esc, 0), isa::IsaError);
  std::vector<uint8_t> empty;
  CHECK_THROWS_AS(isa::decode_instruction(empty, 0), isa::IsaError);
  try {
    isa::decode_instruction(ff, 0);
  } catch (const isa::IsaError& e) {
    CHECK((e.kind == isa::IsaError::Kind::Truncated ||
           e.kind == isa::IsaError::Kind::UndecodableByte));
  }
}

TEST_CASE("rel32 branches decode to image-relative targets") {
  // jmp to self: E9 FB FF FF FF
  std::vector<uint8_t> bytes{0xE9, 0xFB, 0xFF, 0xFF, 0xFF};
  Instruction ins = isa::decode_instruction(bytes, 0);
  CHECK(ins.mnem == Mnemonic::Jmp);
  CHECK(ins.branch_target() == 0);
}

namespace {

Instruction random_instruction(std::mt19937_64& rng) {
  auto reg = [&]() { return static_cast<Reg>(rng() % 16); };
  auto nonsp_reg = [&]() {
    Reg r;
    do {
      r = reg();
    } while (r == Reg::Rsp);
    return r;
  };
  auto random_mem = [&]() {
    MemRef m;
    m.base = reg();
    if (rng() % 2) {
      m.has_index = true;
      m.index = nonsp_reg();
      m.scale = 1 << (rng() % 4);
    }
    switch (rng() % 3) {
      case 0: m.disp = 0; break;
      case 1: m.disp = static_cast<int32_t>(rng() % 256) - 128; break;
      default: m.disp = static_cast<int32_t>(rng()); break;
    }
    return Operand::make_mem(m);
  };
  auto imm32 = [&]() {
    return Operand::make_imm(static_cast<int32_t>(rng()));
  };

  switch (rng() % 12) {
    case 0: return Instruction(Mnemonic::Push, Operand::make_reg(reg()));
    case 1: return Instruction(Mnemonic::Pop, Operand::make_reg(reg()));
    case 2: return Instruction(Mnemonic::Mov, Operand::make_reg(reg()),
                               Operand::make_reg(reg()));
    case 3: return Instruction(Mnemonic::Mov, Operand::make_reg(reg()), random_mem());
    case 4: return Instruction(Mnemonic::Mov, random_mem(), Operand::make_reg(reg()));
    case 5: return Instruction(Mnemonic::Mov, Operand::make_reg(reg()), imm32());
    case 6: return Instruction(Mnemonic::Movabs, Operand::make_reg(reg()),
                               Operand::make_imm(static_cast<int64_t>(rng())));
    case 7: return Instruction(Mnemonic::Lea, Operand::make_reg(reg()), random_mem());
    case 8: {
      Mnemonic alu[] = {Mnemonic::Add, Mnemonic::Sub, Mnemonic::And,
                        Mnemonic::Xor, Mnemonic::Cmp};
      Mnemonic m = alu[rng() % 5];
      switch (rng() % 4) {
        case 0: return Instruction(m, Operand::make_reg(reg()), Operand::make_reg(reg()));
        case 1: return Instruction(m, Operand::make_reg(reg()), random_mem());
        case 2: return Instruction(m, random_mem(), Operand::make_reg(reg()));
        default: return Instruction(m, Operand::make_reg(reg()), imm32());
      }
    }
    case 9: return Instruction(Mnemonic::Call, Operand::make_reg(reg()));
    case 10: {
      Instruction ins(Mnemonic::Mov, random_mem(), imm32());
      ins.width = rng() % 2 ? 8 : 4;
      return ins;
    }
    default: return Instruction(Mnemonic::Nop);
  }
}

}  // namespace

TEST_CASE("assemble/decode round trip on random subset programs") {
  std::mt19937_64 rng(0xC0FFEE);
  for (int trial = 0; trial < 200; trial++) {
    std::vector<Instruction> program;
    std::vector<uint8_t> image;
    for (int i = 0; i < 50; i++) {
      Instruction ins = random_instruction(rng);
      isa::encode_instruction(ins, image.size(), image);
      program.push_back(ins);
    }
    // sequential decode partitions the image exactly
    uint64_t off = 0;
    for (const Instruction& want : program) {
      Instruction got = isa::decode_instruction(image, off);
      CHECK(got.same_semantics(want));
      CHECK(got.length <= 15);
      off += got.length;
    }
    CHECK(off == image.size());
  }
}

TEST_CASE("parser handles labels, sizes and indirect syntax") {
  const char* src = R"(
.global main
main:
    mov qword [rax], 5
    mov dword [rbx+4], 7
    cmp rcx, 0
    je .out
    call *rdx
    jmp .back
.back:
    nop
.out:
    ret
)";
  auto obj = instrument::assemble(src);
  uint64_t off = 0;
  int count = 0;
  while (off < obj.bytes.size()) {
    off += isa::decode_instruction(obj.bytes, off).length;
    count++;
  }
  CHECK(count == 8);
  CHECK(off == obj.bytes.size());
}

TEST_CASE("parser rejects subset violations") {
  using instrument::assemble;
  CHECK_THROWS_AS(assemble(".global f\nf:\n    frob rax\n    ret\n"), isa::IsaError);
  CHECK_THROWS_AS(assemble(".global f\nf:\n    jmp .nowhere\n"), isa::IsaError);
  CHECK_THROWS_AS(assemble(".global f\nf:\n    pop rsp\n    ret\n"), isa::IsaError);
  CHECK_THROWS_AS(assemble(".global f\nf:\n    mov rax, [rbx+rsp]\n    ret\n"),
                  isa::IsaError);
  CHECK_THROWS_AS(
      assemble(".global f\nf:\n    mov rax, 0x3FFFFFFFFFFFFFFF\n    ret\n"),
      isa::IsaError);
  // missing terminator
  CHECK_THROWS_AS(assemble(".global f\nf:\n    mov rax, 1\n"), isa::IsaError);
  // rsp as index is unencodable
  CHECK_THROWS_AS(assemble(".global f\nf:\n    mov rax, [rbx+rsp*2]\n    ret\n"),
                  isa::IsaError);
}

TEST_CASE("assembler emits relocations for symbols and data") {
  const char* src = R"(
.global main
main:
    movabs rax, table
    call helper
    ret
helper:
    mov rax, 1
    ret
table:
    .quad helper
    .quad 123
)";
  auto obj = instrument::assemble(src);
  REQUIRE(obj.relocations.size() == 3);
  int abs64 = 0, rel32 = 0;
  for (const auto& r : obj.relocations) {
    if (r.kind == bundle::RelocKind::Abs64) abs64++;
    else rel32++;
    CHECK(r.symbol_index < obj.symbols.size());
  }
  CHECK(abs64 == 2);  // movabs imm + .quad
  CHECK(rel32 == 1);  // call helper
  bool found_table = false;
  for (const auto& s : obj.symbols)
    if (s.name == "table") {
      found_table = true;
      CHECK(s.defined);
      CHECK(s.value % 8 == 0);
    }
  CHECK(found_table);
}
