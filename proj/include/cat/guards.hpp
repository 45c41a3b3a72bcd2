// Canonical guard templates and runtime-support routine bodies. Both sides
// use these: the instrumenter emits them, the verifier matches them
// instruction-exactly. Shapes follow the store / rsp / shadow-stack guard
// listings with r10/r11 as the canonical scratch pair and r8/r9 as the
// registered variant for guards whose operand collides.
#pragma once

#include <cstdint>
#include <vector>

#include "cat/isa.hpp"
#include "cat/program.hpp"

namespace cat::guards {

// Reserved symbol names; user programs may not define them.
inline constexpr const char* kExitStub = "exit_stub";
inline constexpr const char* kCfiCheck = "CFICheck";
inline constexpr const char* kSsaCheck = "ssa_check";
inline constexpr const char* kOcallSend = "ocall_send";
inline constexpr const char* kOcallRecv = "ocall_recv";

bool is_reserved_symbol(const std::string& name);

// Marker value ssa_check plants in the simulated SSA page; any AEX
// overwrites it.
inline constexpr uint32_t kSsaMarkerValue = 0x0CA7F00D;

// The branch-target table region holds one count qword followed by this many
// entry slots; unused slots are +inf sentinels so the unrolled binary search
// needs no runtime shift.
inline constexpr uint32_t kTargetTableCapacity = (1u << 19) - 1;
inline constexpr uint64_t kTargetTableSentinel = ~0ull;

// SSA page layout, addressed relative to the shadow-stack base placeholder:
// the page sits immediately below the shadow region.
inline constexpr int32_t kSsaPageOffset = -4096;  // from shadow base
inline constexpr int32_t kSsaMarkerOffset = kSsaPageOffset + 0;
inline constexpr int32_t kSsaAexCountOffset = kSsaPageOffset + 8;
inline constexpr int32_t kSsaLastCheckedOffset = kSsaPageOffset + 16;

struct ScratchPair {
  isa::Reg s0, s1;
};
inline constexpr ScratchPair kCanonicalScratch{isa::Reg::R10, isa::Reg::R11};
inline constexpr ScratchPair kVariantScratch{isa::Reg::R8, isa::Reg::R9};

// 11 instructions bracketing a memory write: bounds-compare the effective
// address of `dest` against the data-window placeholders.
std::vector<isa::Instruction> store_guard(const isa::MemRef& dest, bool variant);

// 8 instructions following an explicit rsp write.
std::vector<isa::Instruction> rsp_guard(bool variant);

// 2 instructions in front of an indirect branch: stage the target in rdi and
// call CFICheck.
std::vector<isa::Instruction> cfi_guard(const isa::Operand& src);

// 10 instructions at function entry: bump the shadow top and store the
// return address into the new slot.
std::vector<isa::Instruction> shadow_prolog(bool variant);

// 11 instructions before ret: compare the shadow slot against the live
// return address, abort on mismatch, pop the shadow top.
std::vector<isa::Instruction> shadow_epilog(bool variant);

// Single annotation call emitted at block starts and every k instructions.
isa::Instruction ssa_check_call();

// Runtime-support routine bodies appended by the linker.
prog::Function exit_stub_function();
prog::Function cfi_check_function();
prog::Function ssa_check_function(uint32_t aex_threshold);

}  // namespace cat::guards
