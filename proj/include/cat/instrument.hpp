// The untrusted code producer: assembly parser, per-policy instrumentation
// passes, and the linker that emits a CodeProofBundle.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cat/bundle.hpp"
#include "cat/program.hpp"

namespace cat::instrument {

struct InstrumentError : std::runtime_error {
  enum class Kind {
    PassReapplied,
    UnsupportedAddressingMode,
    IndirectThroughRdi,
    DuplicateSymbol,
    MissingRuntimeSupport,
    ReservedSymbol,
  };
  Kind kind;
  InstrumentError(Kind k, const std::string& msg)
      : std::runtime_error(msg), kind(k) {}
};

// One instruction per line, destination-first operands, labels `name:`
// (leading dot = function-local), directives `.global` and `.quad`.
// Errors surface as isa::IsaError with line context.
prog::Program parse_asm(const std::string& source);

struct ObjectCode {
  std::vector<uint8_t> bytes;
  std::vector<bundle::Symbol> symbols;
  std::vector<bundle::Relocation> relocations;
};

// Lays out functions then data, resolves local labels, and turns
// cross-function and external references into relocation records.
ObjectCode assemble_program(const prog::Program& p);

// Convenience for tests and the baseline path: parse + assemble.
ObjectCode assemble(const std::string& source);

// Instrumentation passes. Fixed order: stores, rsp, cfi, shadow, ssa.
prog::Program instrument_stores(prog::Program p);
prog::Program instrument_rsp(prog::Program p);
// Also records the sorted indirect-branch target list in the program.
prog::Program instrument_cfi(prog::Program p);
prog::Program instrument_shadow_stack(prog::Program p);
prog::Program instrument_ssa(prog::Program p, uint32_t stride_k);

// Applies every pass the manifest selects, in order.
prog::Program apply_policies(prog::Program p, const bundle::PolicyManifest& m);

// Appends the runtime-support routines the manifest requires and packages
// the result. Pass markers must match the manifest's policy set.
bundle::CodeProofBundle link(const prog::Program& p,
                             const bundle::PolicyManifest& manifest);

}  // namespace cat::instrument
