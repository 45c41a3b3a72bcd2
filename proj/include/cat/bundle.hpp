// The "code + proof" container exchanged between producer and consumer:
// relocatable code image, relocations, symbols, indirect-branch target list
// and policy manifest, plus the canonical placeholder-immediate table that
// the loader rewrites after verification.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cat::bundle {

// Policy bits. P1 explicit stores, P2 stack-pointer writes, P3 critical data,
// P4 code pages, P5 control flow + shadow stack, P6 AEX frequency.
enum Policy : uint8_t {
  P1 = 1 << 0,
  P2 = 1 << 1,
  P3 = 1 << 2,
  P4 = 1 << 3,
  P5 = 1 << 4,
  P6 = 1 << 5,
};
constexpr uint8_t kAllPolicies = P1 | P2 | P3 | P4 | P5 | P6;

enum class ServiceMode : uint8_t { CCaaS = 1, CDaaS = 2 };

struct PolicyManifest {
  uint8_t policies = 0;
  ServiceMode mode = ServiceMode::CCaaS;
  uint32_t pad_length = 256;     // fixed plaintext capacity of every send
  uint32_t max_sends = 16;       // CDaaS conventionally 1
  uint32_t max_output_bits = 0;  // 0 = unlimited (CCaaS); CDaaS default 8
  uint32_t ssa_stride_k = 20;
  uint32_t aex_threshold = 22;

  bool has(Policy p) const { return policies & p; }
  // Store guards are required by any of the memory-protection policies.
  bool wants_store_guards() const { return policies & (P1 | P3 | P4); }
  bool operator==(const PolicyManifest&) const = default;
};

enum class RelocKind : uint8_t { Abs64 = 1, Rel32 = 2 };

constexpr uint32_t reloc_width(RelocKind k) { return k == RelocKind::Abs64 ? 8 : 4; }

struct Relocation {
  uint64_t offset = 0;        // byte offset into code
  uint32_t symbol_index = 0;  // index into symbols
  RelocKind kind = RelocKind::Abs64;
  int64_t addend = 0;
  bool operator==(const Relocation&) const = default;
};

struct Symbol {
  std::string name;
  bool defined = false;
  uint64_t value = 0;  // byte offset into code, meaningful iff defined
  bool operator==(const Symbol&) const = default;
};

struct CodeProofBundle {
  uint16_t version = 1;
  std::vector<uint8_t> code;
  std::vector<Relocation> relocations;
  std::vector<Symbol> symbols;
  std::vector<std::string> indirect_targets;  // symbol names, sorted
  PolicyManifest manifest;
  std::string entry_symbol;

  std::optional<uint32_t> find_symbol(const std::string& name) const;
  bool operator==(const CodeProofBundle&) const = default;
};

struct BundleError : std::runtime_error {
  enum class Kind {
    BadMagic,
    BadVersion,
    TruncatedSection,
    DanglingSymbolIndex,
    UnresolvedIndirectTarget,
    DuplicateSymbol,
    InvalidManifest,
    UnknownField,
  };
  Kind kind;
  BundleError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Checks all structural invariants; throws BundleError on the first failure.
void validate(const CodeProofBundle& b);

// Deterministic byte encoding; decode(encode(b)) is structurally equal to b.
std::vector<uint8_t> encode_bundle(const CodeProofBundle& b);

// Parses and validates; never reads past the input. Throws BundleError.
CodeProofBundle decode_bundle(std::span<const uint8_t> bytes);

// The nine rewrite targets. Canonical 64-bit constants planted by the
// producer and replaced by the loader after verification.
enum class Placeholder : uint8_t {
  UpperDataBound,
  LowerDataBound,
  UpperStackBound,
  LowerStackBound,
  UpperCodeBound,
  LowerCodeBound,
  BranchTargetCount,
  BranchTargetTableAddr,
  ShadowStackBase,
};

constexpr std::array<Placeholder, 9> kAllPlaceholders = {
    Placeholder::UpperDataBound,        Placeholder::LowerDataBound,
    Placeholder::UpperStackBound,       Placeholder::LowerStackBound,
    Placeholder::UpperCodeBound,        Placeholder::LowerCodeBound,
    Placeholder::BranchTargetCount,     Placeholder::BranchTargetTableAddr,
    Placeholder::ShadowStackBase,
};

constexpr uint64_t placeholder_value(Placeholder f) {
  switch (f) {
    case Placeholder::UpperDataBound:        return 0x3FFFFFFFFFFFFFFFull;
    case Placeholder::LowerDataBound:        return 0x4FFFFFFFFFFFFFFFull;
    case Placeholder::UpperStackBound:       return 0x5FFFFFFFFFFFFFFFull;
    case Placeholder::LowerStackBound:       return 0x6FFFFFFFFFFFFFFFull;
    case Placeholder::UpperCodeBound:        return 0x7FFFFFFFFFFFFFFFull;
    case Placeholder::LowerCodeBound:        return 0x8FFFFFFFFFFFFFFFull;
    case Placeholder::BranchTargetCount:     return 0x1FFFFFFFFull;
    case Placeholder::BranchTargetTableAddr: return 0x1FFFFFFFFFFFFFFFull;
    case Placeholder::ShadowStackBase:       return 0x2FFFFFFFFFFFFFFFull;
  }
  return 0;
}

const char* placeholder_name(Placeholder f);

// Name lookup used by tools and tests; throws BundleError::UnknownField.
uint64_t placeholder_value(const std::string& field_name);

std::optional<Placeholder> placeholder_from_value(uint64_t v);

// Byte-scan for any of the nine canonical constants (any alignment).
// Returns (offset, field) pairs in ascending offset order.
std::vector<std::pair<uint64_t, Placeholder>> scan_placeholders(
    std::span<const uint8_t> image);

}  // namespace cat::bundle
