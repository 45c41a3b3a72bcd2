// Trusted consumer core: recursive-descent disassembly of the loaded image
// and instruction-exact guard-template matching. Produces an accept/reject
// report plus the immediate slots the rewriter may touch.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cat/bundle.hpp"
#include "cat/isa.hpp"
#include "cat/loader.hpp"

namespace cat::verifier {

enum class ViolationKind : uint8_t {
  MissingGuard,
  MalformedGuard,
  TargetInsideGuard,
  UndecodableInstruction,
  UnverifiedIndirect,
  MissingEpilog,
  MissingSsaCheck,
  WrongPlaceholder,
};

const char* violation_name(ViolationKind k);

struct Violation {
  uint64_t offset = 0;  // image-relative
  ViolationKind kind{};
  std::string detail;
};

enum class GuardKind : uint8_t {
  StoreGuard,
  RspGuard,
  CfiGuard,
  ShadowProlog,
  ShadowEpilog,
  SsaCheckBody,
  CfiCheckBody,
  ExitStub,
};

const char* guard_kind_name(GuardKind k);

struct GuardMatch {
  GuardKind kind{};
  uint64_t start = 0;
  uint64_t length = 0;
  // Offset of the instruction this guard protects; UINT64_MAX when the
  // template has no adjacent subject (runtime bodies, unbound guards).
  uint64_t guarded_instruction = UINT64_MAX;
  std::vector<loader::ImmSlot> slots;
  std::vector<uint64_t> internal_targets;  // label offsets inside the body

  uint64_t end() const { return start + length; }
};

struct ControlFlowMap {
  std::map<uint64_t, isa::Instruction> insns;  // reachable, by offset
  std::set<uint64_t> direct_targets;
  std::set<uint64_t> call_targets;  // in-image direct call targets
  std::vector<Violation> violations;
  uint64_t decode_attempts = 0;
};

// Worklist traversal from the entry and the resolved indirect-target list;
// direct branches followed, indirect continuation = the resolved list,
// call fall-through included. Never throws on garbage input.
ControlFlowMap disassemble_reachable(const loader::LoadedImage& img);

struct VerificationReport {
  bool accepted = false;
  std::vector<Violation> violations;
  std::set<uint64_t> coverage;
  std::vector<GuardMatch> matches;

  std::vector<loader::ImmSlot> all_slots() const;
  // Absolute [start,end) spans of every matched annotation, for the
  // emulator's write-provenance whitelist.
  std::vector<std::pair<uint64_t, uint64_t>> annotation_ranges(uint64_t base) const;
};

struct MatchOutcome {
  std::optional<GuardMatch> match;
  std::optional<Violation> problem;
};

// Attempts a byte/instruction-exact match of one template at `offset`.
MatchOutcome match_guard(const ControlFlowMap& cf, const loader::LoadedImage& img,
                         uint64_t offset, GuardKind kind,
                         const bundle::PolicyManifest& manifest);

VerificationReport verify(const loader::LoadedImage& img,
                          const bundle::PolicyManifest& manifest);

// Line-oriented "<offset> <kind>" rendering for CI consumption.
std::string serialize_report(const VerificationReport& r);

}  // namespace cat::verifier
