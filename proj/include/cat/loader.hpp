// Trusted consumer front half: simulated-enclave layout construction,
// relocation, indirect-target translation, and placeholder rewriting.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cat/bundle.hpp"

namespace cat::loader {

inline constexpr uint64_t kPageSize = 4096;

enum Perm : uint8_t { kPermNone = 0, kPermR = 1, kPermW = 2, kPermX = 4 };

enum class Role : uint8_t {
  Code,
  Data,
  GuardLow,
  Stack,
  GuardHigh,
  SsaPage,
  Shadow,
  TargetTable,
  LoaderHeap,
};

const char* role_name(Role r);

struct Region {
  uint64_t base = 0;
  uint64_t size = 0;
  uint8_t perms = kPermNone;
  Role role = Role::Code;

  uint64_t end() const { return base + size; }
  bool contains(uint64_t addr) const { return addr >= base && addr < end(); }
  bool overlaps(const Region& o) const { return base < o.end() && o.base < end(); }
};

struct LayoutConfig {
  uint64_t elrange_base = 0x10000000;
  uint64_t code_size = 32ull << 20;
  uint64_t data_size = 32ull << 20;
  uint64_t stack_size = 4ull << 20;
  uint64_t shadow_size = 4ull << 20;
  uint64_t table_size = 4ull << 20;  // must stay 4 MiB: CFICheck's probe depth
  uint64_t loader_heap_size = 0x27000;
  // Explicit bases for custom layouts; 0 = pack after the previous region.
  uint64_t code_base = 0;
  uint64_t data_base = 0;
  uint64_t stack_base = 0;
  uint64_t shadow_base = 0;
  uint64_t table_base = 0;

  bool operator==(const LayoutConfig&) const = default;
};

// key=value lines, '#' comments; unknown keys rejected.
LayoutConfig parse_layout_config(const std::string& text);
std::string serialize_layout_config(const LayoutConfig& c);

struct EnclaveLayout {
  uint64_t elrange_base = 0;
  uint64_t elrange_size = 0;
  Region code, data, guard_lo, stack, guard_hi, ssa, shadow, table, heap;

  std::vector<Region> regions() const {
    return {code, data, guard_lo, stack, guard_hi, ssa, shadow, table, heap};
  }
  std::optional<Region> region_at(uint64_t addr) const;

  // Contiguous window untrusted stores may hit: data region through the top
  // of the stack. The guard pages inside it stay unwritable; everything the
  // annotations defend (code, shadow, SSA, table, loader heap) lies outside.
  uint64_t writable_lo() const { return data.base; }
  uint64_t writable_hi() const { return stack.end(); }  // exclusive

  // Host-side control addresses just below the enclave range.
  uint64_t return_sentinel() const { return elrange_base - kPageSize; }
  uint64_t trampoline_send() const { return elrange_base - 2 * kPageSize; }
  uint64_t trampoline_recv() const { return elrange_base - 2 * kPageSize + 16; }

  uint64_t rewrite_value(bundle::Placeholder f, uint64_t target_count) const;
};

struct LoaderError : std::runtime_error {
  enum class Kind {
    SizeNotPageAligned,
    RegionsOverlap,
    BadConfig,
    UndefinedSymbol,
    ImageTooLarge,
    TooManyTargets,
    RelocOutOfRange,
    PlaceholderOutsideGuard,
    AlreadyRewritten,
  };
  Kind kind;
  LoaderError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

EnclaveLayout build_layout(const LayoutConfig& config);

struct LoadedImage {
  std::vector<uint8_t> code;  // relocated bytes
  uint64_t base = 0;
  uint64_t entry = 0;
  std::vector<uint64_t> resolved_targets;  // ascending, inside code region
  EnclaveLayout layout;
  bool rewritten = false;
  bool sealed = false;
  // Initial contents of the target-table region: count, entries, sentinels.
  std::vector<uint8_t> table_init;
  // Addresses of runtime-support symbols the verifier must inspect.
  std::map<std::string, uint64_t> runtime_syms;
};

// Copies the code, applies Abs64/Rel32 relocations against the load base,
// translates the indirect-target list to sorted addresses, and builds the
// target table. Placeholder immediates are left intact.
LoadedImage load(const bundle::CodeProofBundle& b, const EnclaveLayout& layout);

struct ImmSlot {
  uint64_t offset = 0;  // image-relative offset of an 8-byte immediate field
  bundle::Placeholder field{};
};

// Replaces every canonical placeholder with its layout value. `slots` come
// from the verifier's guard matches; a placeholder occurrence outside them
// is a verifier/rewriter disagreement and rejects the image.
void rewrite_immediates(LoadedImage& img, const std::vector<ImmSlot>& slots);

// Marks the code region read-execute; no further image mutation.
void seal(LoadedImage& img);

}  // namespace cat::loader
