#include "cat/verifier.hpp"

#include <algorithm>
#include <cassert>
#include <deque>
#include <sstream>

#include "cat/guards.hpp"

namespace cat::verifier {

using bundle::Placeholder;
using bundle::PolicyManifest;
using isa::Instruction;
using isa::Mnemonic;
using isa::Operand;
using isa::Reg;
using loader::LoadedImage;

namespace {

constexpr uint64_t kNone = UINT64_MAX;

const char* kViolationNames[] = {
    "MissingGuard",      "MalformedGuard", "TargetInsideGuard",
    "UndecodableInstruction", "UnverifiedIndirect", "MissingEpilog",
    "MissingSsaCheck",   "WrongPlaceholder",
};

// Sequential decoder over the loaded image, backed by the reachability map
// when available so nothing is decoded twice.
struct InstrSeq {
  const LoadedImage& img;
  const std::map<uint64_t, Instruction>* shared = nullptr;
  std::map<uint64_t, Instruction> local;
  uint64_t attempts = 0;

  const Instruction* at(uint64_t off) {
    if (shared) {
      auto it = shared->find(off);
      if (it != shared->end()) return &it->second;
    }
    auto it = local.find(off);
    if (it != local.end()) return &it->second;
    if (off >= img.code.size()) return nullptr;
    attempts++;
    try {
      return &local.emplace(off, isa::decode_instruction(img.code, off))
                  .first->second;
    } catch (const isa::IsaError&) {
      return nullptr;
    }
  }
};

struct MatchCtx {
  InstrSeq seq;
  uint64_t exit_off = kNone;
  uint64_t cfi_off = kNone;
  uint64_t ssa_off = kNone;
};

struct SeqSpec {
  GuardKind kind;
  std::vector<Instruction> expected;
  std::map<std::string, size_t> labels;  // body-internal labels
  size_t commit_depth = 0;  // mismatches before this index fail silently
  size_t capture_idx = SIZE_MAX;  // instruction whose source operand is free
  bool body = false;              // enforce per-instruction encoded lengths
};

struct SeqResult {
  std::optional<GuardMatch> match;
  std::optional<Violation> problem;
  Operand capture;
};

int64_t resolve_template_sym(const std::string& sym, const MatchCtx& c,
                             const std::map<std::string, uint64_t>& label_offsets) {
  if (auto it = label_offsets.find(sym); it != label_offsets.end())
    return static_cast<int64_t>(it->second);
  if (sym == guards::kExitStub) return static_cast<int64_t>(c.exit_off);
  if (sym == guards::kCfiCheck) return static_cast<int64_t>(c.cfi_off);
  if (sym == guards::kSsaCheck) return static_cast<int64_t>(c.ssa_off);
  return static_cast<int64_t>(kNone);
}

SeqResult match_sequence(MatchCtx& c, uint64_t off, const SeqSpec& spec) {
  SeqResult res;

  // Expected layout; needed to resolve body-internal labels and to pin
  // byte-exact lengths for runtime bodies (site guards have a variable
  // capture instruction instead).
  std::vector<uint64_t> expected_off(spec.expected.size());
  std::map<std::string, uint64_t> label_offsets;
  if (spec.body) {
    uint64_t cur = off;
    for (size_t i = 0; i < spec.expected.size(); i++) {
      expected_off[i] = cur;
      cur += isa::instruction_length(spec.expected[i]);
    }
    for (const auto& [name, idx] : spec.labels)
      label_offsets[name] = expected_off[idx];
  }

  GuardMatch m;
  m.kind = spec.kind;
  m.start = off;
  uint64_t cur = off;

  auto soft_fail = [&]() { return SeqResult{}; };
  auto hard_fail = [&](uint64_t at, ViolationKind k, const std::string& d) {
    SeqResult r;
    r.problem = Violation{at, k, d};
    return r;
  };
  auto mismatch = [&](size_t idx, uint64_t at, ViolationKind k, const std::string& d) {
    return idx < spec.commit_depth ? soft_fail() : hard_fail(at, k, d);
  };

  for (size_t i = 0; i < spec.expected.size(); i++) {
    const Instruction* actual = c.seq.at(cur);
    if (!actual)
      return mismatch(i, cur, ViolationKind::MalformedGuard,
                      std::string(guard_kind_name(spec.kind)) + " truncated or undecodable");

    Instruction want = spec.expected[i];
    bool placeholder_slot = false;
    Placeholder field{};
    for (int k = 0; k < want.nops; k++) {
      Operand& o = want.ops[k];
      if (o.kind == Operand::Kind::Imm && !o.sym.empty()) {
        int64_t t = resolve_template_sym(o.sym, c, label_offsets);
        if (static_cast<uint64_t>(t) == kNone)
          return mismatch(i, cur, ViolationKind::MalformedGuard,
                          "guard references a missing runtime routine");
        o.imm = t;
        o.sym.clear();
      }
    }
    if (want.mnem == Mnemonic::Movabs) {
      if (auto f = bundle::placeholder_from_value(
              static_cast<uint64_t>(want.ops[1].imm))) {
        placeholder_slot = true;
        field = *f;
      }
    }

    if (i == spec.capture_idx) {
      if (actual->mnem != want.mnem || actual->nops != want.nops ||
          !(actual->ops[0] == want.ops[0]) ||
          actual->ops[1].kind == Operand::Kind::Imm)
        return mismatch(i, cur, ViolationKind::MalformedGuard,
                        "guard operand stem mismatch");
      res.capture = actual->ops[1];
    } else if (placeholder_slot) {
      if (actual->mnem != Mnemonic::Movabs ||
          !(actual->ops[0] == want.ops[0]))
        return mismatch(i, cur, ViolationKind::MalformedGuard,
                        "expected placeholder load");
      if (actual->ops[1].imm != want.ops[1].imm)
        return mismatch(i, cur, ViolationKind::WrongPlaceholder,
                        std::string("expected ") + bundle::placeholder_name(field));
      m.slots.push_back({cur + actual->imm_offset, field});
    } else {
      if (!actual->same_semantics(want))
        return mismatch(i, cur, ViolationKind::MalformedGuard,
                        std::string(guard_kind_name(spec.kind)) + ": expected " +
                            isa::to_string(want) + ", found " +
                            isa::to_string(*actual));
    }
    if (spec.body && actual->length != isa::instruction_length(want))
      return mismatch(i, cur, ViolationKind::MalformedGuard,
                      "non-canonical encoding in runtime body");
    cur += actual->length;
  }

  m.length = cur - off;
  for (const auto& [name, loff] : label_offsets) m.internal_targets.push_back(loff);
  res.match = std::move(m);
  return res;
}

// Captureless templates for the store guard use a throwaway destination; the
// capture mechanism replaces it during matching.
isa::MemRef dummy_mem() {
  isa::MemRef m;
  m.base = Reg::Rax;
  return m;
}

SeqResult try_store_guard(MatchCtx& c, uint64_t off, bool variant) {
  SeqSpec spec;
  spec.kind = GuardKind::StoreGuard;
  spec.expected = guards::store_guard(dummy_mem(), variant);
  spec.commit_depth = 3;
  spec.capture_idx = 2;  // lea scratch, [dest]
  SeqResult r = match_sequence(c, off, spec);
  if (r.match) {
    const Instruction* g = c.seq.at(r.match->end());
    if (g && g->writes_memory() && g->ops[0].mem == r.capture.mem)
      r.match->guarded_instruction = r.match->end();
  }
  return r;
}

SeqResult try_rsp_guard(MatchCtx& c, uint64_t off, bool variant) {
  SeqSpec spec;
  spec.kind = GuardKind::RspGuard;
  spec.expected = guards::rsp_guard(variant);
  spec.commit_depth = 2;
  return match_sequence(c, off, spec);
}

SeqResult try_shadow_prolog(MatchCtx& c, uint64_t off, bool variant) {
  SeqSpec spec;
  spec.kind = GuardKind::ShadowProlog;
  spec.expected = guards::shadow_prolog(variant);
  spec.commit_depth = 4;
  return match_sequence(c, off, spec);
}

SeqResult try_shadow_epilog(MatchCtx& c, uint64_t off, bool variant) {
  SeqSpec spec;
  spec.kind = GuardKind::ShadowEpilog;
  spec.expected = guards::shadow_epilog(variant);
  spec.commit_depth = 4;
  SeqResult r = match_sequence(c, off, spec);
  if (r.match) {
    const Instruction* g = c.seq.at(r.match->end());
    if (g && g->mnem == Mnemonic::Ret)
      r.match->guarded_instruction = r.match->end();
  }
  return r;
}

SeqResult try_cfi_guard(MatchCtx& c, uint64_t off) {
  SeqSpec spec;
  spec.kind = GuardKind::CfiGuard;
  spec.expected = guards::cfi_guard(Operand::make_reg(Reg::Rax));
  spec.commit_depth = 2;  // only an exact mov rdi + call CFICheck counts
  spec.capture_idx = 0;
  SeqResult r = match_sequence(c, off, spec);
  if (r.match) {
    // The staged value must be the branch operand itself, and a memory
    // operand must not involve rdi or the staging mov changes the address.
    const Instruction* g = c.seq.at(r.match->end());
    bool rdi_aliased = r.capture.kind == Operand::Kind::Mem &&
                       r.capture.mem.uses(Reg::Rdi);
    if (g && g->is_indirect_branch() && g->ops[0] == r.capture && !rdi_aliased)
      r.match->guarded_instruction = r.match->end();
  }
  return r;
}

SeqResult try_body(MatchCtx& c, uint64_t off, const prog::Function& fn,
                   GuardKind kind) {
  SeqSpec spec;
  spec.kind = kind;
  spec.body = true;
  spec.commit_depth = 0;  // a runtime body is mandatory at its symbol
  spec.labels = fn.labels;
  spec.expected.reserve(fn.items.size());
  for (const auto& item : fn.items) spec.expected.push_back(item.ins);
  return match_sequence(c, off, spec);
}

struct ClaimSet {
  // start -> end, non-overlapping
  std::map<uint64_t, uint64_t> spans;

  void claim(uint64_t start, uint64_t end) { spans[start] = end; }
  bool contains(uint64_t off) const {
    auto it = spans.upper_bound(off);
    if (it == spans.begin()) return false;
    --it;
    return off >= it->first && off < it->second;
  }
};

}  // namespace

const char* violation_name(ViolationKind k) {
  return kViolationNames[static_cast<int>(k)];
}

const char* guard_kind_name(GuardKind k) {
  switch (k) {
    case GuardKind::StoreGuard: return "StoreGuard";
    case GuardKind::RspGuard: return "RspGuard";
    case GuardKind::CfiGuard: return "CfiGuard";
    case GuardKind::ShadowProlog: return "ShadowProlog";
    case GuardKind::ShadowEpilog: return "ShadowEpilog";
    case GuardKind::SsaCheckBody: return "SsaCheckBody";
    case GuardKind::CfiCheckBody: return "CfiCheckBody";
    case GuardKind::ExitStub: return "ExitStub";
  }
  return "?";
}

ControlFlowMap disassemble_reachable(const LoadedImage& img) {
  ControlFlowMap cf;
  uint64_t size = img.code.size();
  int64_t tramp_send = static_cast<int64_t>(img.layout.trampoline_send()) -
                       static_cast<int64_t>(img.base);
  int64_t tramp_recv = static_cast<int64_t>(img.layout.trampoline_recv()) -
                       static_cast<int64_t>(img.base);

  std::deque<uint64_t> work;
  auto push_root = [&](uint64_t off) {
    if (off < size) work.push_back(off);
    else
      cf.violations.push_back({off, ViolationKind::UndecodableInstruction,
                               "control target outside the image"});
  };
  push_root(img.entry - img.base);
  for (uint64_t t : img.resolved_targets) push_root(t - img.base);

  while (!work.empty()) {
    uint64_t off = work.front();
    work.pop_front();
    if (cf.insns.count(off)) continue;
    if (off >= size) {
      cf.violations.push_back({off, ViolationKind::UndecodableInstruction,
                               "control target outside the image"});
      continue;
    }
    cf.decode_attempts++;
    Instruction ins;
    try {
      ins = isa::decode_instruction(img.code, off);
    } catch (const isa::IsaError& e) {
      cf.violations.push_back({off, ViolationKind::UndecodableInstruction, e.what()});
      continue;
    }
    uint64_t next = off + ins.length;

    if (ins.is_direct_branch()) {
      int64_t target = ins.branch_target();
      bool is_call = ins.mnem == Mnemonic::Call;
      if (target == tramp_send || target == tramp_recv) {
        if (!is_call)
          cf.violations.push_back({off, ViolationKind::UndecodableInstruction,
                                   "only calls may reach the ocall stubs"});
      } else if (target < 0 || static_cast<uint64_t>(target) >= size) {
        cf.violations.push_back({off, ViolationKind::UndecodableInstruction,
                                 "branch target outside the image"});
      } else {
        cf.direct_targets.insert(static_cast<uint64_t>(target));
        if (is_call) cf.call_targets.insert(static_cast<uint64_t>(target));
        work.push_back(static_cast<uint64_t>(target));
      }
      if (is_call || ins.is_cond_jump()) work.push_back(next);
    } else if (ins.is_indirect_branch()) {
      for (uint64_t t : img.resolved_targets) work.push_back(t - img.base);
      if (ins.mnem == Mnemonic::Call) work.push_back(next);
    } else if (!ins.is_terminator()) {
      work.push_back(next);
    }
    cf.insns.emplace(off, std::move(ins));
  }

  // Overlapping encodings make the policy checks ambiguous; reject them.
  uint64_t prev_end = 0;
  uint64_t prev_off = 0;
  bool first = true;
  for (const auto& [off, ins] : cf.insns) {
    if (!first && off < prev_end)
      cf.violations.push_back({off, ViolationKind::UndecodableInstruction,
                               "overlaps the instruction at offset " +
                                   std::to_string(prev_off)});
    if (first || off + ins.length > prev_end) {
      prev_end = off + ins.length;
      prev_off = off;
    }
    first = false;
  }
  return cf;
}

MatchOutcome match_guard(const ControlFlowMap& cf, const LoadedImage& img,
                         uint64_t offset, GuardKind kind,
                         const PolicyManifest& manifest) {
  MatchCtx c{InstrSeq{img, &cf.insns, {}, 0}, kNone, kNone, kNone};
  auto sym = [&](const char* name) -> uint64_t {
    auto it = img.runtime_syms.find(name);
    return it == img.runtime_syms.end() ? kNone : it->second - img.base;
  };
  c.exit_off = sym(guards::kExitStub);
  c.cfi_off = sym(guards::kCfiCheck);
  c.ssa_off = sym(guards::kSsaCheck);

  auto lift = [](SeqResult r) {
    return MatchOutcome{std::move(r.match), std::move(r.problem)};
  };
  for (bool variant : {false, true}) {
    SeqResult r;
    switch (kind) {
      case GuardKind::StoreGuard: r = try_store_guard(c, offset, variant); break;
      case GuardKind::RspGuard: r = try_rsp_guard(c, offset, variant); break;
      case GuardKind::ShadowProlog: r = try_shadow_prolog(c, offset, variant); break;
      case GuardKind::ShadowEpilog: r = try_shadow_epilog(c, offset, variant); break;
      case GuardKind::CfiGuard: r = try_cfi_guard(c, offset); break;
      case GuardKind::ExitStub:
        r = try_body(c, offset, guards::exit_stub_function(), kind);
        break;
      case GuardKind::CfiCheckBody:
        r = try_body(c, offset, guards::cfi_check_function(), kind);
        break;
      case GuardKind::SsaCheckBody:
        r = try_body(c, offset, guards::ssa_check_function(manifest.aex_threshold),
                     kind);
        break;
    }
    if (r.match || r.problem) return lift(std::move(r));
    if (kind == GuardKind::CfiGuard || kind == GuardKind::ExitStub ||
        kind == GuardKind::CfiCheckBody || kind == GuardKind::SsaCheckBody)
      break;  // variant-free templates
  }
  return {};
}

std::vector<loader::ImmSlot> VerificationReport::all_slots() const {
  std::vector<loader::ImmSlot> slots;
  for (const GuardMatch& m : matches)
    slots.insert(slots.end(), m.slots.begin(), m.slots.end());
  return slots;
}

std::vector<std::pair<uint64_t, uint64_t>> VerificationReport::annotation_ranges(
    uint64_t base) const {
  std::vector<std::pair<uint64_t, uint64_t>> out;
  out.reserve(matches.size());
  for (const GuardMatch& m : matches)
    out.emplace_back(base + m.start, base + m.end());
  return out;
}

VerificationReport verify(const LoadedImage& img, const PolicyManifest& manifest) {
  VerificationReport rep;
  ControlFlowMap cf = disassemble_reachable(img);
  for (const auto& [off, ins] : cf.insns) {
    (void)ins;
    rep.coverage.insert(off);
  }
  rep.violations = cf.violations;

  MatchCtx c{InstrSeq{img, &cf.insns, {}, 0}, kNone, kNone, kNone};
  auto sym = [&](const char* name) -> uint64_t {
    auto it = img.runtime_syms.find(name);
    return it == img.runtime_syms.end() ? kNone : it->second - img.base;
  };
  c.exit_off = sym(guards::kExitStub);
  c.cfi_off = sym(guards::kCfiCheck);
  c.ssa_off = sym(guards::kSsaCheck);

  bool p_store = manifest.wants_store_guards();
  bool p_rsp = manifest.has(bundle::P2);
  bool p_cfi = manifest.has(bundle::P5);
  bool p_ssa = manifest.has(bundle::P6);
  bool any_policy = p_store || p_rsp || p_cfi || p_ssa;

  ClaimSet claimed;
  auto add_match = [&](GuardMatch m) {
    claimed.claim(m.start, m.end());
    rep.matches.push_back(std::move(m));
  };
  auto report = [&](Violation v) { rep.violations.push_back(std::move(v)); };

  // Runtime-support bodies are part of the proof: verify them at their
  // symbols whether or not execution can reach them.
  auto require_body = [&](uint64_t off, const char* what, GuardKind kind,
                          const prog::Function& fn) {
    if (off == kNone) {
      report({0, ViolationKind::MalformedGuard,
              std::string(what) + " routine missing from bundle"});
      return;
    }
    SeqResult r = try_body(c, off, fn, kind);
    if (r.match) add_match(std::move(*r.match));
    else if (r.problem) report(std::move(*r.problem));
  };
  if (any_policy)
    require_body(c.exit_off, "exit stub", GuardKind::ExitStub,
                 guards::exit_stub_function());
  if (p_cfi)
    require_body(c.cfi_off, "CFICheck", GuardKind::CfiCheckBody,
                 guards::cfi_check_function());
  if (p_ssa)
    require_body(c.ssa_off, "ssa_check", GuardKind::SsaCheckBody,
                 guards::ssa_check_function(manifest.aex_threshold));

  // Scan reachable code for guard instances.
  std::map<uint64_t, size_t> store_by_subject, cfi_by_subject, epilog_by_subject;
  std::map<uint64_t, size_t> rsp_by_start, prolog_by_start;
  for (auto it = cf.insns.begin(); it != cf.insns.end(); ++it) {
    uint64_t off = it->first;
    if (claimed.contains(off)) continue;

    SeqResult r;
    GuardKind matched_kind{};
    for (bool variant : {false, true}) {
      if (p_store) {
        r = try_store_guard(c, off, variant);
        if (r.match || r.problem) { matched_kind = GuardKind::StoreGuard; break; }
      }
      if (p_cfi) {
        r = try_shadow_prolog(c, off, variant);
        if (r.match || r.problem) { matched_kind = GuardKind::ShadowProlog; break; }
        r = try_shadow_epilog(c, off, variant);
        if (r.match || r.problem) { matched_kind = GuardKind::ShadowEpilog; break; }
      }
      if (p_rsp) {
        r = try_rsp_guard(c, off, variant);
        if (r.match || r.problem) { matched_kind = GuardKind::RspGuard; break; }
      }
      if (p_cfi && !variant) {
        r = try_cfi_guard(c, off);
        if (r.match || r.problem) { matched_kind = GuardKind::CfiGuard; break; }
      }
    }
    if (r.problem) {
      report(std::move(*r.problem));
      continue;
    }
    if (!r.match) continue;

    size_t idx = rep.matches.size();
    switch (matched_kind) {
      case GuardKind::StoreGuard:
        if (r.match->guarded_instruction != kNone)
          store_by_subject[r.match->guarded_instruction] = idx;
        break;
      case GuardKind::CfiGuard:
        if (r.match->guarded_instruction != kNone)
          cfi_by_subject[r.match->guarded_instruction] = idx;
        break;
      case GuardKind::ShadowEpilog:
        if (r.match->guarded_instruction != kNone)
          epilog_by_subject[r.match->guarded_instruction] = idx;
        break;
      case GuardKind::RspGuard:
        rsp_by_start[r.match->start] = idx;
        break;
      case GuardKind::ShadowProlog:
        prolog_by_start[r.match->start] = idx;
        break;
      default:
        break;
    }
    add_match(std::move(*r.match));
  }

  auto is_ssa_site = [&](uint64_t off) {
    if (c.ssa_off == kNone) return false;
    auto it = cf.insns.find(off);
    return it != cf.insns.end() && it->second.mnem == Mnemonic::Call &&
           it->second.is_direct_branch() &&
           it->second.branch_target() == static_cast<int64_t>(c.ssa_off);
  };
  // Calls from annotation sites legitimately target the runtime routines;
  // any other control transfer into claimed code is an evasion attempt.
  auto runtime_body_start = [&](uint64_t off) {
    for (const GuardMatch& g : rep.matches)
      if (g.start == off &&
          (g.kind == GuardKind::SsaCheckBody || g.kind == GuardKind::CfiCheckBody ||
           g.kind == GuardKind::ExitStub))
        return true;
    return false;
  };

  // Per-instruction policy requirements over unclaimed reachable code.
  for (const auto& [off, ins] : cf.insns) {
    if (claimed.contains(off) || is_ssa_site(off)) continue;
    if (p_store && ins.writes_memory() && !store_by_subject.count(off))
      report({off, ViolationKind::MissingGuard,
              "memory write lacks an adjacent store guard"});
    if (p_rsp && ins.writes_rsp()) {
      auto g = rsp_by_start.find(off + ins.length);
      if (g == rsp_by_start.end())
        report({off, ViolationKind::MissingGuard,
                "rsp write lacks a trailing guard"});
      else
        rep.matches[g->second].guarded_instruction = off;
    }
    if (p_cfi && ins.is_indirect_branch() && !cfi_by_subject.count(off))
      report({off, ViolationKind::UnverifiedIndirect,
              "indirect branch lacks a CFI guard"});
    if (p_cfi && ins.mnem == Mnemonic::Ret && !epilog_by_subject.count(off))
      report({off, ViolationKind::MissingEpilog,
              "ret lacks a shadow-stack epilog"});
  }

  // Shadow prologs at the entry, every direct-call target, and every listed
  // indirect target.
  if (p_cfi) {
    std::set<uint64_t> entries;
    entries.insert(img.entry - img.base);
    for (uint64_t t : cf.call_targets) entries.insert(t);
    for (uint64_t t : img.resolved_targets) entries.insert(t - img.base);
    for (uint64_t t : entries) {
      if (runtime_body_start(t)) continue;  // runtime bodies need no prolog
      uint64_t at = t;
      if (p_ssa && is_ssa_site(at)) at += cf.insns.at(at).length;
      if (!prolog_by_start.count(at))
        report({t, ViolationKind::MissingGuard,
                "function entry lacks a shadow-stack prolog"});
    }
  }

  if (p_ssa) {
    std::set<uint64_t> leaders;
    leaders.insert(img.entry - img.base);
    for (uint64_t t : img.resolved_targets) leaders.insert(t - img.base);
    for (const auto& [off, ins] : cf.insns) {
      if (claimed.contains(off)) continue;
      if (ins.is_direct_branch()) {
        int64_t t = ins.branch_target();
        if (t >= 0 && static_cast<uint64_t>(t) < img.code.size() &&
            !runtime_body_start(static_cast<uint64_t>(t)))
          leaders.insert(static_cast<uint64_t>(t));
        if (ins.is_cond_jump()) leaders.insert(off + ins.length);
      }
    }
    for (uint64_t l : leaders) {
      if (claimed.contains(l)) {
        report({l, ViolationKind::MissingSsaCheck,
                "block leader falls inside an annotation"});
        continue;
      }
      if (!is_ssa_site(l))
        report({l, ViolationKind::MissingSsaCheck,
                "basic block does not begin with an ssa check"});
    }
    uint64_t run = 0;
    for (const auto& [off, ins] : cf.insns) {
      (void)ins;
      if (claimed.contains(off)) continue;
      if (is_ssa_site(off) || leaders.count(off)) {
        run = 0;
        if (is_ssa_site(off)) continue;
      }
      run++;
      if (run > manifest.ssa_stride_k) {
        report({off, ViolationKind::MissingSsaCheck,
                "more than k instructions since the last ssa check"});
        run = 0;
      }
    }
  }

  // No branch target may point between the instructions of any annotation.
  {
    std::set<uint64_t> targets = cf.direct_targets;
    for (uint64_t t : img.resolved_targets) targets.insert(t - img.base);
    for (const GuardMatch& m : rep.matches) {
      auto lo = targets.upper_bound(m.start);
      for (auto it = lo; it != targets.end() && *it < m.end(); ++it) {
        if (std::find(m.internal_targets.begin(), m.internal_targets.end(), *it) ==
            m.internal_targets.end())
          report({*it, ViolationKind::TargetInsideGuard,
                  std::string("branch target inside a ") + guard_kind_name(m.kind)});
      }
    }
  }

  rep.accepted = rep.violations.empty();
  return rep;
}

std::string serialize_report(const VerificationReport& r) {
  std::ostringstream os;
  for (const Violation& v : r.violations) {
    os << "0x" << std::hex << v.offset << std::dec << " " << violation_name(v.kind);
    if (!v.detail.empty()) os << " # " << v.detail;
    os << "\n";
  }
  return os.str();
}

}  // namespace cat::verifier
