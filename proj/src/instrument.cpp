#include "cat/instrument.hpp"

#include <algorithm>
#include <cassert>
#include <map>
#include <set>

#include "cat/guards.hpp"

namespace cat::prog {

void insert_items(Function& f, size_t idx, const std::vector<Item>& items) {
  assert(idx <= f.items.size());
  for (auto& [name, li] : f.labels)
    if (li > idx) li += items.size();
  f.items.insert(f.items.begin() + static_cast<ptrdiff_t>(idx), items.begin(),
                 items.end());
}

}  // namespace cat::prog

namespace cat::instrument {

using bundle::PolicyManifest;
using isa::Instruction;
using isa::IsaError;
using isa::Mnemonic;
using isa::Operand;
using isa::Reg;
using prog::Item;
using prog::Program;
using prog::Provenance;

namespace {

[[noreturn]] void inst_fail(InstrumentError::Kind k, const std::string& msg) {
  throw InstrumentError(k, msg);
}

void require_fresh(const Program& p, uint32_t bit, const char* pass) {
  if (p.passes_applied & bit)
    inst_fail(InstrumentError::Kind::PassReapplied,
              std::string(pass) + " pass already applied");
}

uint32_t next_guard_seq = 1;

std::vector<Item> as_guard_items(const std::vector<Instruction>& seq,
                                 Provenance prov) {
  uint32_t id = next_guard_seq++;
  std::vector<Item> items;
  items.reserve(seq.size());
  for (const Instruction& ins : seq) items.push_back({ins, prov, id});
  return items;
}

bool scratch_conflict(const isa::MemRef& m, guards::ScratchPair s) {
  return m.uses(s.s0) || m.uses(s.s1);
}

}  // namespace

prog::Program instrument_stores(prog::Program p) {
  require_fresh(p, prog::kPassStores, "store");
  for (auto& f : p.functions) {
    for (size_t i = 0; i < f.items.size(); i++) {
      const Item& it = f.items[i];
      if (it.prov != Provenance::User || !it.ins.writes_memory()) continue;
      const isa::MemRef& dest = it.ins.ops[0].mem;
      // r10/r11 work even when the destination uses them (the lea reads the
      // originals before the scratch write); the variant pair just keeps the
      // common case free of aliasing.
      bool variant = scratch_conflict(dest, guards::kCanonicalScratch) &&
                     !scratch_conflict(dest, guards::kVariantScratch);
      auto guard = guards::store_guard(dest, variant);
      prog::insert_items(f, i, as_guard_items(guard, Provenance::GuardBefore));
      i += guard.size();
    }
  }
  p.passes_applied |= prog::kPassStores;
  return p;
}

prog::Program instrument_rsp(prog::Program p) {
  require_fresh(p, prog::kPassRsp, "rsp");
  for (auto& f : p.functions) {
    for (size_t i = 0; i < f.items.size(); i++) {
      const Item& it = f.items[i];
      if (it.prov != Provenance::User || !it.ins.writes_rsp()) continue;
      auto guard = guards::rsp_guard(false);
      prog::insert_items(f, i + 1, as_guard_items(guard, Provenance::GuardAfter));
      i += guard.size();
    }
  }
  p.passes_applied |= prog::kPassRsp;
  return p;
}

prog::Program instrument_cfi(prog::Program p) {
  require_fresh(p, prog::kPassCfi, "cfi");
  for (auto& f : p.functions) {
    for (size_t i = 0; i < f.items.size(); i++) {
      const Item& it = f.items[i];
      if (it.prov != Provenance::User || !it.ins.is_indirect_branch()) continue;
      const Operand& src = it.ins.ops[0];
      if (src.kind == Operand::Kind::Mem && src.mem.uses(Reg::Rdi))
        inst_fail(InstrumentError::Kind::IndirectThroughRdi,
                  "indirect branch through memory addressed by rdi in " + f.name +
                      "; rewrite with another register");
      auto guard = guards::cfi_guard(src);
      prog::insert_items(f, i, as_guard_items(guard, Provenance::GuardBefore));
      i += guard.size();
    }
  }

  // Target list: every function label whose address is taken.
  std::set<std::string> fnames;
  for (const auto& f : p.functions) fnames.insert(f.name);
  std::set<std::string> taken;
  for (const auto& d : p.data)
    for (const auto& w : d.words)
      if (!w.sym.empty() && fnames.count(w.sym)) taken.insert(w.sym);
  for (const auto& f : p.functions)
    for (const Item& it : f.items)
      if (it.ins.mnem == Mnemonic::Movabs && !it.ins.ops[1].sym.empty() &&
          fnames.count(it.ins.ops[1].sym))
        taken.insert(it.ins.ops[1].sym);
  p.indirect_targets.assign(taken.begin(), taken.end());  // set is sorted

  p.passes_applied |= prog::kPassCfi;
  return p;
}

prog::Program instrument_shadow_stack(prog::Program p) {
  require_fresh(p, prog::kPassShadow, "shadow stack");
  for (auto& f : p.functions) {
    prog::insert_items(f, 0,
                       as_guard_items(guards::shadow_prolog(false),
                                      Provenance::GuardBefore));
    for (size_t i = 0; i < f.items.size(); i++) {
      const Item& it = f.items[i];
      if (it.prov != Provenance::User || it.ins.mnem != Mnemonic::Ret) continue;
      auto epilog = guards::shadow_epilog(false);
      prog::insert_items(f, i, as_guard_items(epilog, Provenance::GuardBefore));
      i += epilog.size();
    }
  }
  p.passes_applied |= prog::kPassShadow;
  return p;
}

prog::Program instrument_ssa(prog::Program p, uint32_t stride_k) {
  require_fresh(p, prog::kPassSsa, "ssa");
  if (stride_k < 1)
    inst_fail(InstrumentError::Kind::MissingRuntimeSupport, "ssa stride must be >= 1");

  for (auto& f : p.functions) {
    // User-instruction view: ordinal -> (item index, annotation-group start).
    struct UserPos {
      size_t item_idx;
      size_t group_start;
    };
    std::vector<UserPos> users;
    std::optional<size_t> group;
    for (size_t i = 0; i < f.items.size(); i++) {
      switch (f.items[i].prov) {
        case Provenance::GuardBefore:
          if (!group) group = i;
          break;
        case Provenance::User:
          users.push_back({i, group.value_or(i)});
          group.reset();
          break;
        default:
          group.reset();
          break;
      }
    }
    if (users.empty()) continue;

    // Block leaders over the original instruction stream: entry, fall-through
    // after a terminator or conditional jump, and referenced label positions.
    std::set<std::string> referenced;
    for (const Item& it : f.items)
      if (it.prov == Provenance::User && it.ins.is_direct_branch() &&
          !it.ins.ops[0].sym.empty() && it.ins.ops[0].sym[0] == '.')
        referenced.insert(it.ins.ops[0].sym);

    std::set<size_t> leaders;
    leaders.insert(0);
    for (size_t u = 1; u < users.size(); u++) {
      const Instruction& prev = f.items[users[u - 1].item_idx].ins;
      if (prev.is_terminator() || prev.is_cond_jump()) leaders.insert(u);
    }
    for (const auto& [name, idx] : f.labels) {
      if (!referenced.count(name)) continue;
      for (size_t u = 0; u < users.size(); u++) {
        if (users[u].item_idx >= idx) {
          leaders.insert(u);
          break;
        }
      }
    }

    std::vector<size_t> sorted_leaders(leaders.begin(), leaders.end());
    std::vector<size_t> insert_points;
    for (size_t li = 0; li < sorted_leaders.size(); li++) {
      size_t begin = sorted_leaders[li];
      size_t end = li + 1 < sorted_leaders.size() ? sorted_leaders[li + 1]
                                                  : users.size();
      for (size_t u = begin; u < end; u += stride_k)
        insert_points.push_back(users[u].group_start);
    }
    std::sort(insert_points.rbegin(), insert_points.rend());
    for (size_t at : insert_points)
      prog::insert_items(
          f, at, as_guard_items({guards::ssa_check_call()}, Provenance::GuardBefore));
  }
  p.passes_applied |= prog::kPassSsa;
  return p;
}

prog::Program apply_policies(prog::Program p, const PolicyManifest& m) {
  if (m.wants_store_guards()) p = instrument_stores(std::move(p));
  if (m.has(bundle::P2)) p = instrument_rsp(std::move(p));
  if (m.has(bundle::P5)) {
    p = instrument_cfi(std::move(p));
    p = instrument_shadow_stack(std::move(p));
  }
  if (m.has(bundle::P6)) p = instrument_ssa(std::move(p), m.ssa_stride_k);
  return p;
}

namespace {

struct Layout {
  struct Fn {
    const prog::Function* f;
    uint64_t start = 0;
    std::vector<uint64_t> item_offsets;
  };
  std::vector<Fn> fns;
  struct Data {
    const prog::DataObject* d;
    uint64_t start = 0;
  };
  std::vector<Data> objs;
  uint64_t code_end = 0;  // end of instructions, before data padding
  uint64_t total = 0;
};

Layout lay_out(const Program& p) {
  Layout l;
  uint64_t off = 0;
  for (const auto& f : p.functions) {
    Layout::Fn lf;
    lf.f = &f;
    lf.start = off;
    for (const Item& it : f.items) {
      lf.item_offsets.push_back(off);
      off += isa::instruction_length(it.ins);
    }
    l.fns.push_back(std::move(lf));
  }
  l.code_end = off;
  for (const auto& d : p.data) {
    off = (off + 7) & ~7ull;  // nop padding keeps data qword-aligned
    l.objs.push_back({&d, off});
    off += d.words.size() * 8;
  }
  l.total = off;
  return l;
}

}  // namespace

ObjectCode assemble_program(const Program& p) {
  Layout l = lay_out(p);

  ObjectCode obj;
  std::map<std::string, uint32_t> sym_index;
  auto intern = [&](const std::string& name, bool defined, uint64_t value) {
    auto it = sym_index.find(name);
    if (it != sym_index.end()) return it->second;
    uint32_t idx = static_cast<uint32_t>(obj.symbols.size());
    obj.symbols.push_back({name, defined, value});
    sym_index.emplace(name, idx);
    return idx;
  };
  for (const auto& lf : l.fns) intern(lf.f->name, true, lf.start);
  for (const auto& lo : l.objs) intern(lo.d->name, true, lo.start);

  auto add_reloc = [&](uint64_t offset, const std::string& sym,
                       bundle::RelocKind kind) {
    uint32_t idx = sym_index.count(sym) ? sym_index[sym] : intern(sym, false, 0);
    obj.relocations.push_back({offset, idx, kind, 0});
  };

  for (const auto& lf : l.fns) {
    for (size_t i = 0; i < lf.f->items.size(); i++) {
      Instruction ins = lf.f->items[i].ins;
      std::string global_ref;
      for (int k = 0; k < ins.nops; k++) {
        Operand& o = ins.ops[k];
        if (o.kind != Operand::Kind::Imm || o.sym.empty()) continue;
        if (o.sym[0] == '.') {
          auto li = lf.f->labels.find(o.sym);
          if (li == lf.f->labels.end())
            throw IsaError(IsaError::Kind::UndefinedLabel,
                           "undefined label " + o.sym + " in " + lf.f->name);
          o.imm = static_cast<int64_t>(lf.item_offsets[li->second]);
          o.sym.clear();
        } else {
          if (ins.mnem != Mnemonic::Movabs && !ins.is_direct_branch())
            throw IsaError(IsaError::Kind::OperandMismatch,
                           "only movabs and direct branches may reference symbol " +
                               o.sym);
          global_ref = o.sym;
        }
      }
      uint64_t at = lf.item_offsets[i];
      assert(at == obj.bytes.size());
      Instruction enc = isa::encode_instruction(ins, at, obj.bytes);
      if (!global_ref.empty())
        add_reloc(at + enc.imm_offset, global_ref,
                  enc.mnem == Mnemonic::Movabs ? bundle::RelocKind::Abs64
                                               : bundle::RelocKind::Rel32);
    }
  }

  for (const auto& lo : l.objs) {
    while (obj.bytes.size() < lo.start) obj.bytes.push_back(0x90);
    for (const prog::DataWord& w : lo.d->words) {
      if (!w.sym.empty()) add_reloc(obj.bytes.size(), w.sym, bundle::RelocKind::Abs64);
      uint64_t v = w.sym.empty() ? w.value : 0;
      for (int k = 0; k < 8; k++) obj.bytes.push_back((v >> (8 * k)) & 0xFF);
    }
  }
  assert(obj.bytes.size() == l.total);
  return obj;
}

ObjectCode assemble(const std::string& source) {
  return assemble_program(parse_asm(source));
}

bundle::CodeProofBundle link(const Program& p, const PolicyManifest& manifest) {
  auto check_pass = [&](bool wanted, uint32_t bit, const char* what) {
    bool applied = p.passes_applied & bit;
    if (wanted != applied)
      inst_fail(InstrumentError::Kind::MissingRuntimeSupport,
                std::string(what) + (wanted ? " pass required by manifest but not applied"
                                            : " pass applied but not selected in manifest"));
  };
  check_pass(manifest.wants_store_guards(), prog::kPassStores, "store");
  check_pass(manifest.has(bundle::P2), prog::kPassRsp, "rsp");
  check_pass(manifest.has(bundle::P5), prog::kPassCfi, "cfi");
  check_pass(manifest.has(bundle::P5), prog::kPassShadow, "shadow");
  check_pass(manifest.has(bundle::P6), prog::kPassSsa, "ssa");

  for (const auto& f : p.functions)
    if (guards::is_reserved_symbol(f.name))
      inst_fail(InstrumentError::Kind::ReservedSymbol,
                "symbol " + f.name + " is reserved for runtime support");
  for (const auto& d : p.data)
    if (guards::is_reserved_symbol(d.name))
      inst_fail(InstrumentError::Kind::ReservedSymbol,
                "symbol " + d.name + " is reserved for runtime support");

  // Garbage-collect functions unreachable from the entry and the data
  // objects. Dead guarded code would carry placeholder immediates the
  // verifier never inspects, which the rewriter then rejects.
  Program full = p;
  {
    std::set<std::string> fnames;
    for (const auto& f : full.functions) fnames.insert(f.name);
    std::set<std::string> kept;
    std::vector<std::string> work{full.entry};
    for (const auto& d : full.data)
      for (const auto& w : d.words)
        if (!w.sym.empty()) work.push_back(w.sym);
    while (!work.empty()) {
      std::string name = std::move(work.back());
      work.pop_back();
      if (!fnames.count(name) || !kept.insert(name).second) continue;
      const prog::Function* f = full.find_function(name);
      for (const Item& it : f->items)
        for (int k = 0; k < it.ins.nops; k++) {
          const Operand& o = it.ins.ops[k];
          if (o.kind == Operand::Kind::Imm && !o.sym.empty() && o.sym[0] != '.')
            work.push_back(o.sym);
        }
    }
    std::erase_if(full.functions,
                  [&](const prog::Function& f) { return !kept.count(f.name); });
    // The target list may only name surviving functions.
    if (!full.indirect_targets.empty()) {
      std::set<std::string> taken;
      for (const auto& d : full.data)
        for (const auto& w : d.words)
          if (!w.sym.empty() && kept.count(w.sym)) taken.insert(w.sym);
      for (const auto& f : full.functions)
        for (const Item& it : f.items)
          if (it.ins.mnem == Mnemonic::Movabs && !it.ins.ops[1].sym.empty() &&
              kept.count(it.ins.ops[1].sym))
            taken.insert(it.ins.ops[1].sym);
      full.indirect_targets.assign(taken.begin(), taken.end());
    }
  }

  bool any_guards = manifest.wants_store_guards() || manifest.has(bundle::P2) ||
                    manifest.has(bundle::P5) || manifest.has(bundle::P6);
  if (manifest.has(bundle::P5)) full.functions.push_back(guards::cfi_check_function());
  if (manifest.has(bundle::P6))
    full.functions.push_back(guards::ssa_check_function(manifest.aex_threshold));
  if (any_guards) full.functions.push_back(guards::exit_stub_function());

  ObjectCode obj = assemble_program(full);

  bundle::CodeProofBundle b;
  b.code = std::move(obj.bytes);
  b.relocations = std::move(obj.relocations);
  b.symbols = std::move(obj.symbols);
  b.indirect_targets = full.indirect_targets;
  b.manifest = manifest;
  b.entry_symbol = p.entry;
  bundle::validate(b);
  return b;
}

}  // namespace cat::instrument
