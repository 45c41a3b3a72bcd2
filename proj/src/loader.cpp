#include "cat/loader.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "cat/guards.hpp"

namespace cat::loader {

using bundle::Placeholder;

namespace {

[[noreturn]] void fail(LoaderError::Kind k, const std::string& msg) {
  throw LoaderError(k, msg);
}

uint64_t read_u64(const std::vector<uint8_t>& b, uint64_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(b[off + i]) << (8 * i);
  return v;
}

void write_u64(std::vector<uint8_t>& b, uint64_t off, uint64_t v) {
  for (int i = 0; i < 8; i++) b[off + i] = (v >> (8 * i)) & 0xFF;
}

void write_u32(std::vector<uint8_t>& b, uint64_t off, uint32_t v) {
  for (int i = 0; i < 4; i++) b[off + i] = (v >> (8 * i)) & 0xFF;
}

}  // namespace

const char* role_name(Role r) {
  switch (r) {
    case Role::Code: return "code";
    case Role::Data: return "data";
    case Role::GuardLow: return "guard_lo";
    case Role::Stack: return "stack";
    case Role::GuardHigh: return "guard_hi";
    case Role::SsaPage: return "ssa";
    case Role::Shadow: return "shadow";
    case Role::TargetTable: return "table";
    case Role::LoaderHeap: return "loader_heap";
  }
  return "?";
}

LayoutConfig parse_layout_config(const std::string& text) {
  LayoutConfig c;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    n++;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      size_t b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(LoaderError::Kind::BadConfig, "layout config line " + std::to_string(n) +
                                             ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    uint64_t v = 0;
    try {
      v = std::stoull(val, nullptr, 0);
    } catch (...) {
      fail(LoaderError::Kind::BadConfig, "layout config: bad value for " + key);
    }
    if (key == "elrange_base") c.elrange_base = v;
    else if (key == "code_size") c.code_size = v;
    else if (key == "data_size") c.data_size = v;
    else if (key == "stack_size") c.stack_size = v;
    else if (key == "shadow_size") c.shadow_size = v;
    else if (key == "table_size") c.table_size = v;
    else if (key == "loader_heap_size") c.loader_heap_size = v;
    else if (key == "code_base") c.code_base = v;
    else if (key == "data_base") c.data_base = v;
    else if (key == "stack_base") c.stack_base = v;
    else if (key == "shadow_base") c.shadow_base = v;
    else if (key == "table_base") c.table_base = v;
    else fail(LoaderError::Kind::BadConfig, "layout config: unknown key " + key);
  }
  return c;
}

std::string serialize_layout_config(const LayoutConfig& c) {
  std::ostringstream os;
  os << std::hex;
  os << "elrange_base=0x" << c.elrange_base << "\n";
  os << "code_size=0x" << c.code_size << "\n";
  os << "data_size=0x" << c.data_size << "\n";
  os << "stack_size=0x" << c.stack_size << "\n";
  os << "shadow_size=0x" << c.shadow_size << "\n";
  os << "table_size=0x" << c.table_size << "\n";
  os << "loader_heap_size=0x" << c.loader_heap_size << "\n";
  if (c.code_base) os << "code_base=0x" << c.code_base << "\n";
  if (c.data_base) os << "data_base=0x" << c.data_base << "\n";
  if (c.stack_base) os << "stack_base=0x" << c.stack_base << "\n";
  if (c.shadow_base) os << "shadow_base=0x" << c.shadow_base << "\n";
  if (c.table_base) os << "table_base=0x" << c.table_base << "\n";
  return os.str();
}

std::optional<Region> EnclaveLayout::region_at(uint64_t addr) const {
  for (const Region& r : regions())
    if (r.contains(addr)) return r;
  return std::nullopt;
}

uint64_t EnclaveLayout::rewrite_value(Placeholder f, uint64_t target_count) const {
  switch (f) {
    // Upper bounds leave headroom for the widest store so a passing address
    // can never write past the window.
    case Placeholder::UpperDataBound: return writable_hi() - 8;
    case Placeholder::LowerDataBound: return writable_lo();
    case Placeholder::UpperStackBound: return stack.end();
    case Placeholder::LowerStackBound: return stack.base;
    case Placeholder::UpperCodeBound: return code.end() - 8;
    case Placeholder::LowerCodeBound: return code.base;
    case Placeholder::BranchTargetCount: return target_count;
    case Placeholder::BranchTargetTableAddr: return table.base;
    case Placeholder::ShadowStackBase: return shadow.base;
  }
  return 0;
}

EnclaveLayout build_layout(const LayoutConfig& config) {
  auto page_aligned = [](uint64_t v) { return v % kPageSize == 0; };
  for (auto [name, v] : std::initializer_list<std::pair<const char*, uint64_t>>{
           {"elrange_base", config.elrange_base},
           {"code_size", config.code_size},
           {"data_size", config.data_size},
           {"stack_size", config.stack_size},
           {"shadow_size", config.shadow_size},
           {"table_size", config.table_size},
           {"loader_heap_size", config.loader_heap_size},
           {"code_base", config.code_base},
           {"data_base", config.data_base},
           {"stack_base", config.stack_base},
           {"shadow_base", config.shadow_base},
           {"table_base", config.table_base}}) {
    if (!page_aligned(v))
      fail(LoaderError::Kind::SizeNotPageAligned,
           std::string(name) + " is not page aligned");
  }
  if (config.elrange_base < 4 * kPageSize)
    fail(LoaderError::Kind::BadConfig, "elrange_base leaves no room for host pages");
  if (config.code_size == 0 || config.data_size == 0 || config.stack_size == 0 ||
      config.shadow_size == 0)
    fail(LoaderError::Kind::BadConfig, "region sizes must be positive");
  // CFICheck's unrolled search probes the full fixed-capacity table.
  uint64_t needed = (1ull + guards::kTargetTableCapacity) * 8;
  if (config.table_size != needed)
    fail(LoaderError::Kind::BadConfig, "table_size must be 4 MiB");

  EnclaveLayout l;
  l.elrange_base = config.elrange_base;
  uint64_t cursor = config.elrange_base;
  auto place = [&](Region& r, uint64_t explicit_base, uint64_t size, uint8_t perms,
                   Role role) {
    r.base = explicit_base ? explicit_base : cursor;
    r.size = size;
    r.perms = perms;
    r.role = role;
    cursor = r.end();
  };
  place(l.code, config.code_base, config.code_size, kPermR | kPermX, Role::Code);
  place(l.data, config.data_base, config.data_size, kPermR | kPermW, Role::Data);
  place(l.guard_lo, 0, kPageSize, kPermNone, Role::GuardLow);
  place(l.stack, config.stack_base, config.stack_size, kPermR | kPermW, Role::Stack);
  place(l.guard_hi, 0, kPageSize, kPermNone, Role::GuardHigh);
  // The SSA page sits directly below the shadow region: annotations address
  // it relative to the shadow-stack-base placeholder.
  if (config.shadow_base) {
    l.ssa = {config.shadow_base - kPageSize, kPageSize, kPermR, Role::SsaPage};
    l.shadow = {config.shadow_base, config.shadow_size, kPermR, Role::Shadow};
  } else {
    place(l.ssa, 0, kPageSize, kPermR, Role::SsaPage);
    place(l.shadow, 0, config.shadow_size, kPermR, Role::Shadow);
  }
  cursor = std::max(cursor, l.shadow.end());
  place(l.table, config.table_base, config.table_size, kPermR, Role::TargetTable);
  place(l.heap, 0, config.loader_heap_size, kPermR, Role::LoaderHeap);

  uint64_t end = 0;
  auto regions = l.regions();
  for (const Region& r : regions) end = std::max(end, r.end());
  for (const Region& r : regions)
    if (r.base < l.elrange_base)
      fail(LoaderError::Kind::RegionsOverlap,
           std::string(role_name(r.role)) + " region below elrange base");
  for (size_t i = 0; i < regions.size(); i++)
    for (size_t j = i + 1; j < regions.size(); j++)
      if (regions[i].overlaps(regions[j]))
        fail(LoaderError::Kind::RegionsOverlap,
             std::string(role_name(regions[i].role)) + " overlaps " +
                 role_name(regions[j].role));
  l.elrange_size = end - l.elrange_base;

  // Data must run up to the stack so store guards see one contiguous window.
  if (l.data.end() != l.guard_lo.base || l.guard_lo.end() != l.stack.base)
    fail(LoaderError::Kind::RegionsOverlap,
         "data, low guard page and stack must be contiguous");
  if (l.stack.end() != l.guard_hi.base)
    fail(LoaderError::Kind::RegionsOverlap, "stack must abut its high guard page");
  return l;
}

LoadedImage load(const bundle::CodeProofBundle& b, const EnclaveLayout& layout) {
  bundle::validate(b);
  if (b.code.size() > layout.code.size)
    fail(LoaderError::Kind::ImageTooLarge,
         "code section exceeds the code region");

  LoadedImage img;
  img.code = b.code;
  img.base = layout.code.base;
  img.layout = layout;

  auto resolve = [&](uint32_t idx) -> uint64_t {
    const bundle::Symbol& s = b.symbols[idx];
    if (s.defined) return img.base + s.value;
    if (s.name == guards::kOcallSend) return layout.trampoline_send();
    if (s.name == guards::kOcallRecv) return layout.trampoline_recv();
    fail(LoaderError::Kind::UndefinedSymbol, "undefined symbol " + s.name);
  };

  for (const bundle::Relocation& r : b.relocations) {
    uint64_t target = resolve(r.symbol_index) + static_cast<uint64_t>(r.addend);
    if (r.kind == bundle::RelocKind::Abs64) {
      write_u64(img.code, r.offset, target);
    } else {
      int64_t rel = static_cast<int64_t>(target) -
                    static_cast<int64_t>(img.base + r.offset + 4);
      if (rel < INT32_MIN || rel > INT32_MAX)
        fail(LoaderError::Kind::RelocOutOfRange,
             "rel32 displacement out of range for " + b.symbols[r.symbol_index].name);
      write_u32(img.code, r.offset, static_cast<uint32_t>(rel));
    }
  }

  auto entry_idx = b.find_symbol(b.entry_symbol);
  if (b.entry_symbol.empty() || !entry_idx)
    fail(LoaderError::Kind::UndefinedSymbol, "bundle has no entry symbol");
  img.entry = img.base + b.symbols[*entry_idx].value;

  std::set<uint64_t> targets;
  for (const std::string& name : b.indirect_targets) {
    auto idx = b.find_symbol(name);
    targets.insert(img.base + b.symbols[*idx].value);
  }
  img.resolved_targets.assign(targets.begin(), targets.end());
  if (img.resolved_targets.size() > guards::kTargetTableCapacity - 1)
    fail(LoaderError::Kind::TooManyTargets, "indirect target list exceeds table capacity");

  img.table_init.assign(layout.table.size, 0);
  write_u64(img.table_init, 0, img.resolved_targets.size());
  uint64_t off = 8;
  for (uint64_t t : img.resolved_targets) {
    write_u64(img.table_init, off, t);
    off += 8;
  }
  for (; off < img.table_init.size(); off += 8)
    write_u64(img.table_init, off, guards::kTargetTableSentinel);

  for (const char* name : {guards::kExitStub, guards::kCfiCheck, guards::kSsaCheck}) {
    if (auto idx = b.find_symbol(name); idx && b.symbols[*idx].defined)
      img.runtime_syms[name] = img.base + b.symbols[*idx].value;
  }
  return img;
}

void rewrite_immediates(LoadedImage& img, const std::vector<ImmSlot>& slots) {
  if (img.rewritten)
    fail(LoaderError::Kind::AlreadyRewritten, "image already rewritten");

  std::set<uint64_t> slot_offsets;
  for (const ImmSlot& s : slots) {
    if (s.offset + 8 > img.code.size())
      fail(LoaderError::Kind::PlaceholderOutsideGuard, "slot past image end");
    if (read_u64(img.code, s.offset) != bundle::placeholder_value(s.field))
      fail(LoaderError::Kind::PlaceholderOutsideGuard,
           "slot does not hold its placeholder constant");
    slot_offsets.insert(s.offset);
  }

  // Every placeholder byte pattern in the image must be one of the verified
  // immediate fields; anything else is a producer trying to smuggle one in.
  for (auto [off, field] : bundle::scan_placeholders(img.code)) {
    (void)field;
    if (!slot_offsets.count(off))
      fail(LoaderError::Kind::PlaceholderOutsideGuard,
           "placeholder at offset " + std::to_string(off) +
               " outside any verified guard slot");
  }

  for (const ImmSlot& s : slots)
    write_u64(img.code, s.offset,
              img.layout.rewrite_value(s.field, img.resolved_targets.size()));
  img.rewritten = true;
}

void seal(LoadedImage& img) { img.sealed = true; }

}  // namespace cat::loader
