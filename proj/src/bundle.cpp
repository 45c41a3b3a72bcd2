#include "cat/bundle.hpp"

#include <cstring>
#include <set>

namespace cat::bundle {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'T', 'B'};
constexpr uint16_t kVersion = 1;

enum SectionKind : uint8_t {
  kSecCode = 1,
  kSecRelocations = 2,
  kSecSymbols = 3,
  kSecIndirectTargets = 4,
  kSecManifest = 5,
  kSecEntrySymbol = 6,
};

[[noreturn]] void fail(BundleError::Kind k, const std::string& msg) {
  throw BundleError(k, msg);
}

struct Writer {
  std::vector<uint8_t> out;
  void u8(uint8_t v) { out.push_back(v); }
  void u16(uint16_t v) { for (int i = 0; i < 2; i++) out.push_back((v >> (8 * i)) & 0xFF); }
  void u32(uint32_t v) { for (int i = 0; i < 4; i++) out.push_back((v >> (8 * i)) & 0xFF); }
  void u64(uint64_t v) { for (int i = 0; i < 8; i++) out.push_back((v >> (8 * i)) & 0xFF); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  void bytes(std::span<const uint8_t> b) { out.insert(out.end(), b.begin(), b.end()); }
};

struct Reader {
  std::span<const uint8_t> in;
  size_t pos = 0;

  void need(size_t n) {
    if (n > in.size() || pos > in.size() - n)
      fail(BundleError::Kind::TruncatedSection, "input shorter than declared contents");
  }
  uint8_t u8() { need(1); return in[pos++]; }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(in[pos] | (in[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v |= static_cast<uint32_t>(in[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(in[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
    pos += n;
    return s;
  }
};

void write_manifest(Writer& w, const PolicyManifest& m) {
  w.u8(m.policies);
  w.u8(static_cast<uint8_t>(m.mode));
  w.u32(m.pad_length);
  w.u32(m.max_sends);
  w.u32(m.max_output_bits);
  w.u32(m.ssa_stride_k);
  w.u32(m.aex_threshold);
}

PolicyManifest read_manifest(Reader& r) {
  PolicyManifest m;
  m.policies = r.u8();
  uint8_t mode = r.u8();
  if (mode != 1 && mode != 2)
    fail(BundleError::Kind::InvalidManifest, "unknown service mode");
  m.mode = static_cast<ServiceMode>(mode);
  m.pad_length = r.u32();
  m.max_sends = r.u32();
  m.max_output_bits = r.u32();
  m.ssa_stride_k = r.u32();
  m.aex_threshold = r.u32();
  return m;
}

}  // namespace

std::optional<uint32_t> CodeProofBundle::find_symbol(const std::string& name) const {
  for (uint32_t i = 0; i < symbols.size(); i++)
    if (symbols[i].name == name) return i;
  return std::nullopt;
}

void validate(const CodeProofBundle& b) {
  if (b.version != kVersion)
    fail(BundleError::Kind::BadVersion, "unsupported bundle version");

  std::set<std::string> names;
  for (const Symbol& s : b.symbols) {
    if (!names.insert(s.name).second)
      fail(BundleError::Kind::DuplicateSymbol, "duplicate symbol " + s.name);
    if (s.defined && s.value > b.code.size())
      fail(BundleError::Kind::TruncatedSection,
           "symbol " + s.name + " points past code end");
  }

  for (const Relocation& r : b.relocations) {
    if (r.symbol_index >= b.symbols.size())
      fail(BundleError::Kind::DanglingSymbolIndex, "relocation symbol index out of range");
    if (r.kind != RelocKind::Abs64 && r.kind != RelocKind::Rel32)
      fail(BundleError::Kind::TruncatedSection, "unknown relocation kind");
    uint64_t width = reloc_width(r.kind);
    if (r.offset > b.code.size() || b.code.size() - r.offset < width)
      fail(BundleError::Kind::TruncatedSection, "relocation window past code end");
  }

  for (const std::string& t : b.indirect_targets) {
    auto idx = b.find_symbol(t);
    if (!idx || !b.symbols[*idx].defined)
      fail(BundleError::Kind::UnresolvedIndirectTarget,
           "indirect target " + t + " has no defined symbol");
  }

  const PolicyManifest& m = b.manifest;
  if (m.pad_length == 0)
    fail(BundleError::Kind::InvalidManifest, "pad_length must be positive");
  if (m.mode == ServiceMode::CDaaS && m.max_sends < 1)
    fail(BundleError::Kind::InvalidManifest, "CDaaS requires max_sends >= 1");
  if (m.ssa_stride_k < 1)
    fail(BundleError::Kind::InvalidManifest, "ssa_stride_k must be >= 1");
  if (m.aex_threshold < 1)
    fail(BundleError::Kind::InvalidManifest, "aex_threshold must be >= 1");

  if (!b.entry_symbol.empty()) {
    auto idx = b.find_symbol(b.entry_symbol);
    if (!idx || !b.symbols[*idx].defined)
      fail(BundleError::Kind::UnresolvedIndirectTarget,
           "entry symbol " + b.entry_symbol + " undefined");
  }
}

std::vector<uint8_t> encode_bundle(const CodeProofBundle& b) {
  validate(b);

  struct Section {
    uint8_t kind;
    std::vector<uint8_t> payload;
  };
  std::vector<Section> sections;

  {
    Writer w;
    w.bytes(b.code);
    sections.push_back({kSecCode, std::move(w.out)});
  }
  {
    Writer w;
    w.u32(static_cast<uint32_t>(b.relocations.size()));
    for (const Relocation& r : b.relocations) {
      w.u64(r.offset);
      w.u32(r.symbol_index);
      w.u8(static_cast<uint8_t>(r.kind));
      w.u64(static_cast<uint64_t>(r.addend));
    }
    sections.push_back({kSecRelocations, std::move(w.out)});
  }
  {
    Writer w;
    w.u32(static_cast<uint32_t>(b.symbols.size()));
    for (const Symbol& s : b.symbols) {
      w.str(s.name);
      w.u8(s.defined ? 1 : 0);
      w.u64(s.value);
    }
    sections.push_back({kSecSymbols, std::move(w.out)});
  }
  {
    Writer w;
    w.u32(static_cast<uint32_t>(b.indirect_targets.size()));
    for (const std::string& t : b.indirect_targets) w.str(t);
    sections.push_back({kSecIndirectTargets, std::move(w.out)});
  }
  {
    Writer w;
    write_manifest(w, b.manifest);
    sections.push_back({kSecManifest, std::move(w.out)});
  }
  {
    Writer w;
    w.str(b.entry_symbol);
    sections.push_back({kSecEntrySymbol, std::move(w.out)});
  }

  Writer w;
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(kMagic), 4));
  w.u16(b.version);
  w.u16(static_cast<uint16_t>(sections.size()));
  uint64_t offset = w.out.size() + sections.size() * 17;  // kind u8 + offset u64 + length u64
  for (const Section& s : sections) {
    w.u8(s.kind);
    w.u64(offset);
    w.u64(s.payload.size());
    offset += s.payload.size();
  }
  for (const Section& s : sections) w.bytes(s.payload);
  return std::move(w.out);
}

CodeProofBundle decode_bundle(std::span<const uint8_t> bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(BundleError::Kind::BadMagic, "bad magic, not a CATB bundle");
  r.pos = 4;

  CodeProofBundle b;
  b.version = r.u16();
  if (b.version != kVersion)
    fail(BundleError::Kind::BadVersion, "unsupported bundle version");

  uint16_t nsec = r.u16();
  struct Entry {
    uint8_t kind;
    uint64_t offset, length;
  };
  std::vector<Entry> table;
  for (uint16_t i = 0; i < nsec; i++) {
    Entry e;
    e.kind = r.u8();
    e.offset = r.u64();
    e.length = r.u64();
    if (e.offset > bytes.size() || bytes.size() - e.offset < e.length)
      fail(BundleError::Kind::TruncatedSection, "section table entry out of bounds");
    table.push_back(e);
  }

  bool seen[7] = {};
  for (const Entry& e : table) {
    if (e.kind < 1 || e.kind > 6)
      fail(BundleError::Kind::TruncatedSection, "unknown section kind");
    if (seen[e.kind])
      fail(BundleError::Kind::TruncatedSection, "duplicate section");
    seen[e.kind] = true;

    Reader s{bytes.subspan(e.offset, e.length)};
    switch (e.kind) {
      case kSecCode:
        b.code.assign(s.in.begin(), s.in.end());
        break;
      case kSecRelocations: {
        uint32_t n = s.u32();
        for (uint32_t i = 0; i < n; i++) {
          Relocation rel;
          rel.offset = s.u64();
          rel.symbol_index = s.u32();
          uint8_t kind = s.u8();
          if (kind != 1 && kind != 2)
            fail(BundleError::Kind::TruncatedSection, "unknown relocation kind");
          rel.kind = static_cast<RelocKind>(kind);
          rel.addend = static_cast<int64_t>(s.u64());
          b.relocations.push_back(rel);
        }
        break;
      }
      case kSecSymbols: {
        uint32_t n = s.u32();
        for (uint32_t i = 0; i < n; i++) {
          Symbol sym;
          sym.name = s.str();
          sym.defined = s.u8() != 0;
          sym.value = s.u64();
          b.symbols.push_back(std::move(sym));
        }
        break;
      }
      case kSecIndirectTargets: {
        uint32_t n = s.u32();
        for (uint32_t i = 0; i < n; i++) b.indirect_targets.push_back(s.str());
        break;
      }
      case kSecManifest:
        b.manifest = read_manifest(s);
        break;
      case kSecEntrySymbol:
        b.entry_symbol = s.str();
        break;
    }
  }
  for (int k = 1; k <= 6; k++)
    if (!seen[k]) fail(BundleError::Kind::TruncatedSection, "missing section");

  validate(b);
  return b;
}

const char* placeholder_name(Placeholder f) {
  switch (f) {
    case Placeholder::UpperDataBound: return "upper_data_bound";
    case Placeholder::LowerDataBound: return "lower_data_bound";
    case Placeholder::UpperStackBound: return "upper_stack_bound";
    case Placeholder::LowerStackBound: return "lower_stack_bound";
    case Placeholder::UpperCodeBound: return "upper_code_bound";
    case Placeholder::LowerCodeBound: return "lower_code_bound";
    case Placeholder::BranchTargetCount: return "branch_target_count";
    case Placeholder::BranchTargetTableAddr: return "branch_target_table_addr";
    case Placeholder::ShadowStackBase: return "shadow_stack_base";
  }
  return "?";
}

uint64_t placeholder_value(const std::string& field_name) {
  for (Placeholder f : kAllPlaceholders)
    if (field_name == placeholder_name(f)) return placeholder_value(f);
  fail(BundleError::Kind::UnknownField, "unknown placeholder field " + field_name);
}

std::optional<Placeholder> placeholder_from_value(uint64_t v) {
  for (Placeholder f : kAllPlaceholders)
    if (placeholder_value(f) == v) return f;
  return std::nullopt;
}

std::vector<std::pair<uint64_t, Placeholder>> scan_placeholders(
    std::span<const uint8_t> image) {
  std::vector<std::pair<uint64_t, Placeholder>> hits;
  if (image.size() < 8) return hits;
  for (uint64_t i = 0; i + 8 <= image.size(); i++) {
    uint64_t v = 0;
    for (int k = 0; k < 8; k++) v |= static_cast<uint64_t>(image[i + k]) << (8 * k);
    if (auto f = placeholder_from_value(v)) hits.emplace_back(i, *f);
  }
  return hits;
}

}  // namespace cat::bundle
