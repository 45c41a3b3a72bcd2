// Text assembly front end for the subset ISA.
#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstring>
#include <optional>
#include <set>
#include <sstream>

#include "cat/guards.hpp"
#include "cat/instrument.hpp"

namespace cat::instrument {

using isa::Instruction;
using isa::IsaError;
using isa::MemRef;
using isa::Mnemonic;
using isa::Operand;
using isa::Reg;

namespace {

[[noreturn]] void parse_fail(IsaError::Kind k, int line, const std::string& msg) {
  throw IsaError(k, "line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& s) {
  size_t p = s.find_first_of(";#");
  return p == std::string::npos ? s : s.substr(0, p);
}

bool is_ident_start(char c) { return std::isalpha(c) || c == '_' || c == '.'; }
bool is_ident_char(char c) { return std::isalnum(c) || c == '_' || c == '.'; }

bool valid_ident(const std::string& s) {
  if (s.empty() || !is_ident_start(s[0])) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return is_ident_char(c); });
}

std::optional<int64_t> parse_int(const std::string& tok) {
  std::string t = tok;
  bool neg = false;
  if (!t.empty() && (t[0] == '-' || t[0] == '+')) {
    neg = t[0] == '-';
    t = t.substr(1);
  }
  if (t.empty()) return std::nullopt;
  uint64_t v = 0;
  std::from_chars_result r{};
  if (t.size() > 2 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X'))
    r = std::from_chars(t.data() + 2, t.data() + t.size(), v, 16);
  else
    r = std::from_chars(t.data(), t.data() + t.size(), v, 10);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size()) return std::nullopt;
  int64_t sv = static_cast<int64_t>(v);
  return neg ? -sv : sv;
}

struct OperandParser {
  int line;

  Operand parse(std::string tok, bool allow_indirect_star) {
    tok = trim(tok);
    if (tok.empty()) parse_fail(IsaError::Kind::OperandMismatch, line, "empty operand");
    if (tok[0] == '*') {
      if (!allow_indirect_star)
        parse_fail(IsaError::Kind::OperandMismatch, line, "'*' only valid on call/jmp");
      return parse(tok.substr(1), false);
    }
    uint8_t explicit_width = 0;
    for (auto [kw, w] : {std::pair<const char*, uint8_t>{"qword", 8}, {"dword", 4}}) {
      size_t n = std::strlen(kw);
      if (tok.rfind(kw, 0) == 0 && tok.size() > n &&
          (tok[n] == ' ' || tok[n] == '\t' || tok[n] == '[')) {
        explicit_width = w;
        tok = trim(tok.substr(n));
        break;
      }
    }
    if (!tok.empty() && tok[0] == '[') {
      Operand op = parse_mem(tok);
      op.reg_width = explicit_width ? explicit_width : 8;  // carries mem width hint
      return op;
    }
    if (explicit_width)
      parse_fail(IsaError::Kind::OperandMismatch, line, "size keyword needs a memory operand");
    uint8_t width = 8;
    if (auto r = isa::reg_from_name(tok, &width)) return Operand::make_reg(*r, width);
    if (auto v = parse_int(tok)) return Operand::make_imm(*v);
    if (valid_ident(tok)) return Operand::make_sym(tok);
    parse_fail(IsaError::Kind::OperandMismatch, line, "cannot parse operand '" + tok + "'");
  }

  Operand parse_mem(const std::string& tok) {
    if (tok.back() != ']')
      parse_fail(IsaError::Kind::OperandMismatch, line, "unterminated memory operand");
    std::string inner = tok.substr(1, tok.size() - 2);
    // split on +/- keeping the sign with the term
    std::vector<std::string> terms;
    std::string cur;
    for (char c : inner) {
      if ((c == '+' || c == '-') && !trim(cur).empty()) {
        terms.push_back(trim(cur));
        cur = c == '-' ? "-" : "";
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) terms.push_back(trim(cur));
    if (terms.empty())
      parse_fail(IsaError::Kind::OperandMismatch, line, "empty memory operand");

    MemRef m;
    bool have_base = false;
    int64_t disp = 0;
    for (std::string t : terms) {
      size_t star = t.find('*');
      if (star != std::string::npos) {
        std::string rname = trim(t.substr(0, star));
        std::string sname = trim(t.substr(star + 1));
        uint8_t w = 8;
        auto r = isa::reg_from_name(rname, &w);
        auto s = parse_int(sname);
        if (!r || w != 8 || !s || (*s != 1 && *s != 2 && *s != 4 && *s != 8))
          parse_fail(IsaError::Kind::OperandMismatch, line, "bad index term '" + t + "'");
        if (m.has_index)
          parse_fail(IsaError::Kind::OperandMismatch, line, "two index terms");
        if (*r == Reg::Rsp)
          parse_fail(IsaError::Kind::UnsupportedAddressingMode, line,
                     "rsp cannot be an index register");
        m.has_index = true;
        m.index = *r;
        m.scale = static_cast<uint8_t>(*s);
        continue;
      }
      uint8_t w = 8;
      if (auto r = isa::reg_from_name(t, &w)) {
        if (w != 8)
          parse_fail(IsaError::Kind::OperandMismatch, line, "32-bit register in address");
        if (!have_base) {
          m.base = *r;
          have_base = true;
        } else if (!m.has_index) {
          m.has_index = true;
          m.index = *r;
          m.scale = 1;
          if (*r == Reg::Rsp)
            parse_fail(IsaError::Kind::UnsupportedAddressingMode, line,
                       "rsp cannot be an index register");
        } else {
          parse_fail(IsaError::Kind::OperandMismatch, line, "too many registers in address");
        }
        continue;
      }
      if (auto v = parse_int(t)) {
        disp += *v;
        continue;
      }
      parse_fail(IsaError::Kind::OperandMismatch, line, "bad address term '" + t + "'");
    }
    if (!have_base)
      parse_fail(IsaError::Kind::UnsupportedAddressingMode, line,
                 "memory operand needs a base register");
    if (disp < INT32_MIN || disp > INT32_MAX)
      parse_fail(IsaError::Kind::OperandMismatch, line, "displacement out of range");
    m.disp = static_cast<int32_t>(disp);
    return Operand::make_mem(m);
  }
};

std::optional<Mnemonic> mnemonic_from_name(const std::string& s) {
  static const std::pair<const char*, Mnemonic> table[] = {
      {"mov", Mnemonic::Mov},   {"movabs", Mnemonic::Movabs},
      {"lea", Mnemonic::Lea},   {"add", Mnemonic::Add},
      {"sub", Mnemonic::Sub},   {"and", Mnemonic::And},
      {"xor", Mnemonic::Xor},   {"cmp", Mnemonic::Cmp},
      {"push", Mnemonic::Push}, {"pop", Mnemonic::Pop},
      {"call", Mnemonic::Call}, {"jmp", Mnemonic::Jmp},
      {"ret", Mnemonic::Ret},   {"ja", Mnemonic::Ja},
      {"jae", Mnemonic::Jae},   {"jb", Mnemonic::Jb},
      {"jbe", Mnemonic::Jbe},   {"je", Mnemonic::Je},
      {"jne", Mnemonic::Jne},   {"jg", Mnemonic::Jg},
      {"jl", Mnemonic::Jl},     {"nop", Mnemonic::Nop},
      {"hlt", Mnemonic::Hlt},
  };
  for (auto& [name, m] : table)
    if (s == name) return m;
  return std::nullopt;
}

Instruction build_instruction(Mnemonic m, std::vector<Operand> ops, int line) {
  auto expect = [&](size_t n) {
    if (ops.size() != n)
      parse_fail(IsaError::Kind::OperandMismatch, line,
                 std::string(mnemonic_name(m)) + " expects " + std::to_string(n) +
                     " operand(s)");
  };
  using K = Operand::Kind;
  switch (m) {
    case Mnemonic::Nop:
    case Mnemonic::Ret:
    case Mnemonic::Hlt:
      expect(0);
      return Instruction(m);
    case Mnemonic::Push:
    case Mnemonic::Pop: {
      expect(1);
      if (ops[0].kind != K::Reg || ops[0].reg_width != 8)
        parse_fail(IsaError::Kind::OperandMismatch, line, "push/pop takes a 64-bit register");
      if (m == Mnemonic::Pop && ops[0].reg == Reg::Rsp)
        parse_fail(IsaError::Kind::OperandMismatch, line, "pop rsp is not supported");
      return Instruction(m, ops[0]);
    }
    case Mnemonic::Call:
    case Mnemonic::Jmp: {
      expect(1);
      return Instruction(m, ops[0]);
    }
    case Mnemonic::Ja: case Mnemonic::Jae: case Mnemonic::Jb: case Mnemonic::Jbe:
    case Mnemonic::Je: case Mnemonic::Jne: case Mnemonic::Jg: case Mnemonic::Jl: {
      expect(1);
      if (ops[0].kind != K::Imm || ops[0].sym.empty())
        parse_fail(IsaError::Kind::OperandMismatch, line, "jcc takes a label");
      return Instruction(m, ops[0]);
    }
    default:
      break;
  }
  expect(2);
  Instruction ins(m, ops[0], ops[1]);
  // Operation width: register operand wins, else the size keyword on mem.
  if (ops[0].kind == K::Reg) ins.width = ops[0].reg_width;
  else if (ops[1].kind == K::Reg) ins.width = ops[1].reg_width;
  else if (ops[0].kind == K::Mem) ins.width = ops[0].reg_width;  // keyword hint
  if (m == Mnemonic::Mov && ops[0].kind == K::Reg && ops[1].kind == K::Imm &&
      ops[1].sym.empty() && ops[0].reg_width == 8 &&
      (ops[1].imm < INT32_MIN || ops[1].imm > INT32_MAX))
    parse_fail(IsaError::Kind::OperandMismatch, line,
               "immediate too wide for mov, use movabs");
  if (m == Mnemonic::Mov && ops[1].kind == K::Imm && !ops[1].sym.empty())
    parse_fail(IsaError::Kind::OperandMismatch, line,
               "mov cannot take a label address, use movabs");
  return ins;
}

}  // namespace

prog::Program parse_asm(const std::string& source) {
  prog::Program p;
  prog::Function* cur_fn = nullptr;
  prog::DataObject* cur_data = nullptr;
  std::string pending_label;  // top-level label waiting for its first line
  int lineno = 0;

  std::istringstream stream(source);
  std::string raw;
  auto begin_function = [&](const std::string& name) {
    p.functions.push_back({});
    p.functions.back().name = name;
    cur_fn = &p.functions.back();
    cur_data = nullptr;
  };

  while (std::getline(stream, raw)) {
    lineno++;
    std::string body = trim(strip_comment(raw));
    if (body.empty()) continue;

    // label?
    if (body.back() == ':' && valid_ident(body.substr(0, body.size() - 1))) {
      std::string name = body.substr(0, body.size() - 1);
      if (name[0] == '.') {
        if (!pending_label.empty()) {
          begin_function(pending_label);
          pending_label.clear();
        }
        if (!cur_fn)
          parse_fail(IsaError::Kind::OperandMismatch, lineno,
                     "local label outside a function");
        if (cur_fn->labels.count(name))
          parse_fail(IsaError::Kind::OperandMismatch, lineno,
                     "duplicate label " + name);
        cur_fn->labels[name] = cur_fn->items.size();
      } else {
        if (!pending_label.empty())
          parse_fail(IsaError::Kind::OperandMismatch, lineno,
                     "consecutive top-level labels");
        pending_label = name;
        cur_fn = nullptr;
        cur_data = nullptr;
      }
      continue;
    }

    // directive?
    if (body[0] == '.') {
      std::istringstream ls(body);
      std::string dir;
      ls >> dir;
      if (dir == ".global") {
        std::string name;
        ls >> name;
        if (name.empty() || !valid_ident(name))
          parse_fail(IsaError::Kind::OperandMismatch, lineno, ".global needs a name");
        if (!p.entry.empty())
          parse_fail(IsaError::Kind::OperandMismatch, lineno, "multiple .global entries");
        p.entry = name;
        continue;
      }
      if (dir == ".quad") {
        std::string rest = trim(body.substr(5));
        if (!pending_label.empty()) {
          p.data.push_back({});
          p.data.back().name = pending_label;
          cur_data = &p.data.back();
          pending_label.clear();
          cur_fn = nullptr;
        }
        if (!cur_data)
          parse_fail(IsaError::Kind::OperandMismatch, lineno,
                     ".quad must follow a top-level label");
        prog::DataWord w;
        if (auto v = parse_int(rest)) {
          w.value = static_cast<uint64_t>(*v);
        } else if (valid_ident(rest)) {
          if (rest[0] == '.')
            parse_fail(IsaError::Kind::OperandMismatch, lineno,
                       "cannot take the address of a local label");
          w.sym = rest;
        } else {
          parse_fail(IsaError::Kind::OperandMismatch, lineno, "bad .quad value");
        }
        cur_data->words.push_back(std::move(w));
        continue;
      }
      parse_fail(IsaError::Kind::UnknownMnemonic, lineno, "unknown directive " + dir);
    }

    // instruction
    std::string mname;
    size_t i = 0;
    while (i < body.size() && !std::isspace(body[i])) mname += body[i++];
    auto m = mnemonic_from_name(mname);
    if (!m) parse_fail(IsaError::Kind::UnknownMnemonic, lineno,
                       "unknown mnemonic '" + mname + "'");

    std::vector<Operand> ops;
    std::string rest = trim(body.substr(i));
    if (!rest.empty()) {
      OperandParser op{lineno};
      bool star_ok = *m == Mnemonic::Call || *m == Mnemonic::Jmp;
      size_t start = 0;
      while (start <= rest.size()) {
        size_t comma = rest.find(',', start);
        std::string tok = comma == std::string::npos ? rest.substr(start)
                                                     : rest.substr(start, comma - start);
        ops.push_back(op.parse(tok, star_ok && ops.empty()));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    }

    // direct call/jmp take a bare label; indirect requires '*'
    if ((*m == Mnemonic::Call || *m == Mnemonic::Jmp) && !ops.empty() &&
        ops[0].kind != Operand::Kind::Imm) {
      size_t star = raw.find('*');
      if (star == std::string::npos)
        parse_fail(IsaError::Kind::OperandMismatch, lineno,
                   "indirect call/jmp needs '*'");
    }

    if (!pending_label.empty()) {
      begin_function(pending_label);
      pending_label.clear();
    }
    if (!cur_fn)
      parse_fail(IsaError::Kind::OperandMismatch, lineno,
                 "instruction outside a function");
    if (cur_data)
      parse_fail(IsaError::Kind::OperandMismatch, lineno,
                 "instruction inside a data object");

    cur_fn->items.push_back({build_instruction(*m, std::move(ops), lineno),
                             prog::Provenance::User});
  }

  if (!pending_label.empty())
    throw IsaError(IsaError::Kind::OperandMismatch,
                   "label " + pending_label + " has no body");

  // validation
  std::set<std::string> names;
  for (auto& f : p.functions) {
    if (!names.insert(f.name).second)
      throw IsaError(IsaError::Kind::OperandMismatch, "duplicate symbol " + f.name);
    if (f.items.empty())
      throw IsaError(IsaError::Kind::OperandMismatch, "empty function " + f.name);
    if (!f.items.back().ins.is_terminator())
      throw IsaError(IsaError::Kind::OperandMismatch,
                     "function " + f.name + " must end with ret, jmp, or hlt");
    for (auto& [label, idx] : f.labels)
      if (idx >= f.items.size())
        throw IsaError(IsaError::Kind::OperandMismatch,
                       "label " + label + " must precede an instruction");
    for (auto& item : f.items) {
      for (int k = 0; k < item.ins.nops; k++) {
        const Operand& o = item.ins.ops[k];
        if (o.kind == Operand::Kind::Imm && !o.sym.empty() && o.sym[0] == '.') {
          if (item.ins.mnem == Mnemonic::Movabs)
            throw IsaError(IsaError::Kind::OperandMismatch,
                           "cannot take the address of a local label " + o.sym);
          if (!f.labels.count(o.sym))
            throw IsaError(IsaError::Kind::UndefinedLabel,
                           "undefined label " + o.sym + " in " + f.name);
        }
      }
    }
  }
  for (auto& d : p.data)
    if (!names.insert(d.name).second)
      throw IsaError(IsaError::Kind::OperandMismatch, "duplicate symbol " + d.name);

  if (p.entry.empty())
    throw IsaError(IsaError::Kind::UndefinedLabel, "missing .global entry");
  if (!p.find_function(p.entry))
    throw IsaError(IsaError::Kind::UndefinedLabel,
                   "entry " + p.entry + " is not a function");
  return p;
}

}  // namespace cat::instrument
