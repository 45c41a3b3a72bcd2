// Producer-side program IR: functions of instructions with label maps and
// provenance tags distinguishing user code from inserted annotations.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cat/isa.hpp"

namespace cat::prog {

enum class Provenance : uint8_t {
  User,
  GuardBefore,  // annotation attached before the guarded instruction
  GuardAfter,   // annotation attached after it (rsp guards)
  Runtime,      // linked-in support routine body
};

struct Item {
  isa::Instruction ins;
  Provenance prov = Provenance::User;
  // Which inserted annotation instance this instruction belongs to; 0 for
  // user code. Producer-side metadata only, never serialized.
  uint32_t guard_seq = 0;
};

struct Function {
  std::string name;
  std::vector<Item> items;
  // Label name -> item index. A label binds to a position: annotations
  // inserted at that position keep the label pointing at the first of them.
  std::map<std::string, size_t> labels;
};

struct DataWord {
  uint64_t value = 0;
  std::string sym;  // non-empty: address of this symbol (Abs64 at load)
};

struct DataObject {
  std::string name;
  std::vector<DataWord> words;
};

// Instrumentation pass markers; a pass refuses to run twice.
enum PassBit : uint32_t {
  kPassStores = 1 << 0,
  kPassRsp = 1 << 1,
  kPassCfi = 1 << 2,
  kPassShadow = 1 << 3,
  kPassSsa = 1 << 4,
};

struct Program {
  std::vector<Function> functions;
  std::vector<DataObject> data;
  std::string entry;
  uint32_t passes_applied = 0;
  std::vector<std::string> indirect_targets;  // filled by the CFI pass, sorted

  Function* find_function(const std::string& name) {
    for (auto& f : functions)
      if (f.name == name) return &f;
    return nullptr;
  }
  const Function* find_function(const std::string& name) const {
    for (auto& f : functions)
      if (f.name == name) return &f;
    return nullptr;
  }
};

// Inserts items at position idx; labels bound past idx shift, labels bound
// at idx stay (they now address the first inserted instruction).
void insert_items(Function& f, size_t idx, const std::vector<Item>& items);

}  // namespace cat::prog
