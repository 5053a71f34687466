// Copyright 2026 The ucode Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ucode/x86.hpp"

#include "text_util.hpp"
#include "ucode/error.hpp"

namespace ucode {

namespace {

constexpr std::array<std::string_view, kX86MnemonicCount> kMnemonicNames = {
    "mov", "add",  "sub",  "and",   "or",    "xor",   "shl",   "shr",
    "shrd", "cmp", "jcc",  "jmp",   "push",  "pop",   "call",  "ret",
    "bound", "rdtsc", "wrmsr", "cpuid", "xchg", "hlt"};

constexpr std::array<std::string_view, 8> kGprNames = {
    "eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi"};

constexpr std::array<std::string_view, 8> kCondNames = {"e",  "ne", "b", "ae",
                                                        "be", "a",  "s", "ns"};

std::optional<X86Cond> CondFromSuffix(std::string_view s) {
  static const std::map<std::string, X86Cond, std::less<>> kAliases = {
      {"e", X86Cond::kE},    {"z", X86Cond::kE},    {"ne", X86Cond::kNe},
      {"nz", X86Cond::kNe},  {"b", X86Cond::kB},    {"c", X86Cond::kB},
      {"nae", X86Cond::kB},  {"ae", X86Cond::kAe},  {"nc", X86Cond::kAe},
      {"nb", X86Cond::kAe},  {"be", X86Cond::kBe},  {"na", X86Cond::kBe},
      {"a", X86Cond::kA},    {"nbe", X86Cond::kA},  {"s", X86Cond::kS},
      {"ns", X86Cond::kNs},
  };
  auto it = kAliases.find(s);
  if (it == kAliases.end()) return std::nullopt;
  return it->second;
}

std::optional<Gpr> GprFromName(std::string_view name) {
  const std::string lower = text::Lower(name);
  for (size_t i = 0; i < kGprNames.size(); ++i) {
    if (kGprNames[i] == lower) return static_cast<Gpr>(i);
  }
  return std::nullopt;
}

class LineParser {
 public:
  LineParser(const SymbolTable& symbols, const SymbolTable* labels, int line)
      : symbols_(symbols), labels_(labels), line_(line) {}

  X86Instruction Parse(std::string_view body) {
    body = text::Trim(body);
    size_t split = 0;
    while (split < body.size() &&
           !std::isspace(static_cast<unsigned char>(body[split]))) {
      ++split;
    }
    const std::string name = text::Lower(body.substr(0, split));
    const auto operands = text::SplitOperands(body.substr(split));

    X86Instruction instr;
    if (auto m = MnemonicFromName(name); m && *m != X86Mnemonic::kJcc) {
      instr.mnemonic = *m;
    } else if (name.size() > 1 && name[0] == 'j' && CondFromSuffix(name.substr(1))) {
      instr.mnemonic = X86Mnemonic::kJcc;
      instr.cond = *CondFromSuffix(name.substr(1));
    } else {
      Fail("unknown or unsupported instruction '" + name + "'");
    }
    instr.operand_count = static_cast<int>(operands.size());
    if (operands.size() > 3) Fail("too many operands");
    for (size_t i = 0; i < operands.size(); ++i) {
      instr.ops[i] = Operand(operands[i]);
    }
    Validate(instr, name);
    return instr;
  }

 private:
  [[noreturn]] void Fail(const std::string& msg) const {
    throw AssemblyError(line_, msg);
  }

  std::optional<uint32_t> Symbol(std::string_view name) const {
    if (labels_) {
      if (auto it = labels_->find(name); it != labels_->end()) return it->second;
    }
    if (auto it = symbols_.find(name); it != symbols_.end()) return it->second;
    return std::nullopt;
  }

  uint32_t Value(std::string_view token) const {
    token = text::Trim(token);
    bool negative = false;
    if (!token.empty() && token.front() == '-') {
      negative = true;
      token = text::Trim(token.substr(1));
    }
    uint64_t v;
    if (auto n = text::ParseNumber(token)) {
      v = *n;
      if (v > 0xFFFFFFFFull) Fail("constant does not fit in 32 bits");
    } else if (text::IsIdentifier(token)) {
      auto s = Symbol(token);
      if (!s) Fail("unknown symbol '" + std::string(token) + "'");
      v = *s;
    } else {
      Fail("bad operand '" + std::string(token) + "'");
    }
    return negative ? static_cast<uint32_t>(0u - static_cast<uint32_t>(v))
                    : static_cast<uint32_t>(v);
  }

  X86Operand Operand(std::string_view token) {
    std::string lower = text::Lower(token);
    if (lower.rfind("dword ptr", 0) == 0) {
      token = text::Trim(token.substr(9));
    }
    if (!token.empty() && token.front() == '[') {
      if (token.back() != ']') Fail("unterminated memory operand");
      return Memory(token.substr(1, token.size() - 2));
    }
    if (text::Lower(token) == "cl") return X86Operand::Reg(Gpr::kEcx);
    if (auto g = GprFromName(token)) return X86Operand::Reg(*g);
    return X86Operand::Imm(Value(token));
  }

  X86Operand Memory(std::string_view inner) {
    std::optional<Gpr> base;
    uint32_t disp = 0;
    inner = text::Trim(inner);
    if (inner.empty()) Fail("empty memory operand");
    size_t start = 0;
    bool negative = false;
    for (size_t i = 0; i <= inner.size(); ++i) {
      if (i < inner.size() && inner[i] != '+' && inner[i] != '-') continue;
      const auto term = text::Trim(inner.substr(start, i - start));
      if (term.empty()) {
        if (i == 0 && i < inner.size() && inner[i] == '-') {
          negative = true;
          start = i + 1;
          continue;
        }
        Fail("malformed memory operand");
      }
      if (auto g = GprFromName(term)) {
        if (base) Fail("only one base register is supported");
        if (negative) Fail("base register cannot be subtracted");
        base = *g;
      } else {
        const uint32_t v = Value(term);
        disp = negative ? disp - v : disp + v;
      }
      if (i < inner.size()) negative = inner[i] == '-';
      start = i + 1;
    }
    return X86Operand::Mem(base, disp);
  }

  void Validate(const X86Instruction& in, const std::string& name) const {
    const int n = in.operand_count;
    auto expect = [&](int count) {
      if (n != count) {
        Fail("'" + name + "' expects " + std::to_string(count) + " operand(s)");
      }
    };
    const auto& a = in.ops[0];
    const auto& b = in.ops[1];
    switch (in.mnemonic) {
      case X86Mnemonic::kMov:
      case X86Mnemonic::kAdd:
      case X86Mnemonic::kSub:
      case X86Mnemonic::kAnd:
      case X86Mnemonic::kOr:
      case X86Mnemonic::kXor:
      case X86Mnemonic::kCmp:
        expect(2);
        if (a.is_imm()) Fail("destination cannot be an immediate");
        if (a.is_mem() && b.is_mem()) Fail("two memory operands");
        break;
      case X86Mnemonic::kShl:
      case X86Mnemonic::kShr:
        expect(2);
        if (!a.is_reg()) Fail("shift destination must be a register");
        if (!(b.is_imm() || (b.is_reg() && b.reg == Gpr::kEcx))) {
          Fail("shift count must be an immediate or cl");
        }
        break;
      case X86Mnemonic::kShrd:
        expect(3);
        if (!a.is_reg() || !b.is_reg() || !in.ops[2].is_imm()) {
          Fail("shrd expects reg, reg, imm");
        }
        break;
      case X86Mnemonic::kJcc:
      case X86Mnemonic::kJmp:
      case X86Mnemonic::kCall:
        expect(1);
        if (!a.is_imm()) Fail("branch target must be a label or address");
        break;
      case X86Mnemonic::kPush:
        expect(1);
        if (a.is_mem()) Fail("push expects a register or immediate");
        break;
      case X86Mnemonic::kPop:
        expect(1);
        if (!a.is_reg()) Fail("pop expects a register");
        break;
      case X86Mnemonic::kBound:
        expect(2);
        if (!a.is_reg() || !b.is_mem()) Fail("bound expects reg, [mem]");
        break;
      case X86Mnemonic::kXchg:
        expect(2);
        if (!a.is_reg() || !b.is_reg()) Fail("xchg expects two registers");
        break;
      case X86Mnemonic::kRet:
      case X86Mnemonic::kRdtsc:
      case X86Mnemonic::kWrmsr:
      case X86Mnemonic::kCpuid:
      case X86Mnemonic::kHlt:
        expect(0);
        break;
    }
  }

  const SymbolTable& symbols_;
  const SymbolTable* labels_;
  int line_;
};

// Splits "label: body" and returns the label (empty if none).
std::string_view SplitLabel(std::string_view& line, int line_no) {
  const auto colon = line.find(':');
  if (colon == std::string_view::npos) return {};
  const auto name = text::Trim(line.substr(0, colon));
  if (!text::IsIdentifier(name)) {
    throw AssemblyError(line_no, "bad label '" + std::string(name) + "'");
  }
  line = text::Trim(line.substr(colon + 1));
  return name;
}

std::string FormatOperand(const X86Operand& op, bool shift_count) {
  switch (op.kind) {
    case X86Operand::Kind::kNone:
      return "";
    case X86Operand::Kind::kReg:
      if (shift_count && op.reg == Gpr::kEcx) return "cl";
      return std::string(GprName(op.reg));
    case X86Operand::Kind::kImm:
      return text::Hex(op.imm);
    case X86Operand::Kind::kMem:
      if (op.mem.base) {
        return "[" + std::string(GprName(*op.mem.base)) + " + " +
               text::Hex(op.mem.disp) + "]";
      }
      return "[" + text::Hex(op.mem.disp) + "]";
  }
  return "";
}

}  // namespace

std::string_view MnemonicName(X86Mnemonic m) {
  return kMnemonicNames[static_cast<size_t>(m)];
}

std::optional<X86Mnemonic> MnemonicFromName(std::string_view name) {
  for (size_t i = 0; i < kMnemonicNames.size(); ++i) {
    if (kMnemonicNames[i] == name) return static_cast<X86Mnemonic>(i);
  }
  return std::nullopt;
}

std::string_view GprName(Gpr g) { return kGprNames[static_cast<size_t>(g)]; }

X86Program ParseX86Program(std::string_view source, const SymbolTable& symbols,
                           uint32_t base) {
  X86Program program;
  program.base = base;
  struct Pending {
    std::string_view body;
    int line;
  };
  std::vector<Pending> bodies;
  int line_no = 0;
  size_t pos = 0;
  while (pos <= source.size()) {
    const size_t eol = std::min(source.find('\n', pos), source.size());
    std::string_view line = text::Trim(text::StripComment(source.substr(pos, eol - pos)));
    pos = eol + 1;
    ++line_no;
    const auto label = SplitLabel(line, line_no);
    if (!label.empty()) {
      if (program.labels.count(label)) {
        throw AssemblyError(line_no, "duplicate label '" + std::string(label) + "'");
      }
      program.labels.emplace(std::string(label), program.AddressOf(bodies.size()));
    }
    if (!line.empty()) bodies.push_back({line, line_no});
    if (eol == source.size()) break;
  }
  program.code.reserve(bodies.size());
  for (const auto& b : bodies) {
    program.code.push_back(LineParser(symbols, &program.labels, b.line).Parse(b.body));
  }
  return program;
}

X86Instruction ParseX86Instruction(std::string_view line, const SymbolTable& symbols) {
  line = text::Trim(text::StripComment(line));
  if (line.empty()) throw AssemblyError(0, "empty instruction");
  return LineParser(symbols, nullptr, 0).Parse(line);
}

std::string FormatX86(const X86Instruction& instr) {
  std::string out = instr.mnemonic == X86Mnemonic::kJcc
                        ? "j" + std::string(kCondNames[static_cast<size_t>(instr.cond)])
                        : std::string(MnemonicName(instr.mnemonic));
  const bool is_shift = instr.mnemonic == X86Mnemonic::kShl ||
                        instr.mnemonic == X86Mnemonic::kShr;
  for (int i = 0; i < instr.operand_count; ++i) {
    out += i == 0 ? " " : ", ";
    out += FormatOperand(instr.ops[i], is_shift && i == 1);
  }
  return out;
}

}  // namespace ucode
