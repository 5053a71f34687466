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

#include "ucode/rtl.hpp"

#include <map>
#include <optional>

#include "text_util.hpp"
#include "ucode/error.hpp"

namespace ucode {

namespace {

struct ParsedReg {
  RegisterId reg;
  std::optional<OpSize> view;  // nullopt for specials
};

constexpr std::array<std::array<std::string_view, 8>, 4> kGprNames = {{
    {"eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi"},
    {"ax", "cx", "dx", "bx", "sp", "bp", "si", "di"},
    {"rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi"},
    {"al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil"},
}};

std::optional<ParsedReg> LookupRegister(std::string_view token, int line) {
  const std::string name = text::Lower(token);
  for (int v = 0; v < 4; ++v) {
    for (int i = 0; i < 8; ++i) {
      if (kGprNames[v][i] != name) continue;
      if (i == static_cast<int>(Gpr::kEsp) || i == static_cast<int>(Gpr::kEbp)) {
        throw AssemblyError(line, "stack register '" + std::string(token) +
                                      "' cannot be a microcode operand");
      }
      return ParsedReg{RegisterId::X86(static_cast<Gpr>(i)),
                       static_cast<OpSize>(v)};
    }
  }
  for (int s = 0; s < kSpecialCount; ++s) {
    if (text::Lower(SpecialName(static_cast<Special>(s))) == name) {
      return ParsedReg{RegisterId::Spec(static_cast<Special>(s)), std::nullopt};
    }
  }
  if (name.size() >= 3 && name[0] == 't') {
    const char suffix = name.back();
    OpSize view;
    switch (suffix) {
      case 'd': view = OpSize::kW32; break;
      case 'w': view = OpSize::kW16; break;
      case 'q': view = OpSize::kW64; break;
      case 'b': view = OpSize::kW8; break;
      default: return std::nullopt;
    }
    const std::string_view digits =
        std::string_view(name).substr(1, name.size() - 2);
    for (char c : digits) {
      if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    }
    const auto index = text::ParseNumber(digits);
    if (!index) return std::nullopt;
    if (*index >= kTemporaryCount) {
      throw AssemblyError(line, "unknown register '" + std::string(token) +
                                    "' (temporaries are t0..t21)");
    }
    return ParsedReg{RegisterId::Temp(static_cast<int>(*index)), view};
  }
  return std::nullopt;
}

struct Mnemonic {
  Opcode opcode;
  Cond cond = Cond::kAlways;
};

std::optional<Mnemonic> LookupMnemonic(std::string_view name) {
  static const std::map<std::string, Mnemonic, std::less<>> kTable = {
      {"nop", {Opcode::kNop}},       {"mov", {Opcode::kMov}},
      {"add", {Opcode::kAdd}},       {"sub", {Opcode::kSub}},
      {"and", {Opcode::kAnd}},       {"or", {Opcode::kOr}},
      {"xor", {Opcode::kXor}},       {"sll", {Opcode::kSll}},
      {"srl", {Opcode::kSrl}},       {"ld", {Opcode::kLd}},
      {"st", {Opcode::kSt}},         {"cmp", {Opcode::kCmp}},
      {"dbg", {Opcode::kDbg}},       {"writeout", {Opcode::kWriteout}},
      {"jmp", {Opcode::kJcc, Cond::kAlways}},
      {"jz", {Opcode::kJcc, Cond::kZ}},   {"je", {Opcode::kJcc, Cond::kZ}},
      {"jnz", {Opcode::kJcc, Cond::kNz}}, {"jne", {Opcode::kJcc, Cond::kNz}},
      {"jb", {Opcode::kJcc, Cond::kB}},   {"jc", {Opcode::kJcc, Cond::kB}},
      {"jae", {Opcode::kJcc, Cond::kAe}}, {"jnc", {Opcode::kJcc, Cond::kAe}},
      {"jbe", {Opcode::kJcc, Cond::kBe}}, {"ja", {Opcode::kJcc, Cond::kA}},
      {"jl", {Opcode::kJcc, Cond::kL}},   {"jge", {Opcode::kJcc, Cond::kGe}},
      {"jle", {Opcode::kJcc, Cond::kLe}}, {"jg", {Opcode::kJcc, Cond::kG}},
      {"js", {Opcode::kJcc, Cond::kS}},   {"jns", {Opcode::kJcc, Cond::kNs}},
  };
  auto it = kTable.find(name);
  if (it == kTable.end()) return std::nullopt;
  return it->second;
}

std::string JccMnemonic(Cond cond) {
  return cond == Cond::kAlways ? "jmp" : "j" + std::string(CondName(cond));
}

// A jump target that names a label is resolved after the whole text is read.
struct ParsedOp {
  MicroOp op;
  std::string target_label;
};

class OpParser {
 public:
  OpParser(std::string_view body, int line) : line_(line) {
    body = text::Trim(body);
    size_t split = 0;
    while (split < body.size() &&
           !std::isspace(static_cast<unsigned char>(body[split]))) {
      ++split;
    }
    mnemonic_ = text::Lower(body.substr(0, split));
    operands_ = text::SplitOperands(body.substr(split));
  }

  ParsedOp Parse() {
    std::string base = mnemonic_;
    if (const auto dot = base.rfind('.'); dot != std::string::npos) {
      const std::string sfx = base.substr(dot + 1);
      base.resize(dot);
      if (sfx == "q") {
        size_ = OpSize::kW64;
      } else if (sfx == "d") {
        size_ = OpSize::kW32;
      } else if (sfx == "w") {
        size_ = OpSize::kW16;
      } else if (sfx == "b") {
        size_ = OpSize::kW8;
      } else {
        Fail("unknown size suffix '." + sfx + "'");
      }
    }
    const auto mn = LookupMnemonic(base);
    if (!mn) Fail("unknown mnemonic '" + base + "'");
    ParsedOp out;
    MicroOp& op = out.op;
    op.opcode = mn->opcode;
    op.cond = mn->cond;
    switch (op.opcode) {
      case Opcode::kNop:
        Expect(0);
        break;
      case Opcode::kMov:
        Expect(2);
        op.dst = DataReg(0);
        SrcOrImm(1, op.src1, op.imm);
        break;
      case Opcode::kAdd:
      case Opcode::kSub:
      case Opcode::kAnd:
      case Opcode::kOr:
      case Opcode::kXor:
      case Opcode::kSll:
      case Opcode::kSrl:
        if (operands_.size() == 2) {
          op.dst = DataReg(0);
          op.src1 = op.dst;
          SrcOrImm(1, op.src2, op.imm);
        } else {
          Expect(3);
          op.dst = DataReg(0);
          op.src1 = DataReg(1);
          SrcOrImm(2, op.src2, op.imm);
        }
        break;
      case Opcode::kCmp:
        Expect(2);
        op.src1 = DataReg(0);
        SrcOrImm(1, op.src2, op.imm);
        break;
      case Opcode::kLd:
        Expect(2);
        op.dst = DataReg(0);
        Memory(1, op);
        break;
      case Opcode::kSt:
        Expect(2);
        Memory(0, op);
        op.dst = DataReg(1);
        break;
      case Opcode::kDbg: {
        if (operands_.size() == 1 && !operands_[0].empty() &&
            (operands_[0][0] == '0' || operands_[0][0] == '1')) {
          Fail("raw dbg bitstrings are not supported; write `dbg <reg>, <special>`");
        }
        Expect(2);
        op.dst = DataReg(0);
        op.src1 = SpecialReg(1);
        break;
      }
      case Opcode::kWriteout:
        if (operands_.size() != 2) Expect(3);
        op.dst = SpecialReg(0);
        op.src1 = DataReg(1);
        op.imm = operands_.size() == 3 ? Imm16(operands_[2]) : 0;
        break;
      case Opcode::kJcc: {
        Expect(1);
        const auto target = text::ParseNumber(operands_[0]);
        if (target) {
          if (*target >= kAddressLimit) Fail("jump target out of range");
          op.imm = static_cast<uint16_t>(*target);
        } else if (text::IsIdentifier(operands_[0])) {
          out.target_label = std::string(operands_[0]);
          op.imm = 0;
        } else {
          Fail("bad jump target '" + std::string(operands_[0]) + "'");
        }
        break;
      }
    }
    op.size = size_.value_or(inferred_.value_or(OpSize::kW32));
    for (OpSize v : views_) {
      if (v != op.size) Fail("operand width does not match operation size");
    }
    if (op.opcode == Opcode::kNop) op.size = OpSize::kW32;
    return out;
  }

 private:
  [[noreturn]] void Fail(const std::string& msg) const {
    throw AssemblyError(line_, msg);
  }

  void Expect(size_t n) const {
    if (operands_.size() != n) {
      Fail("'" + mnemonic_ + "' expects " + std::to_string(n) + " operand(s)");
    }
  }

  std::optional<ParsedReg> Reg(std::string_view token) {
    auto r = LookupRegister(token, line_);
    if (r && r->view) {
      views_.push_back(*r->view);
      if (!inferred_) inferred_ = r->view;
    }
    return r;
  }

  RegisterId DataReg(size_t i) {
    auto r = Reg(operands_[i]);
    if (!r) Fail("unknown register '" + std::string(operands_[i]) + "'");
    if (r->reg.kind == RegKind::kSpecial) {
      Fail("special register not allowed here");
    }
    return r->reg;
  }

  RegisterId SpecialReg(size_t i) {
    auto r = LookupRegister(operands_[i], line_);
    if (!r || r->reg.kind != RegKind::kSpecial) {
      Fail("expected special register, got '" + std::string(operands_[i]) + "'");
    }
    return r->reg;
  }

  uint16_t Imm16(std::string_view token) const {
    const auto v = text::ParseNumber(token);
    if (!v) Fail("bad operand '" + std::string(token) + "'");
    if (*v > 0xFFFF) Fail("immediate overflow: " + std::string(token) +
                          " does not fit in 16 bits");
    return static_cast<uint16_t>(*v);
  }

  void SrcOrImm(size_t i, RegisterId& reg, std::optional<uint16_t>& imm) {
    if (text::ParseNumber(operands_[i])) {
      imm = Imm16(operands_[i]);
      return;
    }
    reg = DataReg(i);
  }

  // [base], [base + reg], [base + imm]
  void Memory(size_t i, MicroOp& op) {
    std::string_view m = operands_[i];
    if (m.size() < 2 || m.front() != '[' || m.back() != ']') {
      Fail("expected memory operand, got '" + std::string(m) + "'");
    }
    m = text::Trim(m.substr(1, m.size() - 2));
    const auto plus = m.find('+');
    op.src1 = DataRegToken(text::Trim(m.substr(0, plus)));
    if (plus == std::string_view::npos) {
      op.imm = 0;
      return;
    }
    const auto rest = text::Trim(m.substr(plus + 1));
    if (text::ParseNumber(rest)) {
      op.imm = Imm16(rest);
    } else {
      op.src2 = DataRegToken(rest);
    }
  }

  // Address registers take no part in size inference.
  RegisterId DataRegToken(std::string_view token) {
    auto r = LookupRegister(token, line_);
    if (!r || r->reg.kind == RegKind::kSpecial) {
      Fail("bad address register '" + std::string(token) + "'");
    }
    return r->reg;
  }

  int line_;
  std::string mnemonic_;
  std::vector<std::string_view> operands_;
  std::optional<OpSize> size_;
  std::optional<OpSize> inferred_;
  std::vector<OpSize> views_;
};

struct Fixup {
  size_t triad;
  int slot;  // -1 for the sequence word
  std::string label;
  int line;
};

}  // namespace

MicroOp ParseOp(std::string_view line) {
  auto parsed = OpParser(text::StripComment(line), 0).Parse();
  if (!parsed.target_label.empty()) {
    throw AssemblyError(0, "labels are not resolvable in a single op");
  }
  return parsed.op;
}

std::vector<Triad> Assemble(std::string_view source, uint16_t origin) {
  std::vector<Triad> triads;
  std::map<std::string, uint16_t, std::less<>> labels;
  std::vector<Fixup> fixups;

  Triad current;
  int filled = 0;
  bool current_has_seq = false;
  std::optional<SequenceWord> pending;
  std::string pending_label;
  int pending_line = 0;

  auto next_address = [&]() -> uint16_t {
    return static_cast<uint16_t>(origin + triads.size());
  };
  auto flush = [&]() {
    triads.push_back(current);
    current = Triad{};
    filled = 0;
    current_has_seq = false;
  };
  auto bind_pending = [&]() {
    if (!pending) return;
    current.seq = *pending;
    current_has_seq = true;
    if (!pending_label.empty()) {
      fixups.push_back({triads.size(), -1, pending_label, pending_line});
    }
    pending.reset();
    pending_label.clear();
  };

  int line_no = 0;
  size_t pos = 0;
  while (pos <= source.size()) {
    const size_t eol = std::min(source.find('\n', pos), source.size());
    std::string_view line = source.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    line = text::Trim(text::StripComment(line));

    // Leading label.
    if (const auto colon = line.find(':'); colon != std::string_view::npos) {
      const auto name = text::Trim(line.substr(0, colon));
      if (!text::IsIdentifier(name)) {
        throw AssemblyError(line_no, "bad label '" + std::string(name) + "'");
      }
      if (filled > 0) flush();
      if (labels.count(name)) {
        throw AssemblyError(line_no, "duplicate label '" + std::string(name) + "'");
      }
      labels.emplace(std::string(name), next_address());
      line = text::Trim(line.substr(colon + 1));
    }
    if (line.empty()) {
      if (eol == source.size()) break;
      continue;
    }

    if (line.front() == '.') {
      SequenceWord seq;
      std::string target_label;
      const auto parts = text::SplitOperands(line);
      std::string_view head = parts.front();
      std::string_view arg;
      if (const auto sp = head.find_first_of(" \t"); sp != std::string_view::npos) {
        arg = text::Trim(head.substr(sp));
        head = head.substr(0, sp);
      }
      if (head == ".sw_complete") {
        if (!arg.empty() || parts.size() != 1) {
          throw AssemblyError(line_no, ".sw_complete takes no operand");
        }
        seq.action = SeqAction::kComplete;
      } else if (head == ".sw_branch") {
        if (arg.empty() || parts.size() != 1) {
          throw AssemblyError(line_no, ".sw_branch expects one target");
        }
        seq.action = SeqAction::kBranch;
        if (const auto t = text::ParseNumber(arg)) {
          if (*t >= kAddressLimit) {
            throw AssemblyError(line_no, "branch target out of range");
          }
          seq.target = static_cast<uint16_t>(*t);
        } else if (text::IsIdentifier(arg)) {
          target_label = std::string(arg);
        } else {
          throw AssemblyError(line_no, "bad branch target '" + std::string(arg) + "'");
        }
      } else {
        throw AssemblyError(line_no, "unknown annotation '" + std::string(head) + "'");
      }
      if (filled > 0) {
        if (current_has_seq) {
          throw AssemblyError(line_no, "triad already has a sequence annotation");
        }
        current.seq = seq;
        current_has_seq = true;
        if (!target_label.empty()) {
          fixups.push_back({triads.size(), -1, target_label, line_no});
        }
      } else {
        if (pending) {
          throw AssemblyError(line_no, "conflicting sequence annotations");
        }
        pending = seq;
        pending_label = target_label;
        pending_line = line_no;
      }
      if (eol == source.size()) break;
      continue;
    }

    ParsedOp parsed = OpParser(line, line_no).Parse();
    if (filled == 0) bind_pending();
    if (!parsed.target_label.empty()) {
      fixups.push_back({triads.size(), filled, parsed.target_label, line_no});
    }
    current.ops[filled++] = parsed.op;
    if (filled == 3) flush();
    if (eol == source.size()) break;
  }
  if (pending) bind_pending();
  if (filled > 0 || current_has_seq) flush();

  for (const auto& f : fixups) {
    const auto it = labels.find(f.label);
    if (it == labels.end()) {
      throw AssemblyError(f.line, "undefined label '" + f.label + "'");
    }
    if (it->second >= kAddressLimit) {
      throw AssemblyError(f.line, "label '" + f.label + "' out of range");
    }
    if (f.slot < 0) {
      triads[f.triad].seq.target = it->second;
    } else {
      triads[f.triad].ops[f.slot].imm = it->second;
    }
  }
  if (origin + triads.size() > kAddressLimit) {
    throw AssemblyError(0, "program does not fit below address 0xF20");
  }
  return triads;
}

std::string FormatOp(const MicroOp& op) {
  std::string m = op.opcode == Opcode::kJcc
                      ? JccMnemonic(op.cond)
                      : std::string(OpcodeMnemonic(op.opcode));
  if (op.opcode == Opcode::kNop) return m;
  switch (op.size) {
    case OpSize::kW64: m += ".q"; break;
    case OpSize::kW16: m += ".w"; break;
    case OpSize::kW8: m += ".b"; break;
    case OpSize::kW32: break;
  }
  auto reg = [&](RegisterId r) { return RegisterName(r, op.size); };
  auto src2_or_imm = [&]() {
    return op.imm ? text::Hex(*op.imm) : reg(op.src2);
  };
  switch (op.opcode) {
    case Opcode::kNop:
      return m;
    case Opcode::kMov:
      return m + " " + reg(op.dst) + ", " +
             (op.imm ? text::Hex(*op.imm) : reg(op.src1));
    case Opcode::kCmp:
      return m + " " + reg(op.src1) + ", " + src2_or_imm();
    case Opcode::kLd:
      return m + " " + reg(op.dst) + ", [" + reg(op.src1) + " + " +
             src2_or_imm() + "]";
    case Opcode::kSt:
      return m + " [" + reg(op.src1) + " + " + src2_or_imm() + "], " +
             reg(op.dst);
    case Opcode::kDbg:
      return m + " " + reg(op.dst) + ", " + reg(op.src1);
    case Opcode::kWriteout: {
      std::string s = m + " " + reg(op.dst) + ", " + reg(op.src1);
      if (op.imm && *op.imm != 0) s += ", " + text::Hex(*op.imm);
      return s;
    }
    case Opcode::kJcc:
      return m + " " + text::Hex(op.imm.value_or(0));
    default:
      return m + " " + reg(op.dst) + ", " + reg(op.src1) + ", " + src2_or_imm();
  }
}

std::string Disassemble(std::span<const Triad> triads) {
  std::string out;
  for (const auto& t : triads) {
    if (t.seq.action == SeqAction::kComplete) {
      out += ".sw_complete\n";
    } else if (t.seq.action == SeqAction::kBranch) {
      out += ".sw_branch " + text::Hex(t.seq.target) + "\n";
    }
    for (const auto& op : t.ops) out += FormatOp(op) + "\n";
  }
  return out;
}

}  // namespace ucode
