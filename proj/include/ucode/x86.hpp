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

// The x86 subset executed by the host model, with a small textual assembler
// that shares the lexical rules of the RTL (`;` comments, `label:` prefixes,
// decimal or 0x-prefixed numbers).

#ifndef UCODE_X86_HPP_
#define UCODE_X86_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ucode/isa.hpp"

namespace ucode {

enum class X86Mnemonic : uint8_t {
  kMov, kAdd, kSub, kAnd, kOr, kXor, kShl, kShr, kShrd, kCmp, kJcc, kJmp,
  kPush, kPop, kCall, kRet, kBound, kRdtsc, kWrmsr, kCpuid, kXchg, kHlt,
};
inline constexpr int kX86MnemonicCount = 22;

enum class X86Cond : uint8_t { kE, kNe, kB, kAe, kBe, kA, kS, kNs };

std::string_view MnemonicName(X86Mnemonic m);
std::optional<X86Mnemonic> MnemonicFromName(std::string_view name);

struct MemOperand {
  std::optional<Gpr> base;
  uint32_t disp = 0;

  friend bool operator==(const MemOperand&, const MemOperand&) = default;
};

struct X86Operand {
  enum class Kind : uint8_t { kNone, kReg, kImm, kMem };
  Kind kind = Kind::kNone;
  Gpr reg = Gpr::kEax;
  uint32_t imm = 0;
  MemOperand mem;

  static X86Operand Reg(Gpr g) { return {Kind::kReg, g, 0, {}}; }
  static X86Operand Imm(uint32_t v) { return {Kind::kImm, Gpr::kEax, v, {}}; }
  static X86Operand Mem(std::optional<Gpr> base, uint32_t disp) {
    return {Kind::kMem, Gpr::kEax, 0, {base, disp}};
  }
  bool is_reg() const { return kind == Kind::kReg; }
  bool is_imm() const { return kind == Kind::kImm; }
  bool is_mem() const { return kind == Kind::kMem; }

  friend bool operator==(const X86Operand&, const X86Operand&) = default;
};

struct X86Instruction {
  X86Mnemonic mnemonic = X86Mnemonic::kHlt;
  X86Cond cond = X86Cond::kE;  // kJcc only
  std::array<X86Operand, 3> ops{};
  int operand_count = 0;

  friend bool operator==(const X86Instruction&, const X86Instruction&) = default;
};

// Instructions occupy fixed 4-byte slots starting at `base`.
inline constexpr uint32_t kX86InstructionBytes = 4;
inline constexpr uint32_t kDefaultCodeBase = 0x00400000;

struct X86Program {
  uint32_t base = kDefaultCodeBase;
  std::vector<X86Instruction> code;
  std::map<std::string, uint32_t, std::less<>> labels;

  uint32_t AddressOf(size_t index) const {
    return base + static_cast<uint32_t>(index) * kX86InstructionBytes;
  }
};

using SymbolTable = std::map<std::string, uint32_t, std::less<>>;

// `symbols` resolves names used in memory operands and immediates; code
// labels defined in the text take precedence. Throws AssemblyError.
X86Program ParseX86Program(std::string_view text, const SymbolTable& symbols = {},
                           uint32_t base = kDefaultCodeBase);

// Parses one instruction. Branch targets must be numeric.
X86Instruction ParseX86Instruction(std::string_view line,
                                   const SymbolTable& symbols = {});

// Canonical text, e.g. "bound esi, [eax + 0x80003]".
std::string FormatX86(const X86Instruction& instr);

std::string_view GprName(Gpr g);

}  // namespace ucode

#endif  // UCODE_X86_HPP_
