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

// Micro-op, triad and sequence-word data model together with the 64-bit op
// encoding and the triad byte stream.
//
// Op word layout (bit 63 is the most significant bit):
//
//   63..56  opcode          35      immediate valid
//   55..50  dst register    34..16  reserved, must be zero
//   49..44  src1 register   15..0   immediate
//   43..38  src2 register
//   37..36  operand size
//
// Sequence word layout (32 bits): 1..0 action, 27..16 branch target, every
// other bit reserved.

#ifndef UCODE_ISA_HPP_
#define UCODE_ISA_HPP_

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ucode {

inline constexpr uint16_t kRomTriads = 0xF00;
inline constexpr uint16_t kPatchRamBase = 0xF00;
inline constexpr uint16_t kPatchRamTriads = 32;
inline constexpr uint16_t kAddressLimit = kPatchRamBase + kPatchRamTriads;
inline constexpr int kTemporaryCount = 22;

enum class RegKind : uint8_t { kNone, kX86, kTemp, kSpecial };

// Host register numbering follows the x86 ModRM order.
enum class Gpr : uint8_t { kEax, kEcx, kEdx, kEbx, kEsp, kEbp, kEsi, kEdi };

enum class Special : uint8_t { kTsc, kNextX86Ip, kUflags, kKeyLo, kKeyHi };
inline constexpr int kSpecialCount = 5;

struct RegisterId {
  RegKind kind = RegKind::kNone;
  uint8_t index = 0;

  static constexpr RegisterId None() { return {}; }
  static constexpr RegisterId X86(Gpr g) {
    return {RegKind::kX86, static_cast<uint8_t>(g)};
  }
  static constexpr RegisterId Temp(int i) {
    return {RegKind::kTemp, static_cast<uint8_t>(i)};
  }
  static constexpr RegisterId Spec(Special s) {
    return {RegKind::kSpecial, static_cast<uint8_t>(s)};
  }

  bool is_none() const { return kind == RegKind::kNone; }
  // True for the x86 registers micro-ops may name (everything but esp/ebp).
  bool IsMicrocodeGpr() const;

  friend auto operator<=>(const RegisterId&, const RegisterId&) = default;
};

enum class OpSize : uint8_t { kW32 = 0, kW16 = 1, kW64 = 2, kW8 = 3 };

int SizeBits(OpSize size);
uint64_t SizeMask(OpSize size);

enum class Opcode : uint8_t {
  kNop = 0x00,
  kMov = 0x01,
  kAdd = 0x02,
  kSub = 0x03,
  kAnd = 0x04,
  kOr = 0x05,
  kXor = 0x06,
  kSll = 0x07,
  kSrl = 0x08,
  kLd = 0x09,
  kSt = 0x0A,
  kCmp = 0x0B,
  kDbg = 0x0C,
  kWriteout = 0x0D,
  kJcc = 0x20,  // condition occupies the low nibble of the opcode byte
};

// Conditions evaluated against the flags produced by the last `cmp`.
enum class Cond : uint8_t {
  kAlways,
  kZ,
  kNz,
  kB,
  kAe,
  kBe,
  kA,
  kL,
  kGe,
  kLe,
  kG,
  kS,
  kNs,
};
inline constexpr int kCondCount = 13;

struct MicroOp {
  Opcode opcode = Opcode::kNop;
  Cond cond = Cond::kAlways;  // kJcc only
  RegisterId dst;
  RegisterId src1;
  RegisterId src2;
  std::optional<uint16_t> imm;
  OpSize size = OpSize::kW32;

  friend bool operator==(const MicroOp&, const MicroOp&) = default;
};

enum class SeqAction : uint8_t { kNext = 0, kBranch = 1, kComplete = 2 };

struct SequenceWord {
  SeqAction action = SeqAction::kNext;
  uint16_t target = 0;  // kBranch only

  friend bool operator==(const SequenceWord&, const SequenceWord&) = default;
};

struct Triad {
  std::array<MicroOp, 3> ops{};
  SequenceWord seq;

  bool IsAllNop() const;
  friend bool operator==(const Triad&, const Triad&) = default;
};

inline constexpr size_t kTriadBytes = 3 * 8 + 4;

uint64_t EncodeOp(const MicroOp& op);
// Throws DecodeError("unrecognized operation ...") for unknown opcodes,
// reserved bits or malformed operand combinations.
MicroOp DecodeOp(uint64_t word);

uint32_t EncodeSeq(const SequenceWord& seq);
SequenceWord DecodeSeq(uint32_t word);

// Little-endian 3 x u64 + u32 per triad.
void AppendTriadBytes(const Triad& triad, std::vector<uint8_t>& out);
std::vector<uint8_t> TriadsToBytes(std::span<const Triad> triads);
Triad TriadFromBytes(std::span<const uint8_t> bytes);
std::vector<Triad> TriadsFromBytes(std::span<const uint8_t> bytes);

// Register naming. The view decides the textual suffix (t3d/t3q, eax/rax).
std::string RegisterName(RegisterId reg, OpSize view);
std::string_view OpcodeMnemonic(Opcode opcode);
std::string_view CondName(Cond cond);
std::string_view SpecialName(Special s);

}  // namespace ucode

#endif  // UCODE_ISA_HPP_
