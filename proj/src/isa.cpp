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

#include "ucode/isa.hpp"

#include <cstring>

#include "ucode/error.hpp"

namespace ucode {

namespace {

constexpr int kOpcodeShift = 56;
constexpr int kDstShift = 50;
constexpr int kSrc1Shift = 44;
constexpr int kSrc2Shift = 38;
constexpr int kSizeShift = 36;
constexpr int kImmValidBit = 35;
constexpr uint64_t kReservedMask = ((uint64_t{1} << 19) - 1) << 16;
constexpr uint64_t kRegFieldMask = 0x3F;

// Register field codes: 0 none, 1..6 microcode-visible GPRs, 7..28 t0..t21,
// 29.. specials. esp and ebp have no code.
constexpr uint8_t kFirstTempCode = 7;
constexpr uint8_t kFirstSpecialCode = kFirstTempCode + kTemporaryCount;
constexpr uint8_t kRegCodeLimit = kFirstSpecialCode + kSpecialCount;

constexpr std::array<Gpr, 6> kCodeToGpr = {Gpr::kEax, Gpr::kEcx, Gpr::kEdx,
                                           Gpr::kEbx, Gpr::kEsi, Gpr::kEdi};

uint8_t RegisterCode(RegisterId reg, const char* field) {
  switch (reg.kind) {
    case RegKind::kNone:
      return 0;
    case RegKind::kX86:
      for (size_t i = 0; i < kCodeToGpr.size(); ++i) {
        if (static_cast<uint8_t>(kCodeToGpr[i]) == reg.index) {
          return static_cast<uint8_t>(i + 1);
        }
      }
      throw EncodingError(field, "register not addressable from microcode");
    case RegKind::kTemp:
      if (reg.index >= kTemporaryCount) {
        throw EncodingError(field, "temporary index " +
                                       std::to_string(reg.index) +
                                       " out of range");
      }
      return kFirstTempCode + reg.index;
    case RegKind::kSpecial:
      if (reg.index >= kSpecialCount) {
        throw EncodingError(field, "unknown special register");
      }
      return kFirstSpecialCode + reg.index;
  }
  throw EncodingError(field, "bad register kind");
}

RegisterId RegisterFromCode(uint8_t code) {
  if (code == 0) return RegisterId::None();
  if (code < kFirstTempCode) return RegisterId::X86(kCodeToGpr[code - 1]);
  if (code < kFirstSpecialCode) return RegisterId::Temp(code - kFirstTempCode);
  if (code < kRegCodeLimit) {
    return RegisterId::Spec(static_cast<Special>(code - kFirstSpecialCode));
  }
  throw DecodeError("unrecognized operation: register code " +
                    std::to_string(code));
}

bool IsDataReg(RegisterId r) {
  return r.kind == RegKind::kTemp || (r.kind == RegKind::kX86 && r.IsMicrocodeGpr());
}

// Returns the name of the first field violating the operand shape of the
// opcode, or nullptr when the op is well formed.
const char* ShapeViolation(const MicroOp& op) {
  const bool has_src2 = !op.src2.is_none();
  const bool has_imm = op.imm.has_value();
  auto one_of_src2_imm = [&]() -> const char* {
    if (has_src2 == has_imm) return has_imm ? "imm" : "src2";
    if (has_src2 && !IsDataReg(op.src2)) return "src2";
    return nullptr;
  };
  switch (op.opcode) {
    case Opcode::kNop:
      if (!op.dst.is_none()) return "dst";
      if (!op.src1.is_none()) return "src1";
      if (has_src2) return "src2";
      if (has_imm) return "imm";
      if (op.size != OpSize::kW32) return "size";
      return nullptr;
    case Opcode::kMov:
      if (!IsDataReg(op.dst)) return "dst";
      if (has_src2) return "src2";
      if (op.src1.is_none() == !has_imm) return "src1";
      if (!op.src1.is_none() && !IsDataReg(op.src1)) return "src1";
      return nullptr;
    case Opcode::kAdd:
    case Opcode::kSub:
    case Opcode::kAnd:
    case Opcode::kOr:
    case Opcode::kXor:
    case Opcode::kSll:
    case Opcode::kSrl:
    case Opcode::kLd:
    case Opcode::kSt:
      if (!IsDataReg(op.dst)) return "dst";
      if (!IsDataReg(op.src1)) return "src1";
      return one_of_src2_imm();
    case Opcode::kCmp:
      if (!op.dst.is_none()) return "dst";
      if (!IsDataReg(op.src1)) return "src1";
      return one_of_src2_imm();
    case Opcode::kDbg:
      if (!IsDataReg(op.dst)) return "dst";
      if (op.src1.kind != RegKind::kSpecial) return "src1";
      if (has_src2) return "src2";
      if (has_imm) return "imm";
      return nullptr;
    case Opcode::kWriteout:
      if (op.dst != RegisterId::Spec(Special::kNextX86Ip) &&
          op.dst != RegisterId::Spec(Special::kUflags)) {
        return "dst";
      }
      if (!IsDataReg(op.src1)) return "src1";
      if (has_src2) return "src2";
      if (!has_imm) return "imm";
      return nullptr;
    case Opcode::kJcc:
      if (static_cast<uint8_t>(op.cond) >= kCondCount) return "cond";
      if (!op.dst.is_none()) return "dst";
      if (!op.src1.is_none()) return "src1";
      if (has_src2) return "src2";
      if (!has_imm || *op.imm >= kAddressLimit) return "imm";
      return nullptr;
  }
  return "opcode";
}

bool KnownOpcodeByte(uint8_t b) {
  if (b <= static_cast<uint8_t>(Opcode::kWriteout)) return true;
  return b >= static_cast<uint8_t>(Opcode::kJcc) &&
         b < static_cast<uint8_t>(Opcode::kJcc) + kCondCount;
}

}  // namespace

bool RegisterId::IsMicrocodeGpr() const {
  return kind == RegKind::kX86 && index != static_cast<uint8_t>(Gpr::kEsp) &&
         index != static_cast<uint8_t>(Gpr::kEbp) && index < 8;
}

int SizeBits(OpSize size) {
  switch (size) {
    case OpSize::kW8:
      return 8;
    case OpSize::kW16:
      return 16;
    case OpSize::kW32:
      return 32;
    case OpSize::kW64:
      return 64;
  }
  return 32;
}

uint64_t SizeMask(OpSize size) {
  const int bits = SizeBits(size);
  return bits == 64 ? ~uint64_t{0} : (uint64_t{1} << bits) - 1;
}

bool Triad::IsAllNop() const {
  for (const auto& op : ops) {
    if (op.opcode != Opcode::kNop) return false;
  }
  return true;
}

uint64_t EncodeOp(const MicroOp& op) {
  if (static_cast<uint8_t>(op.size) > 3) throw EncodingError("size", "bad size");
  if (const char* field = ShapeViolation(op)) {
    throw EncodingError(field, "invalid operand for " +
                                   std::string(OpcodeMnemonic(op.opcode)));
  }
  uint64_t opcode_byte = static_cast<uint8_t>(op.opcode);
  if (op.opcode == Opcode::kJcc) opcode_byte += static_cast<uint8_t>(op.cond);
  uint64_t word = opcode_byte << kOpcodeShift;
  word |= uint64_t{RegisterCode(op.dst, "dst")} << kDstShift;
  word |= uint64_t{RegisterCode(op.src1, "src1")} << kSrc1Shift;
  word |= uint64_t{RegisterCode(op.src2, "src2")} << kSrc2Shift;
  word |= uint64_t{static_cast<uint8_t>(op.size)} << kSizeShift;
  if (op.imm) {
    word |= uint64_t{1} << kImmValidBit;
    word |= *op.imm;
  }
  return word;
}

MicroOp DecodeOp(uint64_t word) {
  const auto opcode_byte = static_cast<uint8_t>(word >> kOpcodeShift);
  if (!KnownOpcodeByte(opcode_byte)) {
    throw DecodeError("unrecognized operation: opcode byte " +
                      std::to_string(opcode_byte));
  }
  if (word & kReservedMask) {
    throw DecodeError("unrecognized operation: reserved bits set");
  }
  MicroOp op;
  if (opcode_byte >= static_cast<uint8_t>(Opcode::kJcc)) {
    op.opcode = Opcode::kJcc;
    op.cond = static_cast<Cond>(opcode_byte - static_cast<uint8_t>(Opcode::kJcc));
  } else {
    op.opcode = static_cast<Opcode>(opcode_byte);
  }
  op.dst = RegisterFromCode((word >> kDstShift) & kRegFieldMask);
  op.src1 = RegisterFromCode((word >> kSrc1Shift) & kRegFieldMask);
  op.src2 = RegisterFromCode((word >> kSrc2Shift) & kRegFieldMask);
  op.size = static_cast<OpSize>((word >> kSizeShift) & 3);
  const auto imm = static_cast<uint16_t>(word & 0xFFFF);
  if ((word >> kImmValidBit) & 1) {
    op.imm = imm;
  } else if (imm != 0) {
    throw DecodeError("unrecognized operation: immediate without valid bit");
  }
  if (const char* field = ShapeViolation(op)) {
    throw DecodeError(std::string("unrecognized operation: malformed ") +
                      field);
  }
  return op;
}

uint32_t EncodeSeq(const SequenceWord& seq) {
  if (static_cast<uint8_t>(seq.action) > 2) {
    throw EncodingError("seq.action", "bad action");
  }
  if (seq.action == SeqAction::kBranch) {
    if (seq.target >= kAddressLimit) {
      throw EncodingError("seq.target", "branch target out of range");
    }
  } else if (seq.target != 0) {
    throw EncodingError("seq.target", "target only valid for branch");
  }
  return static_cast<uint32_t>(seq.action) |
         (static_cast<uint32_t>(seq.target) << 16);
}

SequenceWord DecodeSeq(uint32_t word) {
  SequenceWord seq;
  const uint32_t action = word & 3;
  const uint32_t target = (word >> 16) & 0xFFF;
  if (action == 3 || (word & ~(uint32_t{3} | (uint32_t{0xFFF} << 16)))) {
    throw DecodeError("unrecognized sequence word");
  }
  seq.action = static_cast<SeqAction>(action);
  if (seq.action == SeqAction::kBranch) {
    if (target >= kAddressLimit) {
      throw DecodeError("sequence word branch target out of range");
    }
    seq.target = static_cast<uint16_t>(target);
  } else if (target != 0) {
    throw DecodeError("unrecognized sequence word");
  }
  return seq;
}

void AppendTriadBytes(const Triad& triad, std::vector<uint8_t>& out) {
  for (const auto& op : triad.ops) {
    const uint64_t w = EncodeOp(op);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(w >> (8 * i)));
  }
  const uint32_t s = EncodeSeq(triad.seq);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(s >> (8 * i)));
}

std::vector<uint8_t> TriadsToBytes(std::span<const Triad> triads) {
  std::vector<uint8_t> out;
  out.reserve(triads.size() * kTriadBytes);
  for (const auto& t : triads) AppendTriadBytes(t, out);
  return out;
}

Triad TriadFromBytes(std::span<const uint8_t> bytes) {
  if (bytes.size() < kTriadBytes) throw DecodeError("truncated triad");
  Triad t;
  for (int k = 0; k < 3; ++k) {
    uint64_t w = 0;
    for (int i = 0; i < 8; ++i) w |= uint64_t{bytes[8 * k + i]} << (8 * i);
    t.ops[k] = DecodeOp(w);
  }
  uint32_t s = 0;
  for (int i = 0; i < 4; ++i) s |= uint32_t{bytes[24 + i]} << (8 * i);
  t.seq = DecodeSeq(s);
  return t;
}

std::vector<Triad> TriadsFromBytes(std::span<const uint8_t> bytes) {
  if (bytes.size() % kTriadBytes != 0) {
    throw DecodeError("triad stream length is not a multiple of " +
                      std::to_string(kTriadBytes));
  }
  std::vector<Triad> out;
  out.reserve(bytes.size() / kTriadBytes);
  for (size_t off = 0; off < bytes.size(); off += kTriadBytes) {
    out.push_back(TriadFromBytes(bytes.subspan(off, kTriadBytes)));
  }
  return out;
}

std::string_view OpcodeMnemonic(Opcode opcode) {
  switch (opcode) {
    case Opcode::kNop: return "nop";
    case Opcode::kMov: return "mov";
    case Opcode::kAdd: return "add";
    case Opcode::kSub: return "sub";
    case Opcode::kAnd: return "and";
    case Opcode::kOr: return "or";
    case Opcode::kXor: return "xor";
    case Opcode::kSll: return "sll";
    case Opcode::kSrl: return "srl";
    case Opcode::kLd: return "ld";
    case Opcode::kSt: return "st";
    case Opcode::kCmp: return "cmp";
    case Opcode::kDbg: return "dbg";
    case Opcode::kWriteout: return "writeout";
    case Opcode::kJcc: return "j";
  }
  return "?";
}

std::string_view CondName(Cond cond) {
  static constexpr std::array<std::string_view, kCondCount> kNames = {
      "mp", "z", "nz", "b", "ae", "be", "a", "l", "ge", "le", "g", "s", "ns"};
  return kNames[static_cast<uint8_t>(cond)];
}

std::string_view SpecialName(Special s) {
  static constexpr std::array<std::string_view, kSpecialCount> kNames = {
      "TSC", "NEXT_X86_IP", "UFLAGS", "KEY_LO", "KEY_HI"};
  return kNames[static_cast<uint8_t>(s)];
}

std::string RegisterName(RegisterId reg, OpSize view) {
  switch (reg.kind) {
    case RegKind::kNone:
      return "";
    case RegKind::kSpecial:
      return std::string(SpecialName(static_cast<Special>(reg.index)));
    case RegKind::kTemp: {
      static constexpr char kSuffix[] = {'d', 'w', 'q', 'b'};
      return "t" + std::to_string(reg.index) +
             kSuffix[static_cast<uint8_t>(view)];
    }
    case RegKind::kX86: {
      static constexpr std::array<std::array<std::string_view, 8>, 4> kNames = {{
          {"eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi"},
          {"ax", "cx", "dx", "bx", "sp", "bp", "si", "di"},
          {"rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi"},
          {"al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil"},
      }};
      return std::string(kNames[static_cast<uint8_t>(view)][reg.index & 7]);
    }
  }
  return "?";
}

}  // namespace ucode
