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

#include "ucode/defenses.hpp"

#include <algorithm>
#include <sstream>

#include "text_util.hpp"
#include "ucode/error.hpp"
#include "ucode/rtl.hpp"
#include "ucode/stock_rom.hpp"

namespace ucode {

namespace {

using text::Hex;

// reg <- 32-bit constant, three ops.
std::string LoadConst32(std::string_view reg, uint32_t value) {
  const std::string r(reg);
  return "  mov " + r + ", " + Hex(value >> 16) + "\n  sll " + r + ", " + r + ", 16\n  or " +
         r + ", " + r + ", " + Hex(value & 0xFFFF) + "\n";
}

UpdateFile SingleHookUpdate(uint16_t rom_addr, const std::string& source) {
  UpdateFile u;
  u.matches.push_back({rom_addr, 0});
  u.triads = Assemble(source, kPatchRamBase);
  if (u.triads.size() > kPatchRamTriads) {
    throw Error("microprogram needs " + std::to_string(u.triads.size()) +
                " triads; patch RAM holds 32");
  }
  return u;
}

const EntryPoint& MicrocodedEntry(const EngineState& engine, X86Mnemonic m) {
  const EntryPoint& e = engine.entry(m);
  if (!e.microcoded) {
    throw Error("'" + std::string(MnemonicName(m)) +
                "' is not microcoded and cannot be hooked");
  }
  return e;
}

}  // namespace

std::string RdtscProgramSource(int zero_bits) {
  if (zero_bits < 0 || zero_bits > 32) {
    throw Error("zero_bits must be in [0, 32], got " + std::to_string(zero_bits));
  }
  const uint32_t mask = zero_bits == 32 ? 0 : ~0u << zero_bits;
  std::string s =
      "; edx:eax <- TSC\n"
      "  dbg t9q, TSC\n"
      "  srl.q rdx, t9q, 32\n"
      "  srl.q rax, t9q, 0\n"
      "; and mask\n" +
      LoadConst32("t1d", mask);
  for (int i = 0; i < 3 * (kRdtscProgramTriads - 3); ++i) s += "  nop\n";
  s +=
      ".sw_complete\n"
      "  and eax, t1d\n"
      "  add t2d, 0\n"
      "  add t2d, 0\n";
  return s;
}

UpdateFile BuildRdtscProgram(int zero_bits) {
  return SingleHookUpdate(kRdtscEntry, RdtscProgramSource(zero_bits));
}

std::string_view ReportModeName(ReportMode mode) {
  switch (mode) {
    case ReportMode::kAccessViolation: return "access_violation";
    case ReportMode::kBoundRange: return "bound_range";
    case ReportMode::kX86Callback: return "x86_callback";
  }
  return "?";
}

std::optional<ReportMode> ReportModeFromName(std::string_view name) {
  for (auto m : {ReportMode::kAccessViolation, ReportMode::kBoundRange,
                 ReportMode::kX86Callback}) {
    if (ReportModeName(m) == name) return m;
  }
  return std::nullopt;
}

HwasanVerdict HwasanOracle(uint32_t addr, uint32_t k_size, const ShadowReader& shadow,
                           uint32_t offset) {
  const uint32_t shadow_addr = (addr >> 3) + offset;
  auto load = [&](uint32_t a) {
    const auto v = shadow(a);
    if (!v) throw Error("shadow access out of bounds at " + Hex(a));
    return *v;
  };
  if (k_size < 8) {
    const int64_t s = load(shadow_addr);
    if (s != 0 && s <= int64_t{addr & 7} + k_size - 1) return HwasanVerdict::kBug;
    return HwasanVerdict::kValid;
  }
  for (uint32_t i = 0; i < k_size / 8; ++i) {
    if (load(shadow_addr + i) != 0) return HwasanVerdict::kBug;
  }
  return HwasanVerdict::kValid;
}

std::string HwasanProgramSource(const HwasanParams& p) {
  std::string s =
      "; t0 = address, t1 + t2 = access size\n"
      "  srl t3d, t0d, 3\n" +
      LoadConst32("t4d", p.shadow_offset) +
      "  add t3d, t3d, t4d\n"
      "  add t5d, t1d, t2d\n"
      "  mov t7d, " + Hex(kHwasanDelayIterations) + "\n"
      "delay:\n"
      "  sub t7d, t7d, 1\n"
      "  cmp t7d, 0\n"
      "  jnz delay\n"
      "  cmp t5d, 8\n"
      "  jae large\n"
      "  mov t6d, 0\n"
      "  ld.b t6b, [t3d]\n"
      "  cmp t6d, 0\n"
      "  jz ok\n"
      "  and t8d, t0d, 7\n"
      "  add t8d, t8d, t5d\n"
      "  sub t8d, t8d, 1\n"
      ".sw_complete\n"
      "  cmp t6d, t8d\n"
      "  jle bug\n"
      "ok:\n"
      ".sw_complete\n"
      "  nop\n"
      "large:\n"
      "  srl t9d, t5d, 3\n"
      "  mov t10d, t3d\n"
      "next:\n"
      "  mov t6d, 0\n"
      "  ld.b t6b, [t10d]\n"
      "  cmp t6d, 0\n"
      "  jnz bug\n"
      "  add t10d, t10d, 1\n"
      "  sub t9d, t9d, 1\n"
      ".sw_complete\n"
      "  cmp t9d, 0\n"
      "  jnz next\n"
      "bug:\n";
  switch (p.mode) {
    case ReportMode::kAccessViolation:
    case ReportMode::kBoundRange:
      s += ".sw_complete\n"
           "  mov t2d, t5d\n"
           "  mov t11d, " +
           std::to_string(static_cast<int>(p.mode == ReportMode::kAccessViolation
                                               ? FaultKind::kAccessViolation
                                               : FaultKind::kBoundRange)) +
           "\n  writeout UFLAGS, t11d, 0\n";
      break;
    case ReportMode::kX86Callback:
      s += LoadConst32("t11d", p.callback_addr) +
           ".sw_complete\n"
           "  writeout NEXT_X86_IP, t11d, 1\n";
      break;
  }
  return s;
}

UpdateFile BuildHwasanProgram(const HwasanParams& p) {
  return SingleHookUpdate(kBoundEntry, HwasanProgramSource(p));
}

std::string_view IsrSemanticName(IsrSemantic s) {
  switch (s) {
    case IsrSemantic::kRegMove: return "reg_move";
    case IsrSemantic::kMemLoad: return "mem_load";
    case IsrSemantic::kShl: return "shl";
    case IsrSemantic::kShr: return "shr";
    case IsrSemantic::kAdd: return "add";
    case IsrSemantic::kXor: return "xor";
  }
  return "?";
}

std::optional<IsrSemantic> IsrSemanticFromName(std::string_view name) {
  for (int i = 0; i < kIsrHandlerCount; ++i) {
    const auto s = static_cast<IsrSemantic>(i);
    if (IsrSemanticName(s) == name) return s;
  }
  return std::nullopt;
}

void IsrAssignment::Validate() const {
  std::array<bool, kIsrHandlerCount> seen{};
  for (const auto s : handler_map) {
    const auto i = static_cast<size_t>(s);
    if (i >= seen.size() || seen[i]) throw Error("ISR handler map is not a bijection");
    seen[i] = true;
  }
  if (host != X86Mnemonic::kBound) {
    throw Error("ISR host instruction must take a register and a memory operand (bound)");
  }
  if (base_reg == Gpr::kEsp || base_reg == Gpr::kEbp) {
    throw Error("ISR base register must be visible to microcode");
  }
}

int IsrAssignment::IndexOf(IsrSemantic s) const {
  for (int i = 0; i < kIsrHandlerCount; ++i) {
    if (handler_map[i] == s) return i;
  }
  throw Error("semantic '" + std::string(IsrSemanticName(s)) + "' has no handler");
}

IsrAssignment ParseIsrAssignment(std::string_view text) {
  IsrAssignment a;
  std::istringstream in{std::string(text)};
  std::string raw;
  int n = 0;
  while (std::getline(in, raw)) {
    ++n;
    const auto line = text::Trim(text::StripComment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw AssemblyError(n, "expected '<key> = <value>'");
    const auto key = text::Trim(line.substr(0, eq));
    const auto value = text::Lower(text::Trim(line.substr(eq + 1)));
    if (key.starts_with("handler")) {
      const auto idx = text::ParseNumber(text::Trim(key.substr(7)));
      if (!idx || *idx >= kIsrHandlerCount) {
        throw AssemblyError(n, "handler index must be in [0, 5]");
      }
      const auto s = IsrSemanticFromName(value);
      if (!s) throw AssemblyError(n, "unknown semantic '" + value + "'");
      a.handler_map[*idx] = *s;
    } else if (key == "mask") {
      const auto v = text::ParseNumber(value);
      if (!v || *v > 0xFFFFFFFFu) throw AssemblyError(n, "mask must be a 32-bit number");
      a.io_mask = static_cast<uint32_t>(*v);
    } else if (key == "host") {
      const auto m = MnemonicFromName(value);
      if (!m) throw AssemblyError(n, "unknown host instruction '" + value + "'");
      a.host = *m;
    } else if (key == "base") {
      bool found = false;
      for (int g = 0; g < 8; ++g) {
        if (GprName(static_cast<Gpr>(g)) == value) {
          a.base_reg = static_cast<Gpr>(g);
          found = true;
        }
      }
      if (!found) throw AssemblyError(n, "unknown base register '" + value + "'");
    } else {
      throw AssemblyError(n, "unknown key '" + std::string(key) + "'");
    }
  }
  a.Validate();
  return a;
}

std::string FormatIsrAssignment(const IsrAssignment& a) {
  std::string out;
  for (int i = 0; i < kIsrHandlerCount; ++i) {
    out += "handler " + std::to_string(i) + " = " +
           std::string(IsrSemanticName(a.handler_map[i])) + "\n";
  }
  out += "mask = " + Hex(a.io_mask) + "\n";
  out += "host = " + std::string(MnemonicName(a.host)) + "\n";
  out += "base = " + std::string(GprName(a.base_reg)) + "\n";
  return out;
}

std::string IsrProgramSource(const IsrAssignment& a) {
  a.Validate();
  std::string s =
      "; t0 = operand, t1 = base register, t2 = (arg << 16) | handler\n"
      "  and t3d, t2d, 0xffff\n"
      "  srl t4d, t2d, 16\n";
  for (int i = 0; i < kIsrHandlerCount; ++i) {
    s += "  cmp t3d, " + std::to_string(i) + "\n  jz h" + std::to_string(i) + "\n";
  }
  s +=
      "  mov t6d, " + std::to_string(static_cast<int>(FaultKind::kInvalidOperation)) + "\n"
      ".sw_complete\n"
      "  writeout UFLAGS, t6d, 0\n";
  for (int i = 0; i < kIsrHandlerCount; ++i) {
    s += "h" + std::to_string(i) + ":  ; " + std::string(IsrSemanticName(a.handler_map[i])) +
         "\n";
    switch (a.handler_map[i]) {
      case IsrSemantic::kRegMove:
        s += ".sw_complete\n  mov t0d, t1d\n";
        break;
      case IsrSemantic::kMemLoad:
        s += "  add t5d, t1d, t4d\n  ld t0d, [t5d]\n";
        if (a.io_mask != 0) {
          s += LoadConst32("t6d", a.io_mask);
          s += ".sw_complete\n  xor t0d, t0d, t6d\n";
        } else {
          s += ".sw_complete\n  nop\n";
        }
        break;
      case IsrSemantic::kShl:
        s += ".sw_complete\n  sll t0d, t0d, t4d\n";
        break;
      case IsrSemantic::kShr:
        s += ".sw_complete\n  srl t0d, t0d, t4d\n";
        break;
      case IsrSemantic::kAdd:
        s += ".sw_complete\n  add t0d, t0d, t1d\n";
        break;
      case IsrSemantic::kXor:
        s += ".sw_complete\n  xor t0d, t0d, t1d\n";
        break;
    }
  }
  return s;
}

UpdateFile BuildIsrProgram(const IsrAssignment& a, const EngineState& engine) {
  return SingleHookUpdate(MicrocodedEntry(engine, a.host).addr, IsrProgramSource(a));
}

std::string TranspileIsr(std::string_view program, const IsrAssignment& a,
                         const SymbolTable& symbols) {
  a.Validate();
  std::string out;
  int n = 0;
  size_t pos = 0;
  while (pos < program.size()) {
    const size_t eol = std::min(program.find('\n', pos), program.size());
    const std::string_view raw = program.substr(pos, eol - pos);
    pos = eol + 1;
    ++n;
    std::string_view body = text::Trim(text::StripComment(raw));
    std::string prefix;
    if (const auto colon = body.find(':'); colon != std::string_view::npos) {
      prefix = std::string(text::Trim(body.substr(0, colon + 1))) + " ";
      body = text::Trim(body.substr(colon + 1));
    }
    if (body.empty()) {
      out += std::string(raw) + "\n";
      continue;
    }
    X86Instruction in;
    try {
      in = ParseX86Instruction(body, symbols);
    } catch (const AssemblyError& e) {
      throw AssemblyError(n, e.what());
    }
    std::optional<IsrSemantic> sem;
    std::optional<Gpr> base;
    uint32_t arg = 0;
    const auto& d = in.ops[0];
    const auto& s = in.ops[1];
    switch (in.mnemonic) {
      case X86Mnemonic::kMov:
        if (d.is_reg() && s.is_reg()) {
          sem = IsrSemantic::kRegMove;
          base = s.reg;
        } else if (d.is_reg() && s.is_mem() && !s.mem.base) {
          if (s.mem.disp > 0xFFFF) {
            throw AssemblyError(n, "load offset " + Hex(s.mem.disp) + " exceeds 16 bits");
          }
          sem = IsrSemantic::kMemLoad;
          base = a.base_reg;
          arg = s.mem.disp;
        }
        break;
      case X86Mnemonic::kAdd:
      case X86Mnemonic::kXor:
        if (d.is_reg() && s.is_reg()) {
          sem = in.mnemonic == X86Mnemonic::kAdd ? IsrSemantic::kAdd : IsrSemantic::kXor;
          base = s.reg;
        }
        break;
      case X86Mnemonic::kShl:
      case X86Mnemonic::kShr:
        if (!s.is_imm()) throw AssemblyError(n, "unsupported shift-by-register");
        sem = in.mnemonic == X86Mnemonic::kShl ? IsrSemantic::kShl : IsrSemantic::kShr;
        base = a.base_reg;
        arg = s.imm & 0xFFFF;
        break;
      default:
        break;
    }
    if (sem && (d.reg == Gpr::kEsp || d.reg == Gpr::kEbp || *base == Gpr::kEsp ||
                *base == Gpr::kEbp)) {
      throw AssemblyError(n, "esp/ebp cannot be rewritten");
    }
    if (!sem) {
      out += std::string(raw) + "\n";
      continue;
    }
    X86Instruction r;
    r.mnemonic = a.host;
    r.operand_count = 2;
    r.ops[0] = X86Operand::Reg(d.reg);
    r.ops[1] = X86Operand::Mem(*base, (arg << 16) | static_cast<uint32_t>(a.IndexOf(*sem)));
    out += prefix + FormatX86(r) + "\n";
  }
  if (!program.empty() && program.back() != '\n' && !out.empty()) out.pop_back();
  return out;
}

std::string HookProgramSource(const HookSpec& h, const EngineState& engine) {
  const uint16_t entry = MicrocodedEntry(engine, h.target).addr;
  if (h.filter_register.kind == RegKind::kSpecial || h.filter_register.is_none() ||
      (h.filter_register.kind == RegKind::kX86 && !h.filter_register.IsMicrocodeGpr())) {
    throw Error("filter register must be a temporary or a microcode-visible GPR");
  }
  const std::string filter = RegisterName(h.filter_register, OpSize::kW32);
  return "; filter\n" + LoadConst32("t20d", h.filter_value) +
         ".sw_branch " + Hex(entry) + "\n"
         "  cmp " + filter + ", t20d\n"
         "  jz hit\n"
         "hit:\n" +
         LoadConst32("t21d", h.handler_addr) +
         ".sw_complete\n"
         "  writeout NEXT_X86_IP, t21d, 1\n";
}

UpdateFile BuildHookProgram(const HookSpec& h, const EngineState& engine) {
  return SingleHookUpdate(MicrocodedEntry(engine, h.target).addr, HookProgramSource(h, engine));
}

UpdateFile BuildDetourProgram(uint16_t rom_addr, int triads) {
  if (rom_addr >= kRomTriads) throw Error("detour target must be a ROM address");
  if (triads < 1 || triads > kPatchRamTriads) throw Error("detour length must be in [1, 32]");
  std::string s;
  for (int i = 0; i < triads; ++i) {
    if (i == triads - 1) s += ".sw_branch " + Hex(rom_addr) + "\n";
    s += "  nop\n";
    if (i != triads - 1) s += "  nop\n  nop\n";
  }
  return SingleHookUpdate(rom_addr, s);
}

std::vector<X86Mnemonic> DetectorInstructions() {
  std::vector<X86Mnemonic> out;
  for (int i = 0; i < kX86MnemonicCount; ++i) {
    const auto m = static_cast<X86Mnemonic>(i);
    try {
      CanonicalInstruction(m);
      out.push_back(m);
    } catch (const EngineError&) {
    }
  }
  return out;
}

std::vector<HookReport> DetectHooks(const MachineFactory& factory,
                                    std::span<const uint8_t> update_bytes,
                                    std::span<const X86Mnemonic> instructions,
                                    ApplyMode mode) {
  const Machine baseline = factory();
  Machine patched = factory();
  ApplyUpdate(patched, update_bytes, mode);
  std::vector<HookReport> out;
  for (const auto m : instructions) {
    const auto instr = CanonicalInstruction(m);
    const auto before = static_cast<int64_t>(baseline.MeasureInstruction(instr).cycles);
    const auto after = static_cast<int64_t>(patched.MeasureInstruction(instr).cycles);
    if (before != after) out.push_back({m, before, after - before});
  }
  return out;
}

std::string AttestProgramSource() {
  return "; filter on ecx\n" + LoadConst32("t9d", kAttestMsr) +
         ".sw_branch " + Hex(kWrmsrEntry) + "\n"
         "  cmp ecx, t9d\n"
         "  jz attest\n"
         "attest:\n"
         "; key words k0..k3 and the challenge (v0 = edx, v1 = eax)\n"
         "  dbg t13q, KEY_LO\n"
         "  srl.q t12q, t13q, 32\n"
         "  dbg t15q, KEY_HI\n"
         "  srl.q t14q, t15q, 32\n"
         "  mov t10d, edx\n"
         "  mov t11d, eax\n" +
         LoadConst32("t17d", kTeaDelta) +
         "  mov t19d, 2\n"
         "block:\n"
         "  mov t16d, 0\n"
         "  mov t18d, 32\n"
         "round:\n"
         "  add t16d, t16d, t17d\n"
         "  sll t20d, t11d, 4\n"
         "  add t20d, t20d, t12d\n"
         "  add t21d, t11d, t16d\n"
         "  xor t20d, t20d, t21d\n"
         "  srl t21d, t11d, 5\n"
         "  add t21d, t21d, t13d\n"
         "  xor t20d, t20d, t21d\n"
         "  add t10d, t10d, t20d\n"
         "  sll t20d, t10d, 4\n"
         "  add t20d, t20d, t14d\n"
         "  add t21d, t10d, t16d\n"
         "  xor t20d, t20d, t21d\n"
         "  srl t21d, t10d, 5\n"
         "  add t21d, t21d, t15d\n"
         "  xor t20d, t20d, t21d\n"
         "  add t11d, t11d, t20d\n"
         "  sub t18d, t18d, 1\n"
         "  cmp t18d, 0\n"
         "  jnz round\n"
         "  nop\n"
         "; chain the padding block 0x80 00 .. 00\n"
         "  sub t19d, t19d, 1\n"
         "  cmp t19d, 0\n"
         "  jz done\n"
         "  mov t20d, 0x8000\n"
         "  sll t20d, t20d, 16\n"
         "  xor t10d, t10d, t20d\n"
         "  jmp block\n"
         "done:\n"
         ".sw_complete\n"
         "  mov edx, t10d\n"
         "  mov eax, t11d\n";
}

UpdateFile BuildAttestProgram() { return SingleHookUpdate(kWrmsrEntry, AttestProgramSource()); }

std::array<uint8_t, 8> ChallengeBytes(uint64_t challenge) {
  std::array<uint8_t, 8> out;
  for (int i = 0; i < 8; ++i) out[i] = static_cast<uint8_t>(challenge >> (56 - 8 * i));
  return out;
}

void ProvisionEnclave(Machine& machine, const TeaKey& key) {
  machine.engine().installed_key = key;
  const auto bytes = PackUpdate(SignUpdate(BuildAttestProgram(), key));
  ApplyUpdate(machine, bytes, ApplyMode::kAuthenticated);
}

uint64_t EnclaveAttest(Machine& machine, uint64_t challenge) {
  auto& host = machine.host();
  host.reg(Gpr::kEcx) = kAttestMsr;
  host.reg(Gpr::kEdx) = static_cast<uint32_t>(challenge >> 32);
  host.reg(Gpr::kEax) = static_cast<uint32_t>(challenge);
  const auto result = machine.Dispatch(ParseX86Instruction("wrmsr"));
  if (result.fault) {
    throw EngineError("attestation faulted: " + std::string(FaultKindName(result.fault->kind)));
  }
  return (uint64_t{host.reg(Gpr::kEdx)} << 32) | host.reg(Gpr::kEax);
}

}  // namespace ucode
