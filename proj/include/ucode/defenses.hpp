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

// Microprogram builders for the defense case studies, their reference
// oracles, the ISR transpiler and the timing-based hook detector.
//
// Every builder returns an unsigned UpdateFile whose patch RAM program starts
// at RAM index 0 and is reached through one match register.

#ifndef UCODE_DEFENSES_HPP_
#define UCODE_DEFENSES_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ucode/engine.hpp"
#include "ucode/update.hpp"
#include "ucode/x86.hpp"

namespace ucode {

// --- rdtsc precision ------------------------------------------------------

inline constexpr int kRdtscProgramTriads = 10;

// Replaces rdtsc; eax has its low `zero_bits` bits cleared.
std::string RdtscProgramSource(int zero_bits);
UpdateFile BuildRdtscProgram(int zero_bits);

// --- HWASAN ---------------------------------------------------------------

enum class ReportMode : uint8_t { kAccessViolation, kBoundRange, kX86Callback };

std::string_view ReportModeName(ReportMode mode);
std::optional<ReportMode> ReportModeFromName(std::string_view name);

struct HwasanParams {
  uint32_t shadow_offset = 0x8000;
  ReportMode mode = ReportMode::kAccessViolation;
  uint32_t callback_addr = 0;  // kX86Callback only
};

enum class HwasanVerdict : uint8_t { kValid, kBug };

// Returns the shadow byte at an address, nullopt when out of bounds.
using ShadowReader = std::function<std::optional<uint8_t>(uint32_t)>;

// Literal evaluation of the shadow check. Throws Error when a shadow byte is
// out of bounds.
HwasanVerdict HwasanOracle(uint32_t addr, uint32_t k_size, const ShadowReader& shadow,
                           uint32_t offset);

// Delay iterations that put the valid, zero-shadow check at 106 cycles.
inline constexpr uint32_t kHwasanDelayIterations = 95;
inline constexpr uint64_t kHwasanCheckCycles = 106;
inline constexpr uint64_t kAsanX86ReferenceCycles = 129;

// Hooks bound: `bound addr_reg, [size]` checks an access of `size` bytes.
std::string HwasanProgramSource(const HwasanParams& params);
UpdateFile BuildHwasanProgram(const HwasanParams& params);

// --- Instruction set randomization ----------------------------------------

enum class IsrSemantic : uint8_t { kRegMove, kMemLoad, kShl, kShr, kAdd, kXor };
inline constexpr int kIsrHandlerCount = 6;

std::string_view IsrSemanticName(IsrSemantic s);
std::optional<IsrSemantic> IsrSemanticFromName(std::string_view name);

struct IsrAssignment {
  // handler index -> semantic
  std::array<IsrSemantic, kIsrHandlerCount> handler_map = {
      IsrSemantic::kRegMove, IsrSemantic::kMemLoad, IsrSemantic::kShl,
      IsrSemantic::kShr,     IsrSemantic::kAdd,     IsrSemantic::kXor};
  Gpr base_reg = Gpr::kEax;
  uint32_t io_mask = 0;  // XORed into loaded values; 0 disables masking
  X86Mnemonic host = X86Mnemonic::kBound;

  // Throws Error unless handler_map is a bijection and the host instruction
  // takes a register and a memory operand.
  void Validate() const;
  int IndexOf(IsrSemantic s) const;

  friend bool operator==(const IsrAssignment&, const IsrAssignment&) = default;
};

// Lines `handler <i> = <semantic>`, `mask = 0x...`, `host = bound`,
// `base = <reg>`; `;` comments.
IsrAssignment ParseIsrAssignment(std::string_view text);
std::string FormatIsrAssignment(const IsrAssignment& a);

std::string IsrProgramSource(const IsrAssignment& a);
UpdateFile BuildIsrProgram(const IsrAssignment& a, const EngineState& engine);

// Rewrites supported instructions into the host instruction; everything
// else passes through unchanged. Throws AssemblyError.
std::string TranspileIsr(std::string_view program, const IsrAssignment& a,
                         const SymbolTable& symbols);

// --- Instrumentation hook -------------------------------------------------

inline constexpr uint16_t kHookFilterTriads = 2;

struct HookSpec {
  X86Mnemonic target = X86Mnemonic::kShrd;
  RegisterId filter_register = RegisterId::Temp(1);
  uint32_t filter_value = 0;
  uint32_t handler_addr = 0;
};

// Throws Error when the target is not microcoded in `engine`.
std::string HookProgramSource(const HookSpec& spec, const EngineState& engine);
UpdateFile BuildHookProgram(const HookSpec& spec, const EngineState& engine);

// Inserts `triads` nop triads in front of the ROM triad at `rom_addr`.
UpdateFile BuildDetourProgram(uint16_t rom_addr, int triads);

// --- Hook detector --------------------------------------------------------

struct HookReport {
  X86Mnemonic mnemonic = X86Mnemonic::kMov;
  int64_t baseline_cycles = 0;
  int64_t delta_cycles = 0;

  friend bool operator==(const HookReport&, const HookReport&) = default;
};

using MachineFactory = std::function<Machine()>;

// Every mnemonic with a canonical standalone form.
std::vector<X86Mnemonic> DetectorInstructions();

std::vector<HookReport> DetectHooks(const MachineFactory& factory,
                                    std::span<const uint8_t> update_bytes,
                                    std::span<const X86Mnemonic> instructions,
                                    ApplyMode mode = ApplyMode::kPlain);

// --- Attestation ----------------------------------------------------------

// wrmsr with ecx == kAttestMsr returns the MAC of edx:eax in edx:eax.
inline constexpr uint32_t kAttestMsr = 0xC0011ECE;

std::string AttestProgramSource();
UpdateFile BuildAttestProgram();

// Message bytes of a challenge (big-endian).
std::array<uint8_t, 8> ChallengeBytes(uint64_t challenge);

// Signs the attestation program with `key`, installs the key and applies the
// program as an authenticated update.
void ProvisionEnclave(Machine& machine, const TeaKey& key);

// Runs the attestation microcode. Throws EngineError on a fault (for example
// when no key is installed).
uint64_t EnclaveAttest(Machine& machine, uint64_t challenge);

}  // namespace ucode

#endif  // UCODE_DEFENSES_HPP_
