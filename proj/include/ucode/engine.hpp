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

// Microcode engine emulator coupled to an x86-subset host.
//
// A Machine owns one engine (temporaries, ROM, patch RAM, match registers,
// entry table) and one host (GPRs, flags, flat memory, TSC, MSRs). Microcoded
// x86 instructions are marshalled into temporaries (first operand t0, second
// operand or memory base t1, immediate or displacement t2), run from their
// entry point, and t0 is committed back to a register first operand when the
// microcode completes without a fault or redirect.
//
// Match registers are consulted for every ROM fetch except transfers that
// leave patch RAM, so a patch can resume the ROM routine it intercepted.

#ifndef UCODE_ENGINE_HPP_
#define UCODE_ENGINE_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ucode/isa.hpp"
#include "ucode/tea.hpp"
#include "ucode/x86.hpp"

namespace ucode {

enum class FaultKind : uint8_t {
  kAccessViolation = 1,
  kBoundRange = 2,
  kGeneralProtection = 3,
  kInvalidOperation = 4,
  kLockup = 5,
};

std::string_view FaultKindName(FaultKind kind);

struct Fault {
  FaultKind kind = FaultKind::kInvalidOperation;
  uint32_t addr = 0;
  uint32_t size = 0;

  friend bool operator==(const Fault&, const Fault&) = default;
};

struct X86Redirect {
  bool push_ip = false;
  uint32_t target = 0;

  friend bool operator==(const X86Redirect&, const X86Redirect&) = default;
};

// Registers whose value differs after execution, ordered by register id.
class Changeset {
 public:
  void Set(RegisterId reg, uint64_t value);
  std::optional<uint64_t> Get(RegisterId reg) const;
  bool empty() const { return entries_.empty(); }
  size_t size() const { return entries_.size(); }
  const std::vector<std::pair<RegisterId, uint64_t>>& entries() const {
    return entries_;
  }
  std::string ToString() const;

  friend auto operator<=>(const Changeset&, const Changeset&) = default;

 private:
  std::vector<std::pair<RegisterId, uint64_t>> entries_;
};

// The six microcode-visible GPRs followed by t0..t21.
std::span<const RegisterId> TrackedRegisters();

struct HostFlags {
  bool zf = false;
  bool cf = false;
  bool sf = false;

  friend bool operator==(const HostFlags&, const HostFlags&) = default;
};

struct HostState {
  std::array<uint32_t, 8> gpr{};
  uint32_t eip = kDefaultCodeBase;
  HostFlags flags;
  uint32_t mem_base = 0;
  std::vector<uint8_t> memory;
  uint64_t tsc = 0;
  bool user_mode = false;
  std::map<uint32_t, uint64_t> msrs;

  uint32_t& reg(Gpr g) { return gpr[static_cast<size_t>(g)]; }
  uint32_t reg(Gpr g) const { return gpr[static_cast<size_t>(g)]; }

  bool InBounds(uint32_t addr, uint32_t size) const;
  // Little-endian access; nullopt / false when out of bounds.
  std::optional<uint64_t> Load(uint32_t addr, uint32_t size) const;
  bool Store(uint32_t addr, uint32_t size, uint64_t value);

  friend bool operator==(const HostState&, const HostState&) = default;
};

struct MicroFlags {
  bool zf = false;
  bool cf = false;
  bool sf = false;
  bool of = false;

  friend bool operator==(const MicroFlags&, const MicroFlags&) = default;
};

struct MatchRegister {
  uint16_t rom_addr = 0;
  uint8_t ram_index = 0;
  bool enabled = false;

  friend bool operator==(const MatchRegister&, const MatchRegister&) = default;
};

struct EntryPoint {
  bool microcoded = false;
  uint16_t addr = 0;

  friend bool operator==(const EntryPoint&, const EntryPoint&) = default;
};

struct EngineState {
  std::array<uint64_t, kTemporaryCount> temps{};
  std::vector<Triad> rom = std::vector<Triad>(kRomTriads);
  std::array<Triad, kPatchRamTriads> patch_ram{};
  std::vector<MatchRegister> match;
  std::array<EntryPoint, kX86MnemonicCount> entry_table{};
  MicroFlags uflags;
  std::optional<TeaKey> installed_key;

  uint64_t& temp(int i) { return temps[static_cast<size_t>(i)]; }
  const EntryPoint& entry(X86Mnemonic m) const {
    return entry_table[static_cast<size_t>(m)];
  }

  friend bool operator==(const EngineState&, const EngineState&) = default;
};

struct CycleModel {
  std::array<uint32_t, kX86MnemonicCount> hardwired_cost{};
  uint32_t dispatch_cost = 1;
  uint32_t per_triad_cost = 1;
  uint32_t ram_switch_penalty = 4;
  // Cycles the serialize/read-TSC harness adds around a measured instruction
  // on the stock engine: rdtsc (7) + xchg (1) + cpuid. The default cpuid cost
  // is derived from this value.
  uint32_t measurement_overhead = 65;

  static CycleModel Default();
  uint32_t Hardwired(X86Mnemonic m) const {
    return hardwired_cost[static_cast<size_t>(m)];
  }
};

// UFLAGS bit layout as read by `dbg`.
inline constexpr uint64_t kUflagZf = 1u << 0;
inline constexpr uint64_t kUflagCf = 1u << 1;
inline constexpr uint64_t kUflagSf = 1u << 2;
inline constexpr uint64_t kUflagOf = 1u << 3;
inline constexpr uint64_t kUflagUserMode = 1u << 8;

// Immediate selector of `writeout UFLAGS, src, imm`.
inline constexpr uint16_t kEffectRaiseFault = 0;
inline constexpr uint16_t kEffectMsrWrite = 1;

inline constexpr uint32_t kDefaultStepBudget = 4096;
inline constexpr int kDefaultMatchRegisters = 4;

struct MicrocodeResult {
  Changeset changeset;
  uint32_t triads_executed = 0;
  bool entered_ram = false;
  std::optional<Fault> fault;
  std::optional<X86Redirect> x86_redirect;
};

struct StepOptions {
  // Treat st and writeout as no-ops so only visible register effects count.
  bool registers_only = false;
};

// Result of executing one triad against scratch state.
struct TriadOutcome {
  Changeset changeset;
  std::optional<Fault> fault;
  // Address the triad transfers to (jcc or branch), if any.
  std::optional<uint16_t> transfer;
  bool completes = false;
  bool touched_memory = false;
  bool side_effect = false;  // writeout requested a redirect, fault or MSR write
};

struct DispatchResult {
  uint64_t cycles = 0;
  uint32_t triads = 0;
  bool microcoded = false;
  bool entered_ram = false;
  std::optional<Fault> fault;
  std::optional<X86Redirect> redirect;
};

struct TraceEntry {
  uint32_t addr = 0;
  std::string text;
  uint64_t tsc_before = 0;
  uint64_t cycles = 0;
  uint32_t ucode_triads = 0;
  bool entered_ram = false;
  std::optional<Fault> fault;
  std::optional<X86Redirect> redirect;
};

struct ProgramResult {
  std::vector<TraceEntry> trace;
  uint64_t total_cycles = 0;
  std::optional<Fault> fault;
  bool halted = false;  // reached hlt (as opposed to falling off the end)
};

std::string FormatTraceText(std::span<const TraceEntry> trace);
// One JSON object per line.
std::string FormatTraceJson(std::span<const TraceEntry> trace);

struct MeasureResult {
  uint64_t cycles = 0;
  uint64_t raw_delta = 0;
  uint64_t harness_overhead = 0;
  std::optional<Fault> fault;
  bool redirected = false;
};

class Machine;

// Invoked after a microcoded MSR write. Returns extra cycles to charge, or a
// fault to report.
struct MsrHookResult {
  uint64_t extra_cycles = 0;
  std::optional<Fault> fault;
};
using MsrWriteHook = std::function<MsrHookResult(Machine&, uint32_t msr, uint64_t value)>;

struct MachineConfig {
  uint32_t mem_base = 0;
  uint32_t mem_size = 64 * 1024;
  int match_registers = kDefaultMatchRegisters;
  bool stock_rom = true;
  std::optional<TeaKey> installed_key;
  CycleModel cycles = CycleModel::Default();
};

class Machine {
 public:
  explicit Machine(const MachineConfig& config = {});

  EngineState& engine() { return engine_; }
  const EngineState& engine() const { return engine_; }
  HostState& host() { return host_; }
  const HostState& host() const { return host_; }
  CycleModel& cycle_model() { return cycles_; }
  const CycleModel& cycle_model() const { return cycles_; }

  void set_msr_write_hook(MsrWriteHook hook) { msr_hook_ = std::move(hook); }

  uint64_t ReadRegister(RegisterId reg) const;
  void WriteRegister(RegisterId reg, uint64_t value);

  // Executes one triad against a scratch copy of the registers; the machine
  // is not modified.
  TriadOutcome ExecuteTriad(const Triad& triad, const StepOptions& options = {}) const;
  // Throws EngineError when the triad faults.
  Changeset StepTriad(const Triad& triad, const StepOptions& options = {}) const;

  const Triad& Fetch(uint16_t addr) const;

  // Runs microcode from `addr` until a completing triad, a fault, or the
  // budget is exhausted (reported as a kLockup fault). Mutates the machine.
  // `path`, when given, receives the address of every executed triad.
  MicrocodeResult RunEntry(uint16_t addr, uint32_t budget = kDefaultStepBudget,
                           std::vector<uint16_t>* path = nullptr);

  DispatchResult Dispatch(const X86Instruction& instr);
  ProgramResult RunProgram(const X86Program& program, uint64_t max_steps = 1'000'000);

  // Times `instr` with the serialize/rdtsc harness on a copy of this machine
  // and subtracts the harness overhead measured on the same copy.
  MeasureResult MeasureInstruction(const X86Instruction& instr) const;

 private:
  struct ExecContext;
  struct RunOutcome {
    uint32_t triads = 0;
    bool entered_ram = false;
    std::optional<Fault> fault;
    std::optional<X86Redirect> redirect;
    std::optional<std::pair<uint32_t, uint64_t>> msr_write;
  };

  RunOutcome Run(uint16_t entry, uint32_t budget, ExecContext& ctx,
                 std::vector<uint16_t>* path);
  void ExecuteHardwired(const X86Instruction& instr, DispatchResult& result);
  uint32_t EffectiveAddress(const MemOperand& mem) const;
  bool Push(uint32_t value, DispatchResult& result);

  EngineState engine_;
  HostState host_;
  CycleModel cycles_;
  MsrWriteHook msr_hook_;
  uint32_t budget_ = kDefaultStepBudget;
};

// Canonical operand forms used by benchmarks and the hook detector. Throws
// EngineError for control-flow mnemonics, which have no standalone form.
X86Instruction CanonicalInstruction(X86Mnemonic m);

}  // namespace ucode

#endif  // UCODE_ENGINE_HPP_
