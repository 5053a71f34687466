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

#include "ucode/engine.hpp"

#include <algorithm>

#include "json.hpp"
#include "text_util.hpp"
#include "ucode/error.hpp"
#include "ucode/rtl.hpp"
#include "ucode/stock_rom.hpp"

namespace ucode {

namespace {

constexpr std::array<RegisterId, 6 + kTemporaryCount> kTracked = [] {
  std::array<RegisterId, 6 + kTemporaryCount> regs{};
  const Gpr gprs[] = {Gpr::kEax, Gpr::kEcx, Gpr::kEdx,
                      Gpr::kEbx, Gpr::kEsi, Gpr::kEdi};
  for (int i = 0; i < 6; ++i) regs[i] = RegisterId::X86(gprs[i]);
  for (int i = 0; i < kTemporaryCount; ++i) regs[6 + i] = RegisterId::Temp(i);
  return regs;
}();

bool EvalMicroCond(Cond cond, const MicroFlags& f) {
  switch (cond) {
    case Cond::kAlways: return true;
    case Cond::kZ: return f.zf;
    case Cond::kNz: return !f.zf;
    case Cond::kB: return f.cf;
    case Cond::kAe: return !f.cf;
    case Cond::kBe: return f.cf || f.zf;
    case Cond::kA: return !f.cf && !f.zf;
    case Cond::kL: return f.sf != f.of;
    case Cond::kGe: return f.sf == f.of;
    case Cond::kLe: return f.zf || f.sf != f.of;
    case Cond::kG: return !f.zf && f.sf == f.of;
    case Cond::kS: return f.sf;
    case Cond::kNs: return !f.sf;
  }
  return false;
}

bool EvalX86Cond(X86Cond cond, const HostFlags& f) {
  switch (cond) {
    case X86Cond::kE: return f.zf;
    case X86Cond::kNe: return !f.zf;
    case X86Cond::kB: return f.cf;
    case X86Cond::kAe: return !f.cf;
    case X86Cond::kBe: return f.cf || f.zf;
    case X86Cond::kA: return !f.cf && !f.zf;
    case X86Cond::kS: return f.sf;
    case X86Cond::kNs: return !f.sf;
  }
  return false;
}

uint64_t SignBit(OpSize size) { return uint64_t{1} << (SizeBits(size) - 1); }

}  // namespace

// Register file and side-effect sink for one microcode run. In scratch mode
// `host_mut` is null and stores land in `overlay`.
struct Machine::ExecContext {
  std::array<uint32_t, 8>* gpr = nullptr;
  std::array<uint64_t, kTemporaryCount>* temps = nullptr;
  MicroFlags* uflags = nullptr;
  const HostState* host = nullptr;
  HostState* host_mut = nullptr;
  std::vector<std::pair<uint32_t, uint8_t>>* overlay = nullptr;
  const std::optional<TeaKey>* key = nullptr;
  uint64_t tsc = 0;
  uint32_t next_ip = 0;
  StepOptions options;

  std::optional<uint16_t> jump;
  std::optional<Fault> fault;
  std::optional<X86Redirect> redirect;
  std::optional<std::pair<uint32_t, uint64_t>> msr_write;
  bool touched_memory = false;
  bool side_effect = false;

  uint64_t Full(RegisterId r) const {
    if (r.kind == RegKind::kX86) return (*gpr)[r.index];
    if (r.kind == RegKind::kTemp) return (*temps)[r.index];
    return 0;
  }

  uint64_t Read(RegisterId r, OpSize size) const { return Full(r) & SizeMask(size); }

  void Write(RegisterId r, OpSize size, uint64_t value) {
    value &= SizeMask(size);
    if (r.kind == RegKind::kX86) {
      uint32_t& slot = (*gpr)[r.index];
      switch (size) {
        case OpSize::kW64:
        case OpSize::kW32: slot = static_cast<uint32_t>(value); break;
        case OpSize::kW16: slot = (slot & ~0xFFFFu) | static_cast<uint32_t>(value); break;
        case OpSize::kW8: slot = (slot & ~0xFFu) | static_cast<uint32_t>(value); break;
      }
    } else if (r.kind == RegKind::kTemp) {
      uint64_t& slot = (*temps)[r.index];
      switch (size) {
        case OpSize::kW64:
        case OpSize::kW32: slot = value; break;
        case OpSize::kW16: slot = (slot & ~uint64_t{0xFFFF}) | value; break;
        case OpSize::kW8: slot = (slot & ~uint64_t{0xFF}) | value; break;
      }
    }
  }

  std::optional<uint64_t> Load(uint32_t addr, uint32_t bytes) const {
    if (!host->InBounds(addr, bytes)) return std::nullopt;
    uint64_t v = 0;
    for (uint32_t i = 0; i < bytes; ++i) {
      const uint32_t a = addr + i;
      uint8_t b = host->memory[a - host->mem_base];
      if (overlay) {
        for (const auto& [oa, ob] : *overlay) {
          if (oa == a) b = ob;
        }
      }
      v |= uint64_t{b} << (8 * i);
    }
    return v;
  }

  bool Store(uint32_t addr, uint32_t bytes, uint64_t value) {
    if (!host->InBounds(addr, bytes)) return false;
    touched_memory = true;
    if (host_mut) return host_mut->Store(addr, bytes, value);
    for (uint32_t i = 0; i < bytes; ++i) {
      overlay->emplace_back(addr + i, static_cast<uint8_t>(value >> (8 * i)));
    }
    return true;
  }

  uint64_t Uflags() const {
    uint64_t v = 0;
    if (uflags->zf) v |= kUflagZf;
    if (uflags->cf) v |= kUflagCf;
    if (uflags->sf) v |= kUflagSf;
    if (uflags->of) v |= kUflagOf;
    if (host->user_mode) v |= kUflagUserMode;
    return v;
  }

  void Execute(const MicroOp& op) {
    const OpSize size = op.size;
    const uint64_t mask = SizeMask(size);
    auto operand2 = [&]() -> uint64_t {
      return op.imm ? (*op.imm & mask) : Read(op.src2, size);
    };
    auto address = [&]() -> uint32_t {
      const uint64_t off = op.imm ? *op.imm : Full(op.src2);
      return static_cast<uint32_t>(Full(op.src1) + off);
    };
    switch (op.opcode) {
      case Opcode::kNop:
        return;
      case Opcode::kMov:
        Write(op.dst, size, op.imm ? *op.imm : Read(op.src1, size));
        return;
      case Opcode::kAdd:
        Write(op.dst, size, Read(op.src1, size) + operand2());
        return;
      case Opcode::kSub:
        Write(op.dst, size, Read(op.src1, size) - operand2());
        return;
      case Opcode::kAnd:
        Write(op.dst, size, Read(op.src1, size) & operand2());
        return;
      case Opcode::kOr:
        Write(op.dst, size, Read(op.src1, size) | operand2());
        return;
      case Opcode::kXor:
        Write(op.dst, size, Read(op.src1, size) ^ operand2());
        return;
      case Opcode::kSll:
      case Opcode::kSrl: {
        const uint64_t count = operand2() & (size == OpSize::kW64 ? 63 : 31);
        const uint64_t a = Read(op.src1, size);
        Write(op.dst, size, op.opcode == Opcode::kSll ? a << count : a >> count);
        return;
      }
      case Opcode::kCmp: {
        const uint64_t a = Read(op.src1, size);
        const uint64_t b = operand2();
        const uint64_t r = (a - b) & mask;
        const uint64_t sign = SignBit(size);
        uflags->zf = r == 0;
        uflags->cf = a < b;
        uflags->sf = (r & sign) != 0;
        uflags->of = ((a ^ b) & (a ^ r) & sign) != 0;
        return;
      }
      case Opcode::kLd: {
        const uint32_t addr = address();
        const uint32_t bytes = static_cast<uint32_t>(SizeBits(size) / 8);
        const auto v = Load(addr, bytes);
        if (!v) {
          fault = Fault{FaultKind::kAccessViolation, addr, bytes};
          return;
        }
        Write(op.dst, size, *v);
        return;
      }
      case Opcode::kSt: {
        if (options.registers_only) return;
        const uint32_t addr = address();
        const uint32_t bytes = static_cast<uint32_t>(SizeBits(size) / 8);
        if (!Store(addr, bytes, Read(op.dst, size))) {
          fault = Fault{FaultKind::kAccessViolation, addr, bytes};
        }
        return;
      }
      case Opcode::kDbg: {
        uint64_t v = 0;
        switch (static_cast<Special>(op.src1.index)) {
          case Special::kTsc: v = tsc; break;
          case Special::kNextX86Ip: v = next_ip; break;
          case Special::kUflags: v = Uflags(); break;
          case Special::kKeyLo:
          case Special::kKeyHi: {
            if (!key || !key->has_value()) {
              fault = Fault{FaultKind::kGeneralProtection, 0, 0};
              return;
            }
            const auto& w = (*key)->words;
            v = static_cast<Special>(op.src1.index) == Special::kKeyLo
                    ? (uint64_t{w[0]} << 32) | w[1]
                    : (uint64_t{w[2]} << 32) | w[3];
            break;
          }
        }
        Write(op.dst, size, v);
        return;
      }
      case Opcode::kWriteout: {
        if (options.registers_only) return;
        side_effect = true;
        const uint64_t value = Read(op.src1, size);
        if (op.dst == RegisterId::Spec(Special::kNextX86Ip)) {
          redirect = X86Redirect{(op.imm.value_or(0) & 1) != 0,
                                 static_cast<uint32_t>(value)};
          return;
        }
        const uint16_t effect = op.imm.value_or(0);
        if (effect == kEffectRaiseFault) {
          FaultKind kind = FaultKind::kInvalidOperation;
          if (value >= static_cast<uint64_t>(FaultKind::kAccessViolation) &&
              value <= static_cast<uint64_t>(FaultKind::kInvalidOperation)) {
            kind = static_cast<FaultKind>(value);
          }
          fault = Fault{kind, static_cast<uint32_t>((*temps)[0]),
                        static_cast<uint32_t>((*temps)[2])};
        } else if (effect == kEffectMsrWrite) {
          const uint64_t v = (uint64_t{(*gpr)[static_cast<size_t>(Gpr::kEdx)]} << 32) |
                             (*gpr)[static_cast<size_t>(Gpr::kEax)];
          msr_write = std::make_pair((*gpr)[static_cast<size_t>(Gpr::kEcx)], v);
        } else {
          fault = Fault{FaultKind::kInvalidOperation, 0, 0};
        }
        return;
      }
      case Opcode::kJcc:
        if (!jump && EvalMicroCond(op.cond, *uflags)) jump = *op.imm;
        return;
    }
  }
};

std::string_view FaultKindName(FaultKind kind) {
  switch (kind) {
    case FaultKind::kAccessViolation: return "access_violation";
    case FaultKind::kBoundRange: return "bound_range";
    case FaultKind::kGeneralProtection: return "general_protection";
    case FaultKind::kInvalidOperation: return "invalid_operation";
    case FaultKind::kLockup: return "lockup";
  }
  return "unknown";
}

void Changeset::Set(RegisterId reg, uint64_t value) {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), reg,
                             [](const auto& e, RegisterId r) { return e.first < r; });
  if (it != entries_.end() && it->first == reg) {
    it->second = value;
  } else {
    entries_.insert(it, {reg, value});
  }
}

std::optional<uint64_t> Changeset::Get(RegisterId reg) const {
  for (const auto& [r, v] : entries_) {
    if (r == reg) return v;
  }
  return std::nullopt;
}

std::string Changeset::ToString() const {
  std::string out = "{";
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (i) out += ", ";
    const auto view = entries_[i].first.kind == RegKind::kTemp ? OpSize::kW64 : OpSize::kW32;
    out += RegisterName(entries_[i].first, view) + ": " + text::Hex(entries_[i].second);
  }
  return out + "}";
}

std::span<const RegisterId> TrackedRegisters() { return kTracked; }

bool HostState::InBounds(uint32_t addr, uint32_t size) const {
  const uint64_t lo = addr;
  return lo >= mem_base && lo + size <= uint64_t{mem_base} + memory.size();
}

std::optional<uint64_t> HostState::Load(uint32_t addr, uint32_t size) const {
  if (!InBounds(addr, size)) return std::nullopt;
  uint64_t v = 0;
  for (uint32_t i = 0; i < size; ++i) {
    v |= uint64_t{memory[addr - mem_base + i]} << (8 * i);
  }
  return v;
}

bool HostState::Store(uint32_t addr, uint32_t size, uint64_t value) {
  if (!InBounds(addr, size)) return false;
  for (uint32_t i = 0; i < size; ++i) {
    memory[addr - mem_base + i] = static_cast<uint8_t>(value >> (8 * i));
  }
  return true;
}

CycleModel CycleModel::Default() {
  CycleModel m;
  m.hardwired_cost.fill(1);
  m.hardwired_cost[static_cast<size_t>(X86Mnemonic::kShrd)] = 2;
  m.hardwired_cost[static_cast<size_t>(X86Mnemonic::kRdtsc)] = 7;
  m.hardwired_cost[static_cast<size_t>(X86Mnemonic::kBound)] = 4;
  m.hardwired_cost[static_cast<size_t>(X86Mnemonic::kWrmsr)] = 3;
  m.hardwired_cost[static_cast<size_t>(X86Mnemonic::kCpuid)] =
      m.measurement_overhead - 7 - 1;
  return m;
}

Machine::Machine(const MachineConfig& config) : cycles_(config.cycles) {
  host_.mem_base = config.mem_base;
  host_.memory.assign(config.mem_size, 0);
  host_.reg(Gpr::kEsp) = config.mem_base + config.mem_size - 16;
  engine_.match.assign(static_cast<size_t>(std::max(config.match_registers, 0)),
                       MatchRegister{});
  engine_.installed_key = config.installed_key;
  if (config.stock_rom) InstallStockRom(engine_);
}

uint64_t Machine::ReadRegister(RegisterId reg) const {
  switch (reg.kind) {
    case RegKind::kX86: return host_.gpr[reg.index];
    case RegKind::kTemp: return engine_.temps[reg.index];
    default: throw EngineError("register is not readable");
  }
}

void Machine::WriteRegister(RegisterId reg, uint64_t value) {
  switch (reg.kind) {
    case RegKind::kX86: host_.gpr[reg.index] = static_cast<uint32_t>(value); return;
    case RegKind::kTemp: engine_.temps[reg.index] = value; return;
    default: throw EngineError("register is not writable");
  }
}

const Triad& Machine::Fetch(uint16_t addr) const {
  if (addr < kRomTriads) return engine_.rom[addr];
  if (addr < kAddressLimit) return engine_.patch_ram[addr - kPatchRamBase];
  throw EngineError("microcode address " + text::Hex(addr) + " out of range");
}

TriadOutcome Machine::ExecuteTriad(const Triad& triad, const StepOptions& options) const {
  std::array<uint32_t, 8> gpr = host_.gpr;
  std::array<uint64_t, kTemporaryCount> temps = engine_.temps;
  MicroFlags uflags = engine_.uflags;
  std::vector<std::pair<uint32_t, uint8_t>> overlay;

  ExecContext ctx;
  ctx.gpr = &gpr;
  ctx.temps = &temps;
  ctx.uflags = &uflags;
  ctx.host = &host_;
  ctx.overlay = &overlay;
  ctx.key = &engine_.installed_key;
  ctx.tsc = host_.tsc;
  ctx.next_ip = host_.eip + kX86InstructionBytes;
  ctx.options = options;
  for (const auto& op : triad.ops) {
    ctx.Execute(op);
    if (ctx.fault) break;
  }

  TriadOutcome out;
  out.fault = ctx.fault;
  out.touched_memory = ctx.touched_memory;
  out.side_effect = ctx.side_effect;
  if (ctx.jump) {
    out.transfer = ctx.jump;
  } else if (triad.seq.action == SeqAction::kBranch) {
    out.transfer = triad.seq.target;
  }
  out.completes = !ctx.jump && triad.seq.action == SeqAction::kComplete;
  for (const RegisterId r : kTracked) {
    const uint64_t before = ReadRegister(r);
    const uint64_t after = r.kind == RegKind::kX86 ? gpr[r.index] : temps[r.index];
    if (before != after) out.changeset.Set(r, after);
  }
  return out;
}

Changeset Machine::StepTriad(const Triad& triad, const StepOptions& options) const {
  auto out = ExecuteTriad(triad, options);
  if (out.fault) {
    throw EngineError("microcode fault: " + std::string(FaultKindName(out.fault->kind)) +
                      " at " + text::Hex(out.fault->addr));
  }
  return std::move(out.changeset);
}

Machine::RunOutcome Machine::Run(uint16_t entry, uint32_t budget, ExecContext& ctx,
                                 std::vector<uint16_t>* path) {
  RunOutcome out;
  uint32_t addr = entry;
  bool from_ram = false;
  while (true) {
    if (addr >= kAddressLimit) {
      out.fault = Fault{FaultKind::kInvalidOperation, addr, 0};
      break;
    }
    if (out.triads >= budget) {
      out.fault = Fault{FaultKind::kLockup, addr, 0};
      break;
    }
    if (addr < kRomTriads && !from_ram) {
      for (const auto& m : engine_.match) {
        if (m.enabled && m.rom_addr == addr) {
          addr = kPatchRamBase + m.ram_index;
          break;
        }
      }
    }
    const bool in_ram = addr >= kPatchRamBase;
    const Triad& triad = in_ram ? engine_.patch_ram[addr - kPatchRamBase]
                                : engine_.rom[addr];
    out.entered_ram |= in_ram;
    if (path) path->push_back(static_cast<uint16_t>(addr));
    ctx.jump.reset();
    for (const auto& op : triad.ops) {
      ctx.Execute(op);
      if (ctx.fault) break;
    }
    ++out.triads;
    if (ctx.fault) {
      out.fault = ctx.fault;
      break;
    }
    from_ram = in_ram;
    if (ctx.jump) {
      addr = *ctx.jump;
      continue;
    }
    if (triad.seq.action == SeqAction::kComplete) break;
    addr = triad.seq.action == SeqAction::kBranch ? triad.seq.target : addr + 1;
  }
  out.redirect = ctx.redirect;
  out.msr_write = ctx.msr_write;
  return out;
}

MicrocodeResult Machine::RunEntry(uint16_t addr, uint32_t budget,
                                  std::vector<uint16_t>* path) {
  if (addr >= kAddressLimit) {
    throw EngineError("entry address " + text::Hex(addr) + " out of range");
  }
  if (budget == 0) throw EngineError("step budget must be positive");
  std::array<uint64_t, kTracked.size()> before{};
  for (size_t i = 0; i < kTracked.size(); ++i) before[i] = ReadRegister(kTracked[i]);

  ExecContext ctx;
  ctx.gpr = &host_.gpr;
  ctx.temps = &engine_.temps;
  ctx.uflags = &engine_.uflags;
  ctx.host = &host_;
  ctx.host_mut = &host_;
  ctx.key = &engine_.installed_key;
  ctx.tsc = host_.tsc;
  ctx.next_ip = host_.eip + kX86InstructionBytes;
  const RunOutcome run = Run(addr, budget, ctx, path);

  MicrocodeResult result;
  result.triads_executed = run.triads;
  result.entered_ram = run.entered_ram;
  result.fault = run.fault;
  result.x86_redirect = run.redirect;
  if (run.msr_write && !run.fault) host_.msrs[run.msr_write->first] = run.msr_write->second;
  for (size_t i = 0; i < kTracked.size(); ++i) {
    const uint64_t after = ReadRegister(kTracked[i]);
    if (after != before[i]) result.changeset.Set(kTracked[i], after);
  }
  return result;
}

uint32_t Machine::EffectiveAddress(const MemOperand& mem) const {
  return (mem.base ? host_.reg(*mem.base) : 0) + mem.disp;
}

bool Machine::Push(uint32_t value, DispatchResult& result) {
  const uint32_t sp = host_.reg(Gpr::kEsp) - 4;
  if (!host_.Store(sp, 4, value)) {
    result.fault = Fault{FaultKind::kAccessViolation, sp, 4};
    return false;
  }
  host_.reg(Gpr::kEsp) = sp;
  return true;
}

void Machine::ExecuteHardwired(const X86Instruction& in, DispatchResult& result) {
  const uint32_t next = host_.eip + kX86InstructionBytes;
  auto fault = [&](FaultKind kind, uint32_t addr, uint32_t size) {
    result.fault = Fault{kind, addr, size};
  };
  auto read = [&](const X86Operand& op, uint32_t& out) -> bool {
    switch (op.kind) {
      case X86Operand::Kind::kReg: out = host_.reg(op.reg); return true;
      case X86Operand::Kind::kImm: out = op.imm; return true;
      case X86Operand::Kind::kMem: {
        const uint32_t ea = EffectiveAddress(op.mem);
        const auto v = host_.Load(ea, 4);
        if (!v) {
          fault(FaultKind::kAccessViolation, ea, 4);
          return false;
        }
        out = static_cast<uint32_t>(*v);
        return true;
      }
      case X86Operand::Kind::kNone: break;
    }
    out = 0;
    return true;
  };
  auto write = [&](const X86Operand& op, uint32_t value) -> bool {
    if (op.is_reg()) {
      host_.reg(op.reg) = value;
      return true;
    }
    const uint32_t ea = EffectiveAddress(op.mem);
    if (!host_.Store(ea, 4, value)) {
      fault(FaultKind::kAccessViolation, ea, 4);
      return false;
    }
    return true;
  };
  auto set_zs = [&](uint32_t r) {
    host_.flags.zf = r == 0;
    host_.flags.sf = (r >> 31) != 0;
  };

  uint32_t a = 0, b = 0;
  switch (in.mnemonic) {
    case X86Mnemonic::kMov:
      if (!read(in.ops[1], b) || !write(in.ops[0], b)) return;
      break;
    case X86Mnemonic::kAdd:
    case X86Mnemonic::kSub:
    case X86Mnemonic::kAnd:
    case X86Mnemonic::kOr:
    case X86Mnemonic::kXor:
    case X86Mnemonic::kCmp: {
      if (!read(in.ops[0], a) || !read(in.ops[1], b)) return;
      uint32_t r = 0;
      switch (in.mnemonic) {
        case X86Mnemonic::kAdd: r = a + b; host_.flags.cf = r < a; break;
        case X86Mnemonic::kSub:
        case X86Mnemonic::kCmp: r = a - b; host_.flags.cf = a < b; break;
        case X86Mnemonic::kAnd: r = a & b; host_.flags.cf = false; break;
        case X86Mnemonic::kOr: r = a | b; host_.flags.cf = false; break;
        default: r = a ^ b; host_.flags.cf = false; break;
      }
      set_zs(r);
      if (in.mnemonic != X86Mnemonic::kCmp && !write(in.ops[0], r)) return;
      break;
    }
    case X86Mnemonic::kShl:
    case X86Mnemonic::kShr: {
      a = host_.reg(in.ops[0].reg);
      read(in.ops[1], b);
      const uint32_t count = b & 31;
      if (count == 0) break;
      uint32_t r;
      if (in.mnemonic == X86Mnemonic::kShl) {
        host_.flags.cf = ((a >> (32 - count)) & 1) != 0;
        r = a << count;
      } else {
        host_.flags.cf = ((a >> (count - 1)) & 1) != 0;
        r = a >> count;
      }
      set_zs(r);
      host_.reg(in.ops[0].reg) = r;
      break;
    }
    case X86Mnemonic::kShrd: {
      a = host_.reg(in.ops[0].reg);
      b = host_.reg(in.ops[1].reg);
      const uint32_t count = in.ops[2].imm & 31;
      if (count == 0) break;
      const uint64_t wide = (uint64_t{b} << 32) | a;
      const uint32_t r = static_cast<uint32_t>(wide >> count);
      host_.flags.cf = ((a >> (count - 1)) & 1) != 0;
      set_zs(r);
      host_.reg(in.ops[0].reg) = r;
      break;
    }
    case X86Mnemonic::kJcc:
      if (EvalX86Cond(in.cond, host_.flags)) {
        host_.eip = in.ops[0].imm;
        return;
      }
      break;
    case X86Mnemonic::kJmp:
      host_.eip = in.ops[0].imm;
      return;
    case X86Mnemonic::kCall:
      if (!Push(next, result)) return;
      host_.eip = in.ops[0].imm;
      return;
    case X86Mnemonic::kRet: {
      const uint32_t sp = host_.reg(Gpr::kEsp);
      const auto v = host_.Load(sp, 4);
      if (!v) return fault(FaultKind::kAccessViolation, sp, 4);
      host_.reg(Gpr::kEsp) = sp + 4;
      host_.eip = static_cast<uint32_t>(*v);
      return;
    }
    case X86Mnemonic::kPush:
      read(in.ops[0], a);
      if (!Push(a, result)) return;
      break;
    case X86Mnemonic::kPop: {
      const uint32_t sp = host_.reg(Gpr::kEsp);
      const auto v = host_.Load(sp, 4);
      if (!v) return fault(FaultKind::kAccessViolation, sp, 4);
      host_.reg(Gpr::kEsp) = sp + 4;
      host_.reg(in.ops[0].reg) = static_cast<uint32_t>(*v);
      break;
    }
    case X86Mnemonic::kBound: {
      const uint32_t ea = EffectiveAddress(in.ops[1].mem);
      const auto lo = host_.Load(ea, 4);
      const auto hi = host_.Load(ea + 4, 4);
      if (!lo || !hi) return fault(FaultKind::kAccessViolation, ea, 8);
      const auto v = static_cast<int32_t>(host_.reg(in.ops[0].reg));
      if (v < static_cast<int32_t>(*lo) || v > static_cast<int32_t>(*hi)) {
        return fault(FaultKind::kBoundRange, static_cast<uint32_t>(v), in.ops[1].mem.disp);
      }
      break;
    }
    case X86Mnemonic::kRdtsc:
      host_.reg(Gpr::kEax) = static_cast<uint32_t>(host_.tsc);
      host_.reg(Gpr::kEdx) = static_cast<uint32_t>(host_.tsc >> 32);
      break;
    case X86Mnemonic::kWrmsr: {
      if (host_.user_mode) return fault(FaultKind::kGeneralProtection, 0, 0);
      const uint32_t msr = host_.reg(Gpr::kEcx);
      const uint64_t v = (uint64_t{host_.reg(Gpr::kEdx)} << 32) | host_.reg(Gpr::kEax);
      host_.msrs[msr] = v;
      if (msr_hook_) {
        const auto hook = msr_hook_(*this, msr, v);
        result.cycles += hook.extra_cycles;
        if (hook.fault) return fault(hook.fault->kind, hook.fault->addr, hook.fault->size);
      }
      break;
    }
    case X86Mnemonic::kCpuid: {
      const uint32_t leaf = host_.reg(Gpr::kEax);
      uint32_t ra = 0, rb = 0, rc = 0, rd = 0;
      if (leaf == 0) {
        ra = 1;
        rb = 0x68747541;  // "Auth"
        rd = 0x69746E65;  // "enti"
        rc = 0x444D4163;  // "cAMD"
      } else if (leaf == 1) {
        ra = 0x00020FC2;
      }
      host_.reg(Gpr::kEax) = ra;
      host_.reg(Gpr::kEbx) = rb;
      host_.reg(Gpr::kEcx) = rc;
      host_.reg(Gpr::kEdx) = rd;
      break;
    }
    case X86Mnemonic::kXchg:
      std::swap(host_.reg(in.ops[0].reg), host_.reg(in.ops[1].reg));
      break;
    case X86Mnemonic::kHlt:
      break;
  }
  host_.eip = next;
}

DispatchResult Machine::Dispatch(const X86Instruction& instr) {
  DispatchResult result;
  const EntryPoint& entry = engine_.entry(instr.mnemonic);
  if (!entry.microcoded) {
    ExecuteHardwired(instr, result);
    result.cycles += cycles_.Hardwired(instr.mnemonic);
    host_.tsc += result.cycles;
    return result;
  }

  // Operand marshalling.
  const auto& op0 = instr.ops[0];
  const auto& op1 = instr.ops[1];
  const auto& op2 = instr.ops[2];
  if (op0.is_reg()) engine_.temp(0) = host_.reg(op0.reg);
  if (op1.is_reg()) {
    engine_.temp(1) = host_.reg(op1.reg);
  } else if (op1.is_mem()) {
    engine_.temp(1) = op1.mem.base ? host_.reg(*op1.mem.base) : 0;
    engine_.temp(2) = op1.mem.disp;
  } else if (op1.is_imm()) {
    engine_.temp(2) = op1.imm;
  }
  if (op2.is_imm()) {
    engine_.temp(2) = instr.mnemonic == X86Mnemonic::kShrd ? (op2.imm & 31) : op2.imm;
  } else if (op2.is_reg()) {
    engine_.temp(2) = host_.reg(op2.reg);
  }

  ExecContext ctx;
  ctx.gpr = &host_.gpr;
  ctx.temps = &engine_.temps;
  ctx.uflags = &engine_.uflags;
  ctx.host = &host_;
  ctx.host_mut = &host_;
  ctx.key = &engine_.installed_key;
  ctx.tsc = host_.tsc;
  ctx.next_ip = host_.eip + kX86InstructionBytes;
  const RunOutcome run = Run(entry.addr, budget_, ctx, nullptr);

  result.microcoded = true;
  result.triads = run.triads;
  result.entered_ram = run.entered_ram;
  result.cycles = cycles_.dispatch_cost + uint64_t{cycles_.per_triad_cost} * run.triads +
                  (run.entered_ram ? cycles_.ram_switch_penalty : 0);
  if (run.fault) {
    result.fault = run.fault;
  } else if (run.redirect) {
    result.redirect = run.redirect;
    if (!run.redirect->push_ip || Push(ctx.next_ip, result)) {
      host_.eip = run.redirect->target;
    }
  } else {
    if (op0.is_reg()) host_.reg(op0.reg) = static_cast<uint32_t>(engine_.temp(0));
    host_.eip = ctx.next_ip;
    if (run.msr_write) {
      host_.msrs[run.msr_write->first] = run.msr_write->second;
      if (msr_hook_) {
        const auto hook = msr_hook_(*this, run.msr_write->first, run.msr_write->second);
        result.cycles += hook.extra_cycles;
        result.fault = hook.fault;
      }
    }
  }
  host_.tsc += result.cycles;
  return result;
}

ProgramResult Machine::RunProgram(const X86Program& program, uint64_t max_steps) {
  ProgramResult result;
  host_.eip = program.base;
  for (uint64_t step = 0;; ++step) {
    const uint32_t eip = host_.eip;
    if (eip < program.base || (eip - program.base) % kX86InstructionBytes != 0) break;
    const size_t index = (eip - program.base) / kX86InstructionBytes;
    if (index >= program.code.size()) break;
    const X86Instruction& instr = program.code[index];
    if (instr.mnemonic == X86Mnemonic::kHlt) {
      result.halted = true;
      break;
    }
    if (step >= max_steps) {
      result.fault = Fault{FaultKind::kLockup, eip, 0};
      break;
    }
    TraceEntry entry;
    entry.addr = eip;
    entry.text = FormatX86(instr);
    entry.tsc_before = host_.tsc;
    const DispatchResult d = Dispatch(instr);
    entry.cycles = d.cycles;
    entry.ucode_triads = d.triads;
    entry.entered_ram = d.entered_ram;
    entry.fault = d.fault;
    entry.redirect = d.redirect;
    result.total_cycles += d.cycles;
    result.trace.push_back(std::move(entry));
    if (d.fault) {
      result.fault = d.fault;
      break;
    }
  }
  return result;
}

namespace {

X86Program Harness(const std::optional<X86Instruction>& measured) {
  X86Program p;
  auto add = [&](std::string_view line) { p.code.push_back(ParseX86Instruction(line)); };
  add("xor eax, eax");
  add("xor edi, edi");
  add("cpuid");
  add("rdtsc");
  add("xchg edi, eax");
  if (measured) p.code.push_back(*measured);
  add("cpuid");
  add("rdtsc");
  add("sub eax, edi");
  return p;
}

}  // namespace

MeasureResult Machine::MeasureInstruction(const X86Instruction& instr) const {
  constexpr size_t kFirstRead = 3;
  constexpr size_t kMeasured = 5;
  MeasureResult m;

  Machine empty = *this;
  const auto base = empty.RunProgram(Harness(std::nullopt));
  if (base.fault || base.trace.size() != 8) {
    throw EngineError("measurement harness failed on this machine");
  }
  m.harness_overhead = base.trace[6].tsc_before - base.trace[kFirstRead].tsc_before;

  Machine copy = *this;
  const auto run = copy.RunProgram(Harness(instr));
  if (run.trace.size() > kMeasured) {
    m.fault = run.trace[kMeasured].fault;
    m.redirected = run.trace[kMeasured].redirect.has_value();
  }
  if (run.fault || run.trace.size() != 9) {
    // The harness did not complete; report the dispatch cost directly.
    if (run.trace.size() <= kMeasured) {
      throw EngineError("measurement harness failed before the measured instruction");
    }
    m.cycles = run.trace[kMeasured].cycles;
    m.raw_delta = m.cycles + m.harness_overhead;
    return m;
  }
  m.raw_delta = run.trace[7].tsc_before - run.trace[kFirstRead].tsc_before;
  m.cycles = m.raw_delta - m.harness_overhead;
  return m;
}

X86Instruction CanonicalInstruction(X86Mnemonic m) {
  switch (m) {
    case X86Mnemonic::kMov: return ParseX86Instruction("mov ebx, 1");
    case X86Mnemonic::kAdd: return ParseX86Instruction("add ebx, ecx");
    case X86Mnemonic::kSub: return ParseX86Instruction("sub ebx, ecx");
    case X86Mnemonic::kAnd: return ParseX86Instruction("and ebx, ecx");
    case X86Mnemonic::kOr: return ParseX86Instruction("or ebx, ecx");
    case X86Mnemonic::kXor: return ParseX86Instruction("xor ebx, ecx");
    case X86Mnemonic::kShl: return ParseX86Instruction("shl ebx, 1");
    case X86Mnemonic::kShr: return ParseX86Instruction("shr ebx, 1");
    case X86Mnemonic::kShrd: return ParseX86Instruction("shrd ebp, ecx, 4");
    case X86Mnemonic::kCmp: return ParseX86Instruction("cmp ebx, ecx");
    case X86Mnemonic::kPush: return ParseX86Instruction("push ebx");
    case X86Mnemonic::kPop: return ParseX86Instruction("pop ebx");
    case X86Mnemonic::kBound: return ParseX86Instruction("bound eax, [0x4]");
    case X86Mnemonic::kRdtsc: return ParseX86Instruction("rdtsc");
    case X86Mnemonic::kWrmsr: return ParseX86Instruction("wrmsr");
    case X86Mnemonic::kCpuid: return ParseX86Instruction("cpuid");
    case X86Mnemonic::kXchg: return ParseX86Instruction("xchg ebx, ecx");
    default: break;
  }
  throw EngineError("no canonical form for '" + std::string(MnemonicName(m)) + "'");
}

std::string FormatTraceText(std::span<const TraceEntry> trace) {
  std::string out;
  for (const auto& e : trace) {
    std::string flags = e.ucode_triads ? "ucode" : "hw";
    if (e.entered_ram) flags += ",ram";
    if (e.redirect) flags += ",redirect=" + text::Hex(e.redirect->target);
    if (e.fault) flags += ",fault=" + std::string(FaultKindName(e.fault->kind));
    char addr[16];
    std::snprintf(addr, sizeof(addr), "0x%08x", e.addr);
    out += std::string(addr) + " | " + e.text + " | " + std::to_string(e.cycles) +
           " | " + std::to_string(e.ucode_triads) + " | " + flags + "\n";
  }
  return out;
}

std::string FormatTraceJson(std::span<const TraceEntry> trace) {
  std::string out;
  for (const auto& e : trace) {
    nlohmann::json j;
    j["addr"] = e.addr;
    j["mnemonic"] = e.text;
    j["tsc"] = e.tsc_before;
    j["cycles"] = e.cycles;
    j["ucode_triads"] = e.ucode_triads;
    j["entered_ram"] = e.entered_ram;
    if (e.redirect) {
      j["redirect"] = {{"push_ip", e.redirect->push_ip}, {"target", e.redirect->target}};
    }
    if (e.fault) {
      j["fault"] = {{"kind", FaultKindName(e.fault->kind)},
                    {"addr", e.fault->addr},
                    {"size", e.fault->size}};
    }
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace ucode
