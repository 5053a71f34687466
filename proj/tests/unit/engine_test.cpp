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

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "random_ops.hpp"
#include "ucode/engine.hpp"
#include "ucode/error.hpp"
#include "ucode/rtl.hpp"
#include "ucode/stock_rom.hpp"
#include "ucode/x86.hpp"

namespace ucode {
namespace {

X86Instruction I(const char* text) { return ParseX86Instruction(text); }

Triad T(const char* rtl) { return Assemble(rtl)[0]; }

TEST(ExecuteTriad, MaskConstruction) {
  Machine m;
  const auto out = m.ExecuteTriad(T("mov t1d, 0xffff\nsll t1d, t1d, 16\nor t1d, t1d, 0xff00\n"));
  EXPECT_FALSE(out.fault);
  ASSERT_EQ(out.changeset.size(), 1u);
  EXPECT_EQ(out.changeset.Get(RegisterId::Temp(1)), 0xFFFFFF00u);
}

TEST(ExecuteTriad, EmptyChangesets) {
  Machine m;
  m.engine().temp(2) = 9;
  EXPECT_TRUE(m.ExecuteTriad(Triad{}).changeset.empty());
  EXPECT_TRUE(m.ExecuteTriad(T("add t2d, t2d, 0\nadd t2d, t2d, 0\n")).changeset.empty());
}

TEST(ExecuteTriad, DoesNotMutateMachine) {
  Machine m;
  const Machine before = m;
  m.ExecuteTriad(T("mov eax, 5\nst [t1d], eax\n"));
  EXPECT_EQ(m.host(), before.host());
  EXPECT_EQ(m.engine(), before.engine());
}

TEST(ExecuteTriad, SizedViews) {
  Machine m;
  m.engine().temp(1) = 0x1122334455667788ull;
  auto cs = m.ExecuteTriad(T("mov t1w, 0xabcd\n")).changeset;
  EXPECT_EQ(cs.Get(RegisterId::Temp(1)), 0x112233445566ABCDull);
  cs = m.ExecuteTriad(T("add t1d, t1d, 1\n")).changeset;
  EXPECT_EQ(cs.Get(RegisterId::Temp(1)), 0x55667789ull);
}

TEST(RunEntry, CompletingTriad) {
  MachineConfig cfg;
  cfg.stock_rom = false;
  Machine m(cfg);
  m.engine().rom[0x10] = Assemble(".sw_complete\nadd t1d, t1d, 1\n")[0];
  const auto r = m.RunEntry(0x10);
  EXPECT_EQ(r.triads_executed, 1u);
  EXPECT_EQ(r.changeset.Get(RegisterId::Temp(1)), 1u);
}

TEST(RunEntry, MatchRegisterRedirectsToPatchRam) {
  Machine m;
  m.engine().patch_ram[0] = Assemble(".sw_complete\nmov t5d, 0x77\n")[0];
  m.engine().match[0] = {kRdtscEntry, 0, true};
  std::vector<uint16_t> path;
  const auto r = m.RunEntry(kRdtscEntry, kDefaultStepBudget, &path);
  EXPECT_TRUE(r.entered_ram);
  EXPECT_EQ(path, std::vector<uint16_t>{kPatchRamBase});
  EXPECT_EQ(r.changeset.Get(RegisterId::Temp(5)), 0x77u);
}

TEST(RunEntry, EndlessLoopLocksUp) {
  MachineConfig cfg;
  cfg.stock_rom = false;
  Machine m(cfg);
  m.engine().rom[0x40] = Assemble("x:\n.sw_branch x\nnop\n", 0x40)[0];
  const auto r = m.RunEntry(0x40, 64);
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->kind, FaultKind::kLockup);
  EXPECT_EQ(r.triads_executed, 64u);
}

TEST(RunEntry, ChainingEqualsFoldOfSteps) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    MachineConfig cfg;
    cfg.stock_rom = false;
    Machine m(cfg);
    const auto prog = ucode_test::RandomChainProgram(rng, 0x100, 2 + static_cast<int>(rng() % 8));
    std::copy(prog.begin(), prog.end(), m.engine().rom.begin() + 0x100);
    for (const auto reg : TrackedRegisters()) m.WriteRegister(reg, rng());
    Machine folded = m;
    std::vector<uint16_t> path;
    const auto r = m.RunEntry(0x100, kDefaultStepBudget, &path);
    ASSERT_FALSE(r.fault);
    const Machine start = folded;
    for (uint16_t a : path) {
      const Changeset step = folded.StepTriad(folded.Fetch(a));
      for (const auto& [reg, v] : step.entries()) folded.WriteRegister(reg, v);
    }
    Changeset fold;
    for (const auto reg : TrackedRegisters()) {
      if (folded.ReadRegister(reg) != start.ReadRegister(reg)) {
        fold.Set(reg, folded.ReadRegister(reg));
      }
    }
    ASSERT_EQ(fold, r.changeset) << Disassemble(prog);
  }
}

TEST(Dispatch, HardwiredCosts) {
  Machine m;
  m.host().reg(Gpr::kEax) = 5;
  const auto r = m.Dispatch(I("xor eax, eax"));
  EXPECT_EQ(m.host().reg(Gpr::kEax), 0u);
  EXPECT_EQ(r.cycles, 1u);
  EXPECT_FALSE(r.microcoded);
  EXPECT_EQ(m.Dispatch(I("mov eax, 1")).cycles, 1u);
}

TEST(Dispatch, StockShrd) {
  Machine m;
  m.host().reg(Gpr::kEbp) = 0x12345678;
  m.host().reg(Gpr::kEcx) = 0xABCDEF01;
  const auto r = m.Dispatch(I("shrd ebp, ecx, 4"));
  EXPECT_TRUE(r.microcoded);
  EXPECT_EQ(r.cycles, 2u);
  EXPECT_EQ(m.host().reg(Gpr::kEbp), ucode_test::RefShrd(0x12345678, 0xABCDEF01, 4));
}

TEST(Dispatch, StockRdtsc) {
  Machine m;
  m.host().tsc = 0x0000000512345678ull;
  const auto r = m.Dispatch(I("rdtsc"));
  EXPECT_EQ(r.cycles, 7u);
  EXPECT_EQ(m.host().reg(Gpr::kEax), 0x12345678u);
  EXPECT_EQ(m.host().reg(Gpr::kEdx), 5u);
}

// Direct x86 semantics vs the stock microcode routines.
TEST(Dispatch, StockRoutinesMatchOracles) {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 2000; ++i) {
    Machine m;
    for (auto& g : m.host().gpr) g = static_cast<uint32_t>(rng());
    m.host().reg(Gpr::kEsp) = m.host().mem_base + 0x8000;
    const uint32_t dst = m.host().reg(Gpr::kEsi), src = m.host().reg(Gpr::kEdi);
    const auto count = static_cast<uint8_t>(rng());
    X86Instruction shrd = I("shrd esi, edi, 0");
    shrd.ops[2].imm = count;
    ASSERT_FALSE(m.Dispatch(shrd).fault);
    ASSERT_EQ(m.host().reg(Gpr::kEsi), ucode_test::RefShrd(dst, src, count));

    const uint32_t lo = static_cast<uint32_t>(rng() % 200) - 100;
    const uint32_t hi = lo + static_cast<uint32_t>(rng() % 200);
    const uint32_t v = static_cast<uint32_t>(rng() % 400) - 200;
    m.host().Store(0x100, 4, lo);
    m.host().Store(0x104, 4, hi);
    m.host().reg(Gpr::kEbx) = v;
    m.host().reg(Gpr::kEcx) = 0x80;
    const auto gpr = m.host().gpr;
    const auto b = m.Dispatch(I("bound ebx, [ecx + 0x80]"));
    ASSERT_EQ(!b.fault, ucode_test::RefBoundInRange(v, lo, hi));
    if (b.fault) ASSERT_EQ(b.fault->kind, FaultKind::kBoundRange);
    ASSERT_EQ(m.host().gpr, gpr);

    m.host().tsc = rng();
    const auto [eax, edx] = ucode_test::RefRdtsc(m.host().tsc);
    m.Dispatch(I("rdtsc"));
    ASSERT_EQ(m.host().reg(Gpr::kEax), eax);
    ASSERT_EQ(m.host().reg(Gpr::kEdx), edx);

    m.host().reg(Gpr::kEcx) = static_cast<uint32_t>(rng());
    ASSERT_FALSE(m.Dispatch(I("wrmsr")).fault);
    ASSERT_EQ(m.host().msrs.at(m.host().reg(Gpr::kEcx)), ucode_test::RefWrmsrValue(edx, eax));
  }
}

TEST(Dispatch, WrmsrFromUserModeFaults) {
  Machine m;
  m.host().user_mode = true;
  const auto r = m.Dispatch(I("wrmsr"));
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->kind, FaultKind::kGeneralProtection);
  EXPECT_TRUE(m.host().msrs.empty());
}

TEST(Dispatch, BoundOutsideMemoryFaults) {
  Machine m;
  const auto r = m.Dispatch(I("bound eax, [0xfffffff0]"));
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->kind, FaultKind::kAccessViolation);
}

TEST(Measure, StockCycleCounts) {
  const Machine m;
  EXPECT_EQ(m.MeasureInstruction(I("shrd ebp, ecx, 4")).cycles, 2u);
  EXPECT_EQ(m.MeasureInstruction(I("rdtsc")).cycles, 7u);
  EXPECT_EQ(m.MeasureInstruction(I("mov eax, 1")).cycles, 1u);
  const auto r = m.MeasureInstruction(I("shrd ebp, ecx, 4"));
  EXPECT_EQ(r.harness_overhead, 65u);
  EXPECT_EQ(r.raw_delta, 67u);
}

TEST(RunProgram, HaltOnly) {
  Machine m;
  const HostState before = m.host();
  const auto r = m.RunProgram(ParseX86Program("hlt\n"));
  EXPECT_TRUE(r.halted);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(m.host().gpr, before.gpr);
}

TEST(RunProgram, ChecksumProgram) {
  const SymbolTable syms = {{"msg0", 0}, {"msg1", 4}, {"rc", 0x18}};
  const auto prog = ParseX86Program(
      "mov esi, [msg0]\nmov edi, [msg1]\nmov ecx, [rc]\nadd edi, ecx\nadd esi, edi\n"
      "mov edi, esi\nadd esi, esi\nshr esi, 8\nadd esi, edi\n",
      syms);
  Machine m;
  m.host().Store(0, 4, 1);
  m.host().Store(4, 4, 2);
  m.host().Store(0x18, 4, 3);
  m.RunProgram(prog);
  // Straight-line evaluation of the nine instructions.
  uint32_t esi = 1, edi = 2, ecx = 3;
  edi += ecx;
  esi += edi;
  edi = esi;
  esi += esi;
  esi >>= 8;
  esi += edi;
  EXPECT_EQ(m.host().reg(Gpr::kEsi), esi);
  EXPECT_EQ(m.host().reg(Gpr::kEdi), edi);
  EXPECT_EQ(m.host().reg(Gpr::kEcx), ecx);
}

TEST(RunProgram, DeterministicTraceAndState) {
  const auto prog = ParseX86Program(
      "mov ecx, 3\nloop:\nrdtsc\nshrd eax, edx, 3\nsub ecx, 1\ncmp ecx, 0\njne loop\nhlt\n");
  Machine a, b;
  const auto ra = a.RunProgram(prog);
  const auto rb = b.RunProgram(prog);
  EXPECT_EQ(FormatTraceText(ra.trace), FormatTraceText(rb.trace));
  EXPECT_EQ(FormatTraceJson(ra.trace), FormatTraceJson(rb.trace));
  EXPECT_EQ(a.host(), b.host());
  EXPECT_EQ(ra.total_cycles, rb.total_cycles);
  EXPECT_EQ(ra.trace.size(), 1 + 3 * 5u);
}

TEST(RunProgram, StepLimitIsLockup) {
  Machine m;
  const auto r = m.RunProgram(ParseX86Program("x:\njmp x\n"), 100);
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->kind, FaultKind::kLockup);
}

TEST(X86Parser, FormatRoundTrip) {
  for (const char* s : {"bound esi, [eax + 0x80003]", "shrd ebp, ecx, 0x4", "mov eax, [0x18]",
                        "xchg edi, eax", "push ebx", "ret"}) {
    EXPECT_EQ(FormatX86(I(s)), s);
  }
  EXPECT_THROW(I("frob eax"), AssemblyError);
  EXPECT_THROW(ParseX86Program("jmp nowhere\n"), AssemblyError);
}

}  // namespace
}  // namespace ucode
