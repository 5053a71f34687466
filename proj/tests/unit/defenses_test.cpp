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

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "ucode/defenses.hpp"
#include "ucode/engine.hpp"
#include "ucode/error.hpp"
#include "ucode/stock_rom.hpp"
#include "ucode/update.hpp"

namespace ucode {
namespace {

X86Instruction I(const std::string& text) { return ParseX86Instruction(text); }

std::string ReadData(const std::string& name) {
  std::ifstream in(std::string(UCODE_DATA_DIR) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void Apply(Machine& m, const UpdateFile& u) { ApplyUpdate(m, PackUpdate(u), ApplyMode::kPlain); }

// --- rdtsc ---

TEST(Rdtsc, ClearsLowBits) {
  Machine m;
  Apply(m, BuildRdtscProgram(8));
  m.host().tsc = 0x12345678;
  m.Dispatch(I("rdtsc"));
  EXPECT_EQ(m.host().reg(Gpr::kEax), 0x12345600u);
  EXPECT_EQ(m.host().reg(Gpr::kEdx), 0u);
}

TEST(Rdtsc, MatchesStockWithMaskApplied) {
  std::mt19937_64 rng(51);
  for (int bits : {0, 1, 8, 13, 31}) {
    Machine custom;
    Apply(custom, BuildRdtscProgram(bits));
    for (int i = 0; i < 200; ++i) {
      const uint64_t tsc = rng() >> 1;
      Machine stock;
      stock.host().tsc = tsc;
      stock.Dispatch(I("rdtsc"));
      custom.host().tsc = tsc;
      custom.Dispatch(I("rdtsc"));
      const uint32_t mask = bits == 0 ? ~0u : ~((1u << bits) - 1);
      ASSERT_EQ(custom.host().reg(Gpr::kEax), stock.host().reg(Gpr::kEax) & mask);
      ASSERT_EQ(custom.host().reg(Gpr::kEdx), stock.host().reg(Gpr::kEdx));
    }
  }
  EXPECT_THROW(BuildRdtscProgram(33), Error);
}

TEST(Rdtsc, CalibratedCost) {
  Machine m;
  Apply(m, BuildRdtscProgram(8));
  EXPECT_EQ(BuildRdtscProgram(8).triads.size(), size_t{kRdtscProgramTriads});
  EXPECT_EQ(m.MeasureInstruction(I("rdtsc")).cycles, 15u);
}

// --- HWASAN ---

ShadowReader FromMap(const std::map<uint32_t, uint8_t>& shadow) {
  return [&shadow](uint32_t a) -> std::optional<uint8_t> {
    const auto it = shadow.find(a);
    return it == shadow.end() ? 0 : it->second;
  };
}

TEST(HwasanOracle, Examples) {
  const uint32_t off = 0x8000;
  std::map<uint32_t, uint8_t> shadow = {{(0x1006u >> 3) + off, 4}};
  EXPECT_EQ(HwasanOracle(0x1006, 4, FromMap(shadow), off), HwasanVerdict::kBug);
  EXPECT_EQ(HwasanOracle(0x2006, 4, FromMap(shadow), off), HwasanVerdict::kValid);
  shadow = {{(0x1000u >> 3) + off, 5}};
  EXPECT_EQ(HwasanOracle(0x1000, 4, FromMap(shadow), off), HwasanVerdict::kValid);
  shadow = {{(0x1008u >> 3) + off, 0}, {(0x1010u >> 3) + off, 1}};
  EXPECT_EQ(HwasanOracle(0x1008, 16, FromMap(shadow), off), HwasanVerdict::kBug);
  EXPECT_THROW(HwasanOracle(0, 4, [](uint32_t) { return std::optional<uint8_t>(); }, off), Error);
}

TEST(Hwasan, MicrocodeMatchesReferenceCheck) {
  std::mt19937_64 rng(52);
  HwasanParams p;
  Machine base;
  Apply(base, BuildHwasanProgram(p));
  for (int map = 0; map < 3; ++map) {
    Machine m = base;
    for (uint32_t g = 0; g < 0x1000 / 8 + 2; ++g) {
      const uint64_t r = rng() % 4;
      const uint8_t v = r == 0 ? 0 : r == 1 ? static_cast<uint8_t>(rng() % 8) : static_cast<uint8_t>(rng());
      m.host().Store(p.shadow_offset + (0x1000 >> 3) + g, 1, v);
    }
    const auto load = [&m](uint32_t a) { return static_cast<uint8_t>(*m.host().Load(a, 1)); };
    for (uint32_t addr = 0x1000; addr < 0x2000; addr += 3) {
      for (uint32_t size : {1u, 2u, 4u, 8u}) {
        Machine run = m;
        run.host().reg(Gpr::kEsi) = addr;
        const auto gpr = run.host().gpr;
        const auto r = run.Dispatch(I("bound esi, [" + std::to_string(size) + "]"));
        const bool bug = ucode_test::RefHwasanBug(addr, size, p.shadow_offset, load);
        ASSERT_EQ(r.fault.has_value(), bug) << std::hex << addr << " size " << size;
        if (bug) {
          ASSERT_EQ(r.fault->kind, FaultKind::kAccessViolation);
          ASSERT_EQ(r.fault->addr, addr);
          ASSERT_EQ(r.fault->size, size);
        } else {
          ASSERT_EQ(run.host().gpr, gpr);
        }
      }
    }
  }
}

TEST(Hwasan, ValidCheckCost) {
  Machine m;
  Apply(m, BuildHwasanProgram({}));
  m.host().reg(Gpr::kEsi) = 0x1000;
  EXPECT_EQ(m.Dispatch(I("bound esi, [4]")).cycles, kHwasanCheckCycles);
  EXPECT_EQ(kHwasanCheckCycles, 106u);
  EXPECT_LT(kHwasanCheckCycles, kAsanX86ReferenceCycles);
}

TEST(Hwasan, ReportModes) {
  for (const auto mode : {ReportMode::kAccessViolation, ReportMode::kBoundRange,
                          ReportMode::kX86Callback}) {
    HwasanParams p;
    p.mode = mode;
    p.callback_addr = 0x00400100;
    Machine m;
    Apply(m, BuildHwasanProgram(p));
    m.host().Store(p.shadow_offset + (0x1000 >> 3), 1, 2);
    m.host().reg(Gpr::kEsi) = 0x1000;
    const uint32_t esp = m.host().reg(Gpr::kEsp);
    const auto r = m.Dispatch(I("bound esi, [4]"));
    if (mode == ReportMode::kX86Callback) {
      ASSERT_TRUE(r.redirect);
      EXPECT_EQ(r.redirect->target, 0x00400100u);
      EXPECT_EQ(m.host().eip, 0x00400100u);
      EXPECT_EQ(m.host().reg(Gpr::kEsp), esp - 4);
    } else {
      ASSERT_TRUE(r.fault);
      EXPECT_EQ(r.fault->kind, mode == ReportMode::kBoundRange ? FaultKind::kBoundRange
                                                              : FaultKind::kAccessViolation);
    }
    EXPECT_EQ(ReportModeFromName(ReportModeName(mode)), mode);
  }
}

// --- ISR ---

const SymbolTable kIsrSymbols = {{"msg0", 0}, {"msg1", 4}, {"rc", 0x18}};

std::string StripComments(const std::string& s) {
  std::istringstream in(s);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == ';') continue;
    out += line + "\n";
  }
  return out;
}

TEST(Isr, TranspilesReferenceProgram) {
  const IsrAssignment a = ParseIsrAssignment(ReadData("isr_default.map"));
  EXPECT_EQ(a, IsrAssignment{});
  EXPECT_EQ(StripComments(TranspileIsr(ReadData("isr_native.asm"), a, kIsrSymbols)),
            ReadData("isr_transpiled.asm"));
}

TEST(Isr, SingleRows) {
  const IsrAssignment a;
  EXPECT_EQ(TranspileIsr("mov esi, [msg0]\n", a, kIsrSymbols), "bound esi, [eax + 0x1]\n");
  EXPECT_EQ(TranspileIsr("shr esi, 8\n", a, {}), "bound esi, [eax + 0x80003]\n");
  EXPECT_EQ(TranspileIsr("add edi, ecx\n", a, {}), "bound edi, [ecx + 0x4]\n");
  EXPECT_EQ(TranspileIsr("push eax\n", a, {}), "push eax\n");
  EXPECT_THROW(TranspileIsr("shl esi, cl\n", a, {}), Error);
}

struct Final {
  std::array<uint32_t, 8> gpr;
  std::vector<uint8_t> memory;
};

Final RunWithData(Machine m, const X86Program& p, const std::array<uint32_t, 3>& data,
                  uint32_t mask) {
  m.host().Store(0, 4, data[0] ^ mask);
  m.host().Store(4, 4, data[1] ^ mask);
  m.host().Store(0x18, 4, data[2] ^ mask);
  m.RunProgram(p);
  return {m.host().gpr, m.host().memory};
}

TEST(Isr, NativeAndTransformedAgree) {
  for (uint32_t mask : {0u, 0xA5A55A5Au}) {
    IsrAssignment a;
    a.io_mask = mask;
    Machine isr;
    Apply(isr, BuildIsrProgram(a, isr.engine()));
    const auto native = ParseX86Program(ReadData("isr_native.asm"), kIsrSymbols);
    const auto transformed = ParseX86Program(
        TranspileIsr(ReadData("isr_native.asm"), a, kIsrSymbols));
    std::mt19937_64 rng(53);
    for (int i = 0; i < 50; ++i) {
      const std::array<uint32_t, 3> data = {static_cast<uint32_t>(rng()),
                                            static_cast<uint32_t>(rng()),
                                            static_cast<uint32_t>(rng())};
      const Final n = RunWithData(Machine(), native, data, 0);
      const Final t = RunWithData(isr, transformed, data, mask);
      ASSERT_EQ(n.gpr, t.gpr);
    }
  }
}

TEST(Isr, WrongAssignmentDiverges) {
  IsrAssignment right;
  IsrAssignment wrong;
  std::swap(wrong.handler_map[3], wrong.handler_map[4]);
  Machine m;
  Apply(m, BuildIsrProgram(wrong, m.engine()));
  const auto native = ParseX86Program(ReadData("isr_native.asm"), kIsrSymbols);
  const auto transformed =
      ParseX86Program(TranspileIsr(ReadData("isr_native.asm"), right, kIsrSymbols));
  const std::array<uint32_t, 3> data = {1, 2, 3};
  EXPECT_NE(RunWithData(Machine(), native, data, 0).gpr, RunWithData(m, transformed, data, 0).gpr);
}

TEST(Isr, AssignmentText) {
  IsrAssignment a;
  std::swap(a.handler_map[0], a.handler_map[5]);
  a.io_mask = 0x1234;
  a.base_reg = Gpr::kEbx;
  EXPECT_EQ(ParseIsrAssignment(FormatIsrAssignment(a)), a);
  EXPECT_THROW(ParseIsrAssignment("handler 0 = add\nhandler 1 = add\n"), Error);
  EXPECT_THROW(ParseIsrAssignment("handler 9 = add\n"), Error);
  EXPECT_THROW(ParseIsrAssignment("host = mov\n"), Error);
}

// --- Hook ---

HookSpec Spec(uint32_t filter) {
  HookSpec h;
  h.filter_value = filter;
  h.handler_addr = 0x00400100;
  return h;
}

TEST(Hook, MissCostsEightCycles) {
  Machine m;
  Apply(m, BuildHookProgram(Spec(0x1234), m.engine()));
  EXPECT_EQ(m.MeasureInstruction(I("shrd ebp, ecx, 4")).cycles, 8u);
}

TEST(Hook, TransparentForOtherValues) {
  std::mt19937_64 rng(54);
  Machine hooked;
  Apply(hooked, BuildHookProgram(Spec(0x1234), hooked.engine()));
  for (int i = 0; i < 2000; ++i) {
    Machine stock;
    Machine h = hooked;
    for (int g = 0; g < 8; ++g) {
      if (g == static_cast<int>(Gpr::kEsp)) continue;
      stock.host().gpr[g] = h.host().gpr[g] = static_cast<uint32_t>(rng());
    }
    if (stock.host().reg(Gpr::kEcx) == 0x1234) continue;
    X86Instruction in = I("shrd ebx, ecx, 0");
    in.ops[2].imm = static_cast<uint32_t>(rng() % 32);
    const auto rs = stock.Dispatch(in);
    const auto rh = h.Dispatch(in);
    ASSERT_FALSE(rh.redirect);
    ASSERT_EQ(stock.host().gpr, h.host().gpr);
    ASSERT_EQ(stock.host().eip, h.host().eip);
    ASSERT_EQ(rs.fault, rh.fault);
  }
}

TEST(Hook, MatchRedirectsToHandler) {
  const auto prog = ParseX86Program(
      "mov ecx, 0x1234\n"
      "shrd ebx, ecx, 4\n"
      "hlt\n"
      "handler:\n"
      "mov esi, 7\n"
      "ret\n");
  ASSERT_EQ(prog.labels.at("handler"), 0x0040000Cu);
  HookSpec h = Spec(0x1234);
  h.handler_addr = prog.labels.at("handler");
  Machine m;
  Apply(m, BuildHookProgram(h, m.engine()));
  const auto r = m.RunProgram(prog);
  ASSERT_GE(r.trace.size(), 2u);
  ASSERT_TRUE(r.trace[1].redirect);
  EXPECT_TRUE(r.trace[1].redirect->push_ip);
  EXPECT_EQ(m.host().reg(Gpr::kEsi), 7u);
  EXPECT_TRUE(r.halted);
  EXPECT_NE(FormatTraceText(r.trace).find("redirect=0x40000c"), std::string::npos);
}

TEST(Hook, UnhookableTarget) {
  Machine m;
  HookSpec h = Spec(1);
  h.target = X86Mnemonic::kMov;
  EXPECT_THROW(BuildHookProgram(h, m.engine()), Error);
}

// --- Detector ---

TEST(Detector, ReportsHookedShrd) {
  Machine m;
  const auto bytes = PackUpdate(BuildHookProgram(Spec(0x1234), m.engine()));
  const auto list = DetectorInstructions();
  const auto report = DetectHooks([] { return Machine(); }, bytes, list);
  ASSERT_EQ(report.size(), 1u);
  EXPECT_EQ(report[0], (HookReport{X86Mnemonic::kShrd, 2, 6}));
}

TEST(Detector, SingleTriadDetour) {
  const auto bytes = PackUpdate(BuildDetourProgram(kBoundEntry, 1));
  const auto list = DetectorInstructions();
  const auto report = DetectHooks([] { return Machine(); }, bytes, list);
  ASSERT_EQ(report.size(), 1u);
  EXPECT_EQ(report[0].mnemonic, X86Mnemonic::kBound);
  EXPECT_EQ(report[0].delta_cycles, 5);
}

TEST(Detector, NoOpUpdate) {
  UpdateFile u;
  u.triads.resize(1);
  const auto list = DetectorInstructions();
  EXPECT_TRUE(DetectHooks([] { return Machine(); }, PackUpdate(u), list).empty());
  // Match register pointing at an address no instruction reaches.
  u.matches.push_back({0x0EE, 0});
  EXPECT_TRUE(DetectHooks([] { return Machine(); }, PackUpdate(u), list).empty());
}

// --- Attestation ---

const TeaKey kEnclaveKey{{0xDEADBEEF, 0x01020304, 0xCAFEBABE, 0x55AA33CC}};

TEST(Attest, TagMatchesReferenceMac) {
  Machine m;
  ProvisionEnclave(m, kEnclaveKey);
  std::mt19937_64 rng(55);
  std::set<uint64_t> tags;
  for (int i = 0; i < 20; ++i) {
    const uint64_t c = rng();
    const uint64_t tag = EnclaveAttest(m, c);
    const auto bytes = ChallengeBytes(c);
    ASSERT_EQ(tag, ucode_test::RefCbcMac(kEnclaveKey.words, {bytes.begin(), bytes.end()}));
    tags.insert(tag);
  }
  EXPECT_EQ(tags.size(), 20u);
}

TEST(Attest, ChallengeBytesBigEndian) {
  const auto b = ChallengeBytes(0x0102030405060708ull);
  EXPECT_EQ(b[0], 1);
  EXPECT_EQ(b[7], 8);
}

TEST(Attest, KeyNeverReachesHostMemory) {
  Machine m;
  ProvisionEnclave(m, kEnclaveKey);
  EnclaveAttest(m, 0x1122334455667788ull);
  const auto& mem = m.host().memory;
  for (uint32_t w : kEnclaveKey.words) {
    const uint8_t le[4] = {static_cast<uint8_t>(w), static_cast<uint8_t>(w >> 8),
                           static_cast<uint8_t>(w >> 16), static_cast<uint8_t>(w >> 24)};
    EXPECT_EQ(std::search(mem.begin(), mem.end(), le, le + 4), mem.end());
  }
  for (uint32_t g : m.host().gpr) {
    for (uint32_t w : kEnclaveKey.words) EXPECT_NE(g, w);
  }
}

TEST(Attest, NoKeyFaults) {
  Machine m;
  Apply(m, BuildAttestProgram());
  EXPECT_THROW(EnclaveAttest(m, 1), EngineError);
}

}  // namespace
}  // namespace ucode
