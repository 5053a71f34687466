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
#include <set>

#include "oracles.hpp"
#include "ucode/engine.hpp"
#include "ucode/error.hpp"
#include "ucode/rom_map.hpp"
#include "ucode/rtl.hpp"

namespace ucode {
namespace {

uint8_t PhysToLog(uint8_t a, PermTable t, bool r = false, bool s = false) {
  return ApplyBlockPermutation(a, {t, r, s, 0}, Direction::kPhysToLog);
}

uint8_t LogToPhys(uint8_t a, PermTable t, bool r = false, bool s = false) {
  return ApplyBlockPermutation(a, {t, r, s, 0}, Direction::kLogToPhys);
}

TEST(BlockPermutation, TableRowsForT) {
  for (const auto& row : ucode_test::kTableRows) {
    for (int off = 0; off < 16; ++off) {
      const auto phys = static_cast<uint8_t>(row.physical + off);
      const auto log = static_cast<uint8_t>(row.logical_t + off);
      EXPECT_EQ(PhysToLog(phys, PermTable::kT), log);
      EXPECT_EQ(LogToPhys(log, PermTable::kT), phys);
    }
  }
}

TEST(BlockPermutation, TableRowsForL) {
  for (const auto& row : ucode_test::kTableRows) {
    for (int off = 0; off < 16; ++off) {
      const auto phys = static_cast<uint8_t>(row.physical + off);
      const int log_off = row.l_rs ? ((15 - off) ^ 1) : off;
      const auto log = static_cast<uint8_t>(row.logical_l + log_off);
      EXPECT_EQ(PhysToLog(phys, PermTable::kL), log);
      EXPECT_EQ(LogToPhys(log, PermTable::kL), phys);
    }
  }
}

TEST(BlockPermutation, Examples) {
  EXPECT_EQ(PhysToLog(0x10, PermTable::kT), 0x20);
  EXPECT_EQ(PhysToLog(0x80, PermTable::kL), 0xFE);
  EXPECT_EQ(PhysToLog(0x37, PermTable::kNone), 0x37);
  EXPECT_EQ(PhysToLog(0x00, PermTable::kNone, true, false), 0x0F);
  EXPECT_EQ(PhysToLog(0x00, PermTable::kNone, false, true), 0x01);
}

TEST(BlockPermutation, EveryCombinationIsABijection) {
  for (int t = 0; t < 3; ++t) {
    for (int f = 0; f < 4; ++f) {
      const BlockPermutation p{static_cast<PermTable>(t), (f & 1) != 0, (f & 2) != 0, 0};
      std::set<uint8_t> seen;
      for (int a = 0; a < 256; ++a) {
        const uint8_t l = ApplyBlockPermutation(static_cast<uint8_t>(a), p, Direction::kPhysToLog);
        seen.insert(l);
        ASSERT_EQ(ApplyBlockPermutation(l, p, Direction::kLogToPhys), a);
      }
      EXPECT_EQ(seen.size(), 256u);
    }
  }
}

TEST(MappingConfig, Examples) {
  EXPECT_EQ(MappingConfig::Identity().PhysicalToLogical(0x123), 0x123);
  MappingConfig cfg = MappingConfig::Identity();
  cfg.blocks[0].table = PermTable::kT;
  EXPECT_EQ(cfg.PhysicalToLogical(0x010), 0x020);
  cfg = MappingConfig::Identity();
  cfg.blocks[0].logical_block = 2;
  cfg.blocks[2].logical_block = 0;
  EXPECT_EQ(cfg.PhysicalToLogical(0x000), 0x200);
  EXPECT_EQ(cfg.LogicalToPhysical(0x200), 0x000);
  EXPECT_EQ(DefaultMappingConfig().LogicalToPhysical(0x318), 0x316);
}

TEST(MappingConfig, Validation) {
  MappingConfig cfg = MappingConfig::Identity();
  cfg.blocks[1].logical_block = 0;
  EXPECT_THROW(cfg.Validate(), MappingError);
  cfg = MappingConfig::Identity();
  cfg.blocks[3].table = PermTable::kL;
  EXPECT_THROW(cfg.Validate(), MappingError);
  cfg = MappingConfig::Identity();
  cfg.blocks[14].table = PermTable::kL;
  EXPECT_NO_THROW(cfg.Validate());
  cfg.blocks[14].reverse = true;
  EXPECT_THROW(cfg.Validate(), MappingError);
  EXPECT_THROW(MappingConfig::Identity().LogicalToPhysical(0xF00), MappingError);
}

TEST(MappingConfig, RandomConfigsAreBijective) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 20; ++i) {
    const auto cfg = RandomMappingConfig(rng);
    EXPECT_NO_THROW(cfg.Validate());
    std::set<uint16_t> seen;
    for (uint16_t a = 0; a < kRomTriads; ++a) {
      const uint16_t p = cfg.LogicalToPhysical(a);
      seen.insert(p);
      ASSERT_EQ(cfg.PhysicalToLogical(p), a);
    }
    EXPECT_EQ(seen.size(), size_t{kRomTriads});
  }
}

TEST(MappingConfig, TextRoundTrip) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 20; ++i) {
    const auto cfg = RandomMappingConfig(rng);
    EXPECT_EQ(ParseMappingConfig(FormatMappingConfig(cfg)), cfg);
  }
  EXPECT_THROW(ParseMappingConfig("block 0: table=Q R=0 S=0 logical=0\n"), Error);
}

TEST(Readout, InterleaveRoundTrip) {
  std::mt19937_64 rng(23);
  std::vector<RawTriad> phys(kRomTriads);
  for (auto& t : phys) {
    for (auto& w : t.ops) w = rng();
    t.seq = static_cast<uint32_t>(rng());
  }
  const auto readout = InterleaveTriads(phys);
  const auto combined = CombineRegions(readout);
  ASSERT_EQ(combined.size(), size_t{kRomTriads});
  for (uint16_t a = 0; a < kRomTriads; ++a) {
    ASSERT_EQ(combined[a].raw, phys[a]);
    ASSERT_FALSE(combined[a].unreadable);
  }
  for (uint32_t row = 0; row < kRomTriads; ++row) ASSERT_EQ(ReadoutRow(RowToPhysical(row)), row);
}

TEST(Readout, ConsecutiveTriadsSitEightRowsApart) {
  // The tail of A2 (0xEF0..0xEFF).
  for (uint16_t a = 0xEF0; a < 0xEFF; ++a) {
    EXPECT_EQ(ReadoutRow(a + 1) - ReadoutRow(a), 8u);
  }
}

TEST(Readout, UnreadableRowMarksOneTriad) {
  std::vector<RawTriad> phys(kRomTriads);
  auto readout = InterleaveTriads(phys);
  readout.unreadable = ParseUnreadableList("5\n");
  const auto combined = CombineRegions(readout);
  for (const auto& c : combined) {
    EXPECT_EQ(c.unreadable, c.addr == RowToPhysical(5));
  }
}

TEST(Readout, RegionFilesRoundTrip) {
  std::mt19937_64 rng(24);
  std::vector<RawTriad> phys(kRomTriads);
  for (auto& t : phys) t.ops[0] = rng();
  const auto readout = InterleaveTriads(phys);
  RomReadout loaded;
  for (int r = 0; r < kRegionCount; ++r) LoadRegion(SerializeRegion(readout, r), loaded);
  EXPECT_EQ(loaded.regions, readout.regions);
  auto bad = SerializeRegion(readout, 0);
  bad[0] = 'X';
  EXPECT_THROW(LoadRegion(bad, loaded), MappingError);
}

CombinedTriad Combined(uint16_t addr, const std::string& rtl) {
  return {addr, RawTriad::FromTriad(Assemble(rtl)[0]), false};
}

TEST(Semantics, SingleOpChangeset) {
  ProbeState in = ProbeState::Primary();
  in.temps[1] = 7;
  const auto report = EmulatePhysicalSemantics(
      std::vector{Combined(5, "add t1d, t1d, 1\n")}, in);
  ASSERT_EQ(report.semantics.size(), 1u);
  EXPECT_EQ(report.semantics.at(5).Get(RegisterId::Temp(1)), 8u);
  EXPECT_EQ(report.semantics.at(5).size(), 1u);
}

TEST(Semantics, Exclusions) {
  std::vector<CombinedTriad> triads = {
      Combined(0, "nop\n"),
      Combined(1, "mov t1d, 0xffff\nsll t1d, t1d, 16\nor t1d, t1d, 0xff00\n"),
      Combined(2, "loop:\n.sw_branch loop\nnop\n"),
      Combined(3, "st [t2d], t1d\n"),
  };
  CombinedTriad unknown{4, {}, false};
  unknown.raw.ops[0] = uint64_t{0xFF} << 56;
  triads.push_back(unknown);
  triads.push_back({5, {}, true});
  const auto report = EmulatePhysicalSemantics(triads);
  ASSERT_EQ(report.semantics.size(), 1u);
  EXPECT_TRUE(report.semantics.at(0).empty());
  EXPECT_EQ(report.excluded_constant, 1u);
  EXPECT_EQ(report.excluded_control, 2u);
  EXPECT_EQ(report.excluded_unknown, 1u);
  EXPECT_EQ(report.excluded_unreadable, 1u);
}

TEST(Semantics, PhysicalAndLogicalAgree) {
  MachineConfig mc;
  mc.stock_rom = false;
  Machine m(mc);
  m.engine().rom[0x20] = Assemble("add t1d, t1d, 1\n")[0];
  const auto log = ProbeLogicalSemantics(m);
  const auto phys = EmulatePhysicalSemantics(std::vector{Combined(0x20, "add t1d, t1d, 1\n")});
  EXPECT_EQ(log.semantics.at(0x20), phys.semantics.at(0x20));
}

Changeset Single(int temp, uint64_t v) {
  Changeset c;
  c.Set(RegisterId::Temp(temp), v);
  return c;
}

TEST(Correlate, UniqueAndAmbiguous) {
  EXPECT_EQ(CorrelateChangesets({{5, Single(1, 8)}}, {{0x20, Single(1, 8)}}),
            (std::vector<AddressPair>{{0x20, 5}}));
  EXPECT_TRUE(CorrelateChangesets({{5, Single(1, 8)}, {6, Single(1, 8)}}, {{0x20, Single(1, 8)}})
                  .empty());
}

TEST(Correlate, FortyUniqueTriads) {
  std::map<uint16_t, Changeset> phys, log;
  for (uint16_t i = 0; i < 256; ++i) {
    const uint64_t v = i < 40 ? 1000 + i : 7;
    phys[i] = Single(2, v);
    log[static_cast<uint16_t>(255 - i)] = Single(2, v);
  }
  EXPECT_EQ(CorrelateChangesets(phys, log).size(), 40u);
}

TEST(Recover, TwoPairsDetermineBlock) {
  const std::vector<AddressPair> pairs = {{0x020, 0x010}, {0x040, 0x020}};
  const auto r = RecoverMapping(pairs);
  EXPECT_TRUE(r.determined[0]);
  EXPECT_EQ(r.config.blocks[0], (BlockPermutation{PermTable::kT, false, false, 0}));
  EXPECT_FALSE(r.determined[1]);
}

TEST(Recover, InconsistentPairsThrow) {
  const std::vector<AddressPair> pairs = {{0x000, 0x000}, {0x100, 0x001}};
  EXPECT_THROW(RecoverMapping(pairs), MappingError);
}

TEST(Recover, EndToEndSynthetic) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 5; ++trial) {
    const auto cfg = RandomMappingConfig(rng);
    const auto phys = SyntheticPhysicalRom(8, rng);
    MachineConfig mc;
    mc.stock_rom = false;
    Machine m(mc);
    m.engine().rom = LogicalRom(phys, cfg);
    const auto ps = EmulatePhysicalSemantics(CombineRegions(InterleaveTriads(phys)));
    const auto ls = ProbeLogicalSemantics(m);
    const auto r = RecoverMapping(CorrelateChangesets(ps.semantics, ls.semantics));
    EXPECT_EQ(r.config, cfg);
  }
}

TEST(Recover, IdentityRom) {
  std::mt19937_64 rng(26);
  const auto phys = SyntheticPhysicalRom(8, rng);
  MachineConfig mc;
  mc.stock_rom = false;
  Machine m(mc);
  m.engine().rom = LogicalRom(phys, MappingConfig::Identity());
  const auto ps = EmulatePhysicalSemantics(CombineRegions(InterleaveTriads(phys)));
  const auto r = RecoverMapping(
      CorrelateChangesets(ps.semantics, ProbeLogicalSemantics(m).semantics));
  EXPECT_EQ(r.config, MappingConfig::Identity());
}

}  // namespace
}  // namespace ucode
