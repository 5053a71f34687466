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

#include "ucode/rom_map.hpp"

#include <algorithm>
#include <sstream>

#include "text_util.hpp"
#include "ucode/error.hpp"

namespace ucode {

namespace {

constexpr char kReadoutMagic[4] = {'U', 'C', 'R', 'O'};
constexpr size_t kReadoutHeaderBytes = 4 + 1 + 2 * kArrayCount;
constexpr int kFinalLogicalBlock = kBlockCount - 1;

size_t RowBytes(int region) { return region < 3 ? kOpRowBytes : kSeqRowBytes; }

uint64_t ReadLe(std::span<const uint8_t> b, size_t n) {
  uint64_t v = 0;
  for (size_t i = 0; i < n; ++i) v |= uint64_t{b[i]} << (8 * i);
  return v;
}

void WriteLe(uint8_t* out, uint64_t v, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<uint8_t>(v >> (8 * i));
}

std::string_view TableName(PermTable t) {
  switch (t) {
    case PermTable::kNone: return "none";
    case PermTable::kT: return "T";
    case PermTable::kL: return "L";
  }
  return "?";
}

bool ForcesRs(PermTable table, int phys_group) {
  return table == PermTable::kL && phys_group >= 8;
}

}  // namespace

int ArrayOf(uint16_t phys) {
  if (phys >= kRomTriads) throw MappingError("physical address " + text::Hex(phys) +
                                             " is outside the ROM");
  return phys / 0x400;
}

uint16_t ArrayBase(int array) { return static_cast<uint16_t>(array * 0x400); }

uint32_t ReadoutRow(uint16_t phys) {
  const int array = ArrayOf(phys);
  const uint32_t n = kArraySizes[array];
  const uint32_t a = phys - ArrayBase(array);
  const uint32_t stride = n / kInterleave;
  return ArrayBase(array) + (a % stride) * kInterleave + a / stride;
}

uint16_t RowToPhysical(uint32_t row) {
  if (row >= kRomTriads) throw MappingError("readout row " + text::Hex(row) + " out of range");
  const int array = static_cast<int>(row / 0x400);
  const uint32_t n = kArraySizes[array];
  const uint32_t r = row - ArrayBase(array);
  const uint32_t stride = n / kInterleave;
  return static_cast<uint16_t>(ArrayBase(array) + (r % kInterleave) * stride + r / kInterleave);
}

RawTriad RawTriad::FromTriad(const Triad& t) {
  RawTriad r;
  for (int i = 0; i < 3; ++i) r.ops[i] = EncodeOp(t.ops[i]);
  r.seq = EncodeSeq(t.seq);
  return r;
}

std::optional<Triad> RawTriad::Decode() const {
  try {
    Triad t;
    for (int i = 0; i < 3; ++i) t.ops[i] = DecodeOp(ops[i]);
    t.seq = DecodeSeq(seq);
    return t;
  } catch (const DecodeError&) {
    return std::nullopt;
  }
}

RomReadout InterleaveTriads(std::span<const RawTriad> physical) {
  if (physical.size() != kRomTriads) {
    throw MappingError("expected " + std::to_string(kRomTriads) + " physical triads, got " +
                       std::to_string(physical.size()));
  }
  RomReadout out;
  for (int r = 0; r < kRegionCount; ++r) out.regions[r].assign(kRomTriads * RowBytes(r), 0);
  for (uint16_t a = 0; a < kRomTriads; ++a) {
    const uint32_t row = ReadoutRow(a);
    for (int r = 0; r < 3; ++r) {
      WriteLe(&out.regions[r][row * kOpRowBytes], physical[a].ops[r], kOpRowBytes);
    }
    WriteLe(&out.regions[3][row * kSeqRowBytes], physical[a].seq, kSeqRowBytes);
  }
  return out;
}

std::vector<CombinedTriad> CombineRegions(const RomReadout& readout) {
  for (int r = 0; r < kRegionCount; ++r) {
    if (readout.regions[r].size() != kRomTriads * RowBytes(r)) {
      throw MappingError("region R" + std::to_string(r + 1) + " has " +
                         std::to_string(readout.regions[r].size()) + " bytes, expected " +
                         std::to_string(kRomTriads * RowBytes(r)));
    }
  }
  for (uint32_t row : readout.unreadable) {
    if (row >= kRomTriads) {
      throw MappingError("unreadable offset " + text::Hex(row) + " beyond the ROM geometry");
    }
  }
  std::vector<CombinedTriad> out(kRomTriads);
  for (uint16_t a = 0; a < kRomTriads; ++a) {
    const uint32_t row = ReadoutRow(a);
    CombinedTriad& t = out[a];
    t.addr = a;
    for (int r = 0; r < 3; ++r) {
      t.raw.ops[r] = ReadLe(std::span(readout.regions[r]).subspan(row * kOpRowBytes),
                            kOpRowBytes);
    }
    t.raw.seq = static_cast<uint32_t>(
        ReadLe(std::span(readout.regions[3]).subspan(row * kSeqRowBytes), kSeqRowBytes));
    t.unreadable = readout.unreadable.contains(row);
  }
  return out;
}

std::vector<uint8_t> SerializeRegion(const RomReadout& readout, int region) {
  if (region < 0 || region >= kRegionCount) throw MappingError("bad region index");
  const auto& body = readout.regions[region];
  std::vector<uint8_t> out(kReadoutHeaderBytes + body.size());
  std::copy(std::begin(kReadoutMagic), std::end(kReadoutMagic), out.begin());
  out[4] = static_cast<uint8_t>(region + 1);
  for (int a = 0; a < kArrayCount; ++a) WriteLe(&out[5 + 2 * a], kArraySizes[a], 2);
  std::copy(body.begin(), body.end(), out.begin() + kReadoutHeaderBytes);
  return out;
}

void LoadRegion(std::span<const uint8_t> bytes, RomReadout& readout) {
  if (bytes.size() < kReadoutHeaderBytes ||
      !std::equal(std::begin(kReadoutMagic), std::end(kReadoutMagic), bytes.begin())) {
    throw MappingError("not a readout file (bad magic)");
  }
  const int region = bytes[4] - 1;
  if (region < 0 || region >= kRegionCount) {
    throw MappingError("bad region id " + std::to_string(bytes[4]));
  }
  for (int a = 0; a < kArrayCount; ++a) {
    const auto n = ReadLe(bytes.subspan(5 + 2 * a), 2);
    if (n != kArraySizes[a]) {
      throw MappingError("array " + std::string(kArrayNames[a]) + " size " +
                         std::to_string(n) + " does not match the ROM geometry");
    }
  }
  const auto body = bytes.subspan(kReadoutHeaderBytes);
  if (body.size() != kRomTriads * RowBytes(region)) {
    throw MappingError("region R" + std::to_string(region + 1) + " size mismatch");
  }
  readout.regions[region].assign(body.begin(), body.end());
}

std::set<uint32_t> ParseUnreadableList(std::string_view text) {
  std::set<uint32_t> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = text::Trim(text::StripComment(line));
    if (t.empty()) continue;
    const auto v = text::ParseNumber(t);
    if (!v || *v >= kRomTriads) {
      throw MappingError("line " + std::to_string(n) + ": bad unreadable offset '" +
                         std::string(t) + "'");
    }
    out.insert(static_cast<uint32_t>(*v));
  }
  return out;
}

int TableGroup(PermTable table, int g) {
  switch (table) {
    case PermTable::kNone: return g;
    case PermTable::kT: return g < 8 ? 2 * g : 2 * (g - 8) + 1;
    case PermTable::kL: return g < 8 ? g : 23 - g;
  }
  return g;
}

int InverseTableGroup(PermTable table, int g) {
  switch (table) {
    case PermTable::kNone: return g;
    case PermTable::kT: return g % 2 == 0 ? g / 2 : (g - 1) / 2 + 8;
    case PermTable::kL: return g < 8 ? g : 23 - g;
  }
  return g;
}

uint8_t ApplyBlockPermutation(uint8_t addr, const BlockPermutation& p, Direction dir) {
  const int g = addr >> 4;
  int o = addr & 0xF;
  if (dir == Direction::kPhysToLog) {
    const bool forced = ForcesRs(p.table, g);
    if (p.reverse || forced) o = 15 - o;
    if (p.swap || forced) o ^= 1;
    return static_cast<uint8_t>(TableGroup(p.table, g) << 4 | o);
  }
  const int pg = InverseTableGroup(p.table, g);
  const bool forced = ForcesRs(p.table, pg);
  if (p.swap || forced) o ^= 1;
  if (p.reverse || forced) o = 15 - o;
  return static_cast<uint8_t>(pg << 4 | o);
}

MappingConfig MappingConfig::Identity() {
  MappingConfig cfg;
  for (int b = 0; b < kBlockCount; ++b) cfg.blocks[b].logical_block = b;
  return cfg;
}

void MappingConfig::Validate() const {
  std::array<int, kBlockCount> owner;
  owner.fill(-1);
  for (int b = 0; b < kBlockCount; ++b) {
    const auto& p = blocks[b];
    if (p.logical_block < 0 || p.logical_block >= kBlockCount) {
      throw MappingError("block " + std::to_string(b) + ": logical block " +
                         std::to_string(p.logical_block) + " out of range");
    }
    if (owner[p.logical_block] >= 0) {
      throw MappingError("blocks " + std::to_string(owner[p.logical_block]) + " and " +
                         std::to_string(b) + " both map to logical block " +
                         std::to_string(p.logical_block));
    }
    owner[p.logical_block] = b;
    if (p.table == PermTable::kL) {
      if (p.logical_block != kFinalLogicalBlock) {
        throw MappingError("block " + std::to_string(b) +
                           ": table L is only valid for the final logical block");
      }
      if (p.reverse || p.swap) {
        throw MappingError("block " + std::to_string(b) +
                           ": table L carries its own R/S and takes no flags");
      }
    }
  }
}

uint16_t MappingConfig::PhysicalToLogical(uint16_t phys) const {
  if (phys >= kRomTriads) {
    throw MappingError("address " + text::Hex(phys) + " is not a ROM address");
  }
  const auto& p = blocks[phys / kBlockTriads];
  return static_cast<uint16_t>(p.logical_block * kBlockTriads +
                               ApplyBlockPermutation(phys & 0xFF, p, Direction::kPhysToLog));
}

uint16_t MappingConfig::LogicalToPhysical(uint16_t logical) const {
  if (logical >= kRomTriads) {
    throw MappingError("address " + text::Hex(logical) + " is not a ROM address");
  }
  const int lb = logical / kBlockTriads;
  for (int b = 0; b < kBlockCount; ++b) {
    if (blocks[b].logical_block != lb) continue;
    return static_cast<uint16_t>(
        b * kBlockTriads + ApplyBlockPermutation(logical & 0xFF, blocks[b], Direction::kLogToPhys));
  }
  throw MappingError("no physical block maps to logical block " + std::to_string(lb));
}

MappingConfig ParseMappingConfig(std::string_view text) {
  MappingConfig cfg = MappingConfig::Identity();
  std::array<bool, kBlockCount> seen{};
  std::istringstream in{std::string(text)};
  std::string raw;
  int n = 0;
  while (std::getline(in, raw)) {
    ++n;
    const auto line = text::Trim(text::StripComment(raw));
    if (line.empty()) continue;
    auto fail = [&](const std::string& msg) -> MappingError {
      return MappingError("line " + std::to_string(n) + ": " + msg);
    };
    std::istringstream fields{std::string(line)};
    std::string word, num;
    fields >> word;
    if (word != "block") throw fail("expected 'block <n>:'");
    std::getline(fields, num, ':');
    const auto b = text::ParseNumber(text::Trim(num));
    if (!b || *b >= kBlockCount) throw fail("bad block number '" + num + "'");
    if (seen[*b]) throw fail("block " + std::to_string(*b) + " listed twice");
    seen[*b] = true;
    BlockPermutation p;
    std::array<bool, 4> have{};
    std::string kv;
    while (fields >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw fail("expected key=value, got '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const std::string value = kv.substr(eq + 1);
      if (key == "table") {
        if (value == "none") {
          p.table = PermTable::kNone;
        } else if (value == "T") {
          p.table = PermTable::kT;
        } else if (value == "L") {
          p.table = PermTable::kL;
        } else {
          throw fail("bad table '" + value + "'");
        }
        have[0] = true;
      } else if (key == "R" || key == "S") {
        if (value != "0" && value != "1") throw fail("bad flag '" + kv + "'");
        (key == "R" ? p.reverse : p.swap) = value == "1";
        have[key == "R" ? 1 : 2] = true;
      } else if (key == "logical") {
        const auto v = text::ParseNumber(value);
        if (!v || *v >= kBlockCount) throw fail("bad logical block '" + value + "'");
        p.logical_block = static_cast<int>(*v);
        have[3] = true;
      } else {
        throw fail("unknown key '" + key + "'");
      }
    }
    if (!std::all_of(have.begin(), have.end(), [](bool h) { return h; })) {
      throw fail("block entry needs table, R, S and logical");
    }
    cfg.blocks[*b] = p;
  }
  for (int b = 0; b < kBlockCount; ++b) {
    if (!seen[b]) throw MappingError("block " + std::to_string(b) + " missing");
  }
  cfg.Validate();
  return cfg;
}

std::string FormatMappingConfig(const MappingConfig& cfg) {
  std::string out;
  for (int b = 0; b < kBlockCount; ++b) {
    const auto& p = cfg.blocks[b];
    out += "block " + std::to_string(b) + ": table=" + std::string(TableName(p.table)) +
           " R=" + (p.reverse ? "1" : "0") + " S=" + (p.swap ? "1" : "0") +
           " logical=" + std::to_string(p.logical_block) + "\n";
  }
  return out;
}

MappingConfig DefaultMappingConfig() {
  static constexpr BlockPermutation kBlocks[kBlockCount] = {
      {PermTable::kT, false, false, 0},  {PermTable::kT, true, false, 1},
      {PermTable::kT, false, true, 2},   {PermTable::kNone, true, true, 3},
      {PermTable::kT, false, false, 5},  {PermTable::kT, true, true, 4},
      {PermTable::kNone, false, true, 6}, {PermTable::kT, true, false, 7},
      {PermTable::kT, false, false, 8},  {PermTable::kNone, true, false, 9},
      {PermTable::kT, false, true, 11},  {PermTable::kT, true, true, 10},
      {PermTable::kT, false, false, 12}, {PermTable::kNone, false, false, 13},
      {PermTable::kL, false, false, 14},
  };
  MappingConfig cfg;
  std::copy(std::begin(kBlocks), std::end(kBlocks), cfg.blocks.begin());
  return cfg;
}

MappingConfig RandomMappingConfig(std::mt19937_64& rng) {
  MappingConfig cfg;
  std::array<int, kBlockCount> order;
  for (int i = 0; i < kBlockCount; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (int b = 0; b < kBlockCount; ++b) {
    auto& p = cfg.blocks[b];
    p.logical_block = order[b];
    const int choices = p.logical_block == kFinalLogicalBlock ? 3 : 2;
    p.table = static_cast<PermTable>(rng() % choices);
    if (p.table != PermTable::kL) {
      p.reverse = rng() & 1;
      p.swap = rng() & 1;
    }
  }
  return cfg;
}

ProbeState ProbeState::Primary() {
  ProbeState s;
  for (int i = 0; i < 6; ++i) s.gpr[i] = 0x11110000u * (i + 1) + 0x101u * (i + 3);
  for (int i = 0; i < kTemporaryCount; ++i) {
    s.temps[i] = 0x0123456700000000ull * (i + 1) + 0x00010203u * (i + 7) + 0x10000u * i;
  }
  return s;
}

ProbeState ProbeState::Perturbed() {
  ProbeState s;
  for (int i = 0; i < 6; ++i) s.gpr[i] = 0x9E3779B9u * (i + 1) ^ 0x5A5A5A5Au;
  for (int i = 0; i < kTemporaryCount; ++i) {
    s.temps[i] = 0xC2B2AE3D27D4EB4Full * (i + 11) ^ 0x165667B19E3779F9ull;
  }
  return s;
}

void ProbeState::ApplyTo(Machine& m) const {
  const auto regs = TrackedRegisters();
  for (int i = 0; i < 6; ++i) m.WriteRegister(regs[i], gpr[i]);
  for (int i = 0; i < kTemporaryCount; ++i) m.WriteRegister(regs[6 + i], temps[i]);
}

namespace {

Machine ProbeMachine(const ProbeState& s) {
  MachineConfig cfg;
  cfg.stock_rom = false;
  cfg.mem_size = 4096;
  Machine m(cfg);
  s.ApplyTo(m);
  return m;
}

// Records the semantics of `t` or counts why it was excluded.
void Classify(uint16_t addr, const Triad& t, const Machine& primary, const Machine& perturbed,
              SemanticsReport& report) {
  const StepOptions options{.registers_only = true};
  auto first = primary.ExecuteTriad(t, options);
  auto second = perturbed.ExecuteTriad(t, options);
  bool side_effect = false;
  for (const auto& op : t.ops) {
    if (op.opcode == Opcode::kSt || op.opcode == Opcode::kWriteout) side_effect = true;
  }
  if (first.fault || second.fault || first.transfer || side_effect) {
    ++report.excluded_control;
    return;
  }
  if (!first.changeset.empty() && first.changeset == second.changeset) {
    ++report.excluded_constant;
    return;
  }
  report.semantics.emplace(addr, std::move(first.changeset));
}

}  // namespace

SemanticsReport EmulatePhysicalSemantics(std::span<const CombinedTriad> triads,
                                         const ProbeState& input) {
  SemanticsReport report;
  const Machine primary = ProbeMachine(input);
  const Machine perturbed = ProbeMachine(ProbeState::Perturbed());
  for (const auto& c : triads) {
    if (c.unreadable) {
      ++report.excluded_unreadable;
      continue;
    }
    const auto t = c.raw.Decode();
    if (!t) {
      ++report.excluded_unknown;
      continue;
    }
    Classify(c.addr, *t, primary, perturbed, report);
  }
  return report;
}

SemanticsReport ProbeLogicalSemantics(const Machine& machine, const ProbeState& input) {
  SemanticsReport report;
  Machine primary = machine;
  input.ApplyTo(primary);
  Machine perturbed = machine;
  ProbeState::Perturbed().ApplyTo(perturbed);
  for (uint16_t a = 0; a < kRomTriads; ++a) {
    Classify(a, machine.Fetch(a), primary, perturbed, report);
  }
  return report;
}

std::vector<AddressPair> CorrelateChangesets(const std::map<uint16_t, Changeset>& physical,
                                             const std::map<uint16_t, Changeset>& logical) {
  std::map<Changeset, std::vector<uint16_t>> by_phys;
  std::map<Changeset, std::vector<uint16_t>> by_log;
  for (const auto& [a, c] : physical) by_phys[c].push_back(a);
  for (const auto& [a, c] : logical) by_log[c].push_back(a);
  std::vector<AddressPair> pairs;
  for (const auto& [c, logs] : by_log) {
    if (logs.size() != 1) continue;
    const auto it = by_phys.find(c);
    if (it == by_phys.end() || it->second.size() != 1) continue;
    pairs.push_back({logs[0], it->second[0]});
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

RecoveryResult RecoverMapping(std::span<const AddressPair> pairs) {
  RecoveryResult result;
  std::array<std::vector<AddressPair>, kBlockCount> per_block;
  for (const auto& p : pairs) {
    if (p.logical >= kRomTriads || p.physical >= kRomTriads) {
      throw MappingError("pair (" + text::Hex(p.logical) + ", " + text::Hex(p.physical) +
                         ") is outside the ROM");
    }
    per_block[p.physical / kBlockTriads].push_back(p);
  }
  for (int b = 0; b < kBlockCount; ++b) {
    const auto& ps = per_block[b];
    result.pair_count[b] = ps.size();
    if (ps.empty()) continue;
    std::vector<BlockPermutation> fits;
    for (int lb = 0; lb < kBlockCount; ++lb) {
      for (int table = 0; table < 3; ++table) {
        for (int flags = 0; flags < 4; ++flags) {
          const BlockPermutation cand{static_cast<PermTable>(table), (flags & 1) != 0,
                                      (flags & 2) != 0, lb};
          if (cand.table == PermTable::kL && (lb != kFinalLogicalBlock || flags != 0)) continue;
          const bool ok = std::all_of(ps.begin(), ps.end(), [&](const AddressPair& p) {
            return p.logical / kBlockTriads == lb &&
                   ApplyBlockPermutation(p.physical & 0xFF, cand, Direction::kPhysToLog) ==
                       (p.logical & 0xFF);
          });
          if (ok) fits.push_back(cand);
        }
      }
    }
    if (fits.empty()) {
      std::string msg = "no permutation fits the pairs of physical block " + std::to_string(b) + ":";
      for (const auto& p : ps) {
        msg += " (" + text::Hex(p.logical) + ", " + text::Hex(p.physical) + ")";
      }
      throw MappingError(msg);
    }
    if (ps.size() >= 2 && fits.size() == 1) {
      result.config.blocks[b] = fits[0];
      result.determined[b] = true;
    }
  }
  return result;
}

std::vector<RawTriad> SyntheticPhysicalRom(int unique_per_block, std::mt19937_64& rng) {
  if (unique_per_block < 0 || unique_per_block > kBlockTriads) {
    throw MappingError("unique_per_block must be in [0, 256]");
  }
  static constexpr Opcode kOps[] = {Opcode::kAdd, Opcode::kXor, Opcode::kSub, Opcode::kOr};
  std::vector<RawTriad> rom(kRomTriads, RawTriad::FromTriad(Triad{}));
  std::set<std::tuple<int, int, int>> used;
  const auto regs = TrackedRegisters();
  for (int b = 0; b < kBlockCount; ++b) {
    std::vector<int> slots(kBlockTriads);
    for (int i = 0; i < kBlockTriads; ++i) slots[i] = i;
    std::shuffle(slots.begin(), slots.end(), rng);
    for (int k = 0; k < unique_per_block; ++k) {
      std::tuple<int, int, int> key;
      do {
        key = {static_cast<int>(rng() % regs.size()), static_cast<int>(rng() % 4),
               static_cast<int>(1 + rng() % 0xFFFE)};
      } while (!used.insert(key).second);
      const auto [r, o, imm] = key;
      Triad t;
      t.ops[0].opcode = kOps[o];
      t.ops[0].dst = t.ops[0].src1 = regs[r];
      t.ops[0].imm = static_cast<uint16_t>(imm);
      rom[b * kBlockTriads + slots[k]] = RawTriad::FromTriad(t);
    }
    // A few unrecognized words among the filler.
    for (int k = unique_per_block; k < std::min(unique_per_block + 4, int{kBlockTriads}); ++k) {
      rom[b * kBlockTriads + slots[k]].ops[1] = 0xFF00000000000000ull;
    }
  }
  return rom;
}

std::vector<Triad> LogicalRom(std::span<const RawTriad> physical, const MappingConfig& cfg) {
  if (physical.size() != kRomTriads) throw MappingError("physical ROM must hold 0xF00 triads");
  std::vector<Triad> rom(kRomTriads);
  for (uint16_t phys = 0; phys < kRomTriads; ++phys) {
    rom[cfg.PhysicalToLogical(phys)] = physical[phys].Decode().value_or(Triad{});
  }
  return rom;
}

}  // namespace ucode
