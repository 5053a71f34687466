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

// ROM geometry, readout combination, the T/R/S/L logical<->physical address
// permutations and mapping recovery by semantic correlation.

#ifndef UCODE_ROM_MAP_HPP_
#define UCODE_ROM_MAP_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ucode/engine.hpp"
#include "ucode/isa.hpp"

namespace ucode {

// Physical arrays in readout order.
inline constexpr int kArrayCount = 4;
inline constexpr std::array<uint16_t, kArrayCount> kArraySizes = {1024, 1024, 1024, 768};
inline constexpr std::array<std::string_view, kArrayCount> kArrayNames = {"A1", "A3", "A4",
                                                                         "A2"};
inline constexpr int kInterleave = 8;
inline constexpr uint16_t kBlockTriads = 256;
inline constexpr int kBlockCount = kRomTriads / kBlockTriads;  // 15
inline constexpr int kGroupTriads = 16;

inline constexpr int kRegionCount = 4;  // R1..R3 hold ops, R4 sequence words
inline constexpr size_t kOpRowBytes = 8;
inline constexpr size_t kSeqRowBytes = 4;

// Index of the array holding physical address `phys` and its first address.
int ArrayOf(uint16_t phys);
uint16_t ArrayBase(int array);

// Global readout row of a physical address and the inverse.
uint32_t ReadoutRow(uint16_t phys);
uint16_t RowToPhysical(uint32_t row);

// Op and sequence words as stored, before decoding.
struct RawTriad {
  std::array<uint64_t, 3> ops{};
  uint32_t seq = 0;

  static RawTriad FromTriad(const Triad& t);
  // nullopt when any word is not a recognized operation.
  std::optional<Triad> Decode() const;

  friend bool operator==(const RawTriad&, const RawTriad&) = default;
};

struct RomReadout {
  // Row-major bytes per region, in global row order.
  std::array<std::vector<uint8_t>, kRegionCount> regions;
  std::set<uint32_t> unreadable;  // global row indices
};

struct CombinedTriad {
  uint16_t addr = 0;  // physical
  RawTriad raw;
  bool unreadable = false;
};

// Lays out physical triads 0x000..0xEFF as a readout (inverse of Combine).
RomReadout InterleaveTriads(std::span<const RawTriad> physical);
std::vector<CombinedTriad> CombineRegions(const RomReadout& readout);

// Readout files: "UCRO", region id u8, four u16 array sizes, then rows.
std::vector<uint8_t> SerializeRegion(const RomReadout& readout, int region);
void LoadRegion(std::span<const uint8_t> bytes, RomReadout& readout);
std::set<uint32_t> ParseUnreadableList(std::string_view text);

enum class PermTable : uint8_t { kNone, kT, kL };
enum class Direction : uint8_t { kLogToPhys, kPhysToLog };

struct BlockPermutation {
  PermTable table = PermTable::kNone;
  bool reverse = false;
  bool swap = false;
  int logical_block = 0;

  friend bool operator==(const BlockPermutation&, const BlockPermutation&) = default;
};

// Group translation for the table algorithms, physical group -> logical group.
int TableGroup(PermTable table, int group);
int InverseTableGroup(PermTable table, int group);

uint8_t ApplyBlockPermutation(uint8_t addr, const BlockPermutation& p, Direction dir);

struct MappingConfig {
  std::array<BlockPermutation, kBlockCount> blocks{};  // indexed by physical block

  static MappingConfig Identity();
  // Throws MappingError unless logical blocks form a bijection and L is only
  // used (without explicit R/S) for the final logical block.
  void Validate() const;
  uint16_t PhysicalToLogical(uint16_t phys) const;
  uint16_t LogicalToPhysical(uint16_t logical) const;

  friend bool operator==(const MappingConfig&, const MappingConfig&) = default;
};

MappingConfig ParseMappingConfig(std::string_view text);
std::string FormatMappingConfig(const MappingConfig& cfg);
// Example configuration shipped as data/default.map. Not the historical K8 map.
MappingConfig DefaultMappingConfig();
MappingConfig RandomMappingConfig(std::mt19937_64& rng);

// Register assignment used for semantic probing.
struct ProbeState {
  std::array<uint32_t, 6> gpr{};
  std::array<uint64_t, kTemporaryCount> temps{};

  static ProbeState Primary();
  static ProbeState Perturbed();
  void ApplyTo(Machine& m) const;
};

struct SemanticsReport {
  std::map<uint16_t, Changeset> semantics;
  size_t excluded_unreadable = 0;
  size_t excluded_unknown = 0;
  size_t excluded_control = 0;  // transfers, faults, side effects
  size_t excluded_constant = 0;  // result does not depend on the input
};

SemanticsReport EmulatePhysicalSemantics(std::span<const CombinedTriad> triads,
                                         const ProbeState& input = ProbeState::Primary());

// Executes each logical ROM triad of `machine` on its own.
SemanticsReport ProbeLogicalSemantics(const Machine& machine,
                                      const ProbeState& input = ProbeState::Primary());

struct AddressPair {
  uint16_t logical = 0;
  uint16_t physical = 0;

  friend auto operator<=>(const AddressPair&, const AddressPair&) = default;
};

std::vector<AddressPair> CorrelateChangesets(const std::map<uint16_t, Changeset>& physical,
                                             const std::map<uint16_t, Changeset>& logical);

struct RecoveryResult {
  MappingConfig config = MappingConfig::Identity();
  std::array<bool, kBlockCount> determined{};
  std::array<size_t, kBlockCount> pair_count{};
};

RecoveryResult RecoverMapping(std::span<const AddressPair> pairs);

// Physical ROM contents with `unique_per_block` triads of distinct semantics
// per block; the remaining triads are nop.
std::vector<RawTriad> SyntheticPhysicalRom(int unique_per_block, std::mt19937_64& rng);
// Logical ROM as seen by the engine under `cfg`. Undecodable triads become nop.
std::vector<Triad> LogicalRom(std::span<const RawTriad> physical, const MappingConfig& cfg);

}  // namespace ucode

#endif  // UCODE_ROM_MAP_HPP_
