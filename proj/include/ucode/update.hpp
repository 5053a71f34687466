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

// Microcode update files and the (plain or authenticated) loader.
//
// Layout, little-endian:
//   "UCUP" | version u16 | flags u16 | match_count u8, 3 pad
//   | 4 x {rom_addr u16, ram_index u16} | triad_count u8, 3 pad
//   | triad_count x 28-byte triads | tag u64 (signed files only)
// The tag is the TEA CBC-MAC of every byte before it.

#ifndef UCODE_UPDATE_HPP_
#define UCODE_UPDATE_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ucode/engine.hpp"
#include "ucode/isa.hpp"
#include "ucode/tea.hpp"

namespace ucode {

inline constexpr int kMaxMatchEntries = 4;
inline constexpr size_t kUpdateHeaderBytes = 32;
inline constexpr size_t kUpdateTagBytes = 8;
inline constexpr uint16_t kUpdateVersion = 1;
inline constexpr uint16_t kUpdateFlagSigned = 1u << 0;

// Calibrated loader costs.
inline constexpr uint64_t kPlainApplyCycles = 5377;
inline constexpr uint64_t kAuthenticatedApplyCycles = 68525;

// Writing the guest address of an update to this MSR starts the loader.
inline constexpr uint32_t kPatchLoaderMsr = 0xC0010020;

struct MatchEntry {
  uint16_t rom_addr = 0;
  uint16_t ram_index = 0;

  friend bool operator==(const MatchEntry&, const MatchEntry&) = default;
};

struct UpdateFile {
  uint16_t version = kUpdateVersion;
  uint16_t flags = 0;
  std::vector<MatchEntry> matches;
  std::vector<Triad> triads;
  std::optional<uint64_t> tag;

  bool is_signed() const { return (flags & kUpdateFlagSigned) != 0; }

  friend bool operator==(const UpdateFile&, const UpdateFile&) = default;
};

// Throws UpdateError when a field invariant does not hold.
std::vector<uint8_t> PackUpdate(const UpdateFile& update);
UpdateFile ParseUpdate(std::span<const uint8_t> bytes);
// Total file length implied by a header; throws on a malformed header.
size_t UpdateLengthFromHeader(std::span<const uint8_t> header);

// Pads to 32 nop triads, sets the signed flag and appends the tag.
UpdateFile SignUpdate(UpdateFile update, const TeaKey& key);
// True when `bytes` parse as a signed update whose tag matches `key`.
bool VerifyUpdate(std::span<const uint8_t> bytes, const TeaKey& key);

enum class ApplyMode : uint8_t { kPlain, kAuthenticated };

struct ApplyResult {
  uint64_t cycles = 0;
  UpdateFile update;
};

// Loads an update into patch RAM and programs the match registers. In
// authenticated mode the file is checked against the machine's installed key
// first; a rejected file leaves the machine untouched and throws UpdateError.
// The loader cost is added to the host TSC.
ApplyResult ApplyUpdate(Machine& machine, std::span<const uint8_t> bytes, ApplyMode mode);

// Installs an MSR write hook that loads the update stored at the written
// guest address whenever kPatchLoaderMsr is written.
void InstallPatchLoader(Machine& machine, ApplyMode mode);

}  // namespace ucode

#endif  // UCODE_UPDATE_HPP_
