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

#include "ucode/update.hpp"

#include <algorithm>
#include <string>

#include "text_util.hpp"
#include "ucode/error.hpp"

namespace ucode {

namespace {

constexpr char kMagic[4] = {'U', 'C', 'U', 'P'};
constexpr size_t kMatchTableOffset = 12;
constexpr size_t kTriadCountOffset = kMatchTableOffset + 4 * kMaxMatchEntries;

void Put(std::vector<uint8_t>& out, uint64_t v, size_t n) {
  for (size_t i = 0; i < n; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint64_t Get(std::span<const uint8_t> b, size_t at, size_t n) {
  uint64_t v = 0;
  for (size_t i = 0; i < n; ++i) v |= uint64_t{b[at + i]} << (8 * i);
  return v;
}

void CheckFields(const UpdateFile& u) {
  if (u.matches.size() > kMaxMatchEntries) {
    throw UpdateError("too many match entries: " + std::to_string(u.matches.size()));
  }
  if (u.triads.size() > kPatchRamTriads) {
    throw UpdateError("triad count " + std::to_string(u.triads.size()) + " exceeds 32");
  }
  if (u.flags & ~kUpdateFlagSigned) throw UpdateError("unknown flag bits set");
  for (const auto& m : u.matches) {
    if (m.rom_addr >= kRomTriads) {
      throw UpdateError("match rom_addr " + text::Hex(m.rom_addr) + " is not a ROM address");
    }
    if (m.ram_index >= kPatchRamTriads) {
      throw UpdateError("match ram_index " + std::to_string(m.ram_index) + " out of range");
    }
  }
  if (u.is_signed() && (u.triads.size() != kPatchRamTriads || !u.tag)) {
    throw UpdateError("signed updates carry exactly 32 triads and a tag");
  }
  if (!u.is_signed() && u.tag) throw UpdateError("tag present on an unsigned update");
}

}  // namespace

std::vector<uint8_t> PackUpdate(const UpdateFile& u) {
  CheckFields(u);
  std::vector<uint8_t> out(std::begin(kMagic), std::end(kMagic));
  Put(out, u.version, 2);
  Put(out, u.flags, 2);
  Put(out, u.matches.size(), 4);
  for (int i = 0; i < kMaxMatchEntries; ++i) {
    const MatchEntry m = i < static_cast<int>(u.matches.size()) ? u.matches[i] : MatchEntry{};
    Put(out, m.rom_addr, 2);
    Put(out, m.ram_index, 2);
  }
  Put(out, u.triads.size(), 4);
  for (const auto& t : u.triads) AppendTriadBytes(t, out);
  if (u.tag) Put(out, *u.tag, kUpdateTagBytes);
  return out;
}

size_t UpdateLengthFromHeader(std::span<const uint8_t> b) {
  if (b.size() < kUpdateHeaderBytes) {
    throw UpdateError("truncated update: " + std::to_string(b.size()) + " bytes");
  }
  if (!std::equal(std::begin(kMagic), std::end(kMagic), b.begin())) {
    throw UpdateError("bad magic");
  }
  const auto flags = Get(b, 6, 2);
  const auto triads = b[kTriadCountOffset];
  if (triads > kPatchRamTriads) {
    throw UpdateError("triad count " + std::to_string(triads) + " exceeds 32");
  }
  return kUpdateHeaderBytes + triads * kTriadBytes +
         ((flags & kUpdateFlagSigned) ? kUpdateTagBytes : 0);
}

UpdateFile ParseUpdate(std::span<const uint8_t> b) {
  const size_t expected = UpdateLengthFromHeader(b);
  if (b.size() != expected) {
    throw UpdateError("length " + std::to_string(b.size()) + " does not match header (" +
                      std::to_string(expected) + " bytes)");
  }
  UpdateFile u;
  u.version = static_cast<uint16_t>(Get(b, 4, 2));
  u.flags = static_cast<uint16_t>(Get(b, 6, 2));
  const size_t match_count = b[8];
  if (match_count > kMaxMatchEntries) {
    throw UpdateError("match count " + std::to_string(match_count) + " exceeds 4");
  }
  if (Get(b, 9, 3) != 0 || Get(b, kTriadCountOffset + 1, 3) != 0) {
    throw UpdateError("nonzero padding");
  }
  for (size_t i = 0; i < kMaxMatchEntries; ++i) {
    const MatchEntry m{static_cast<uint16_t>(Get(b, kMatchTableOffset + 4 * i, 2)),
                       static_cast<uint16_t>(Get(b, kMatchTableOffset + 4 * i + 2, 2))};
    if (i < match_count) {
      u.matches.push_back(m);
    } else if (m != MatchEntry{}) {
      throw UpdateError("unused match entry " + std::to_string(i) + " is not zero");
    }
  }
  const size_t triads = b[kTriadCountOffset];
  try {
    for (size_t i = 0; i < triads; ++i) {
      u.triads.push_back(TriadFromBytes(b.subspan(kUpdateHeaderBytes + i * kTriadBytes,
                                                  kTriadBytes)));
    }
  } catch (const DecodeError& e) {
    throw UpdateError(std::string("bad triad: ") + e.what());
  }
  if (u.is_signed()) u.tag = Get(b, b.size() - kUpdateTagBytes, kUpdateTagBytes);
  CheckFields(u);
  return u;
}

UpdateFile SignUpdate(UpdateFile u, const TeaKey& key) {
  u.triads.resize(kPatchRamTriads);
  u.flags |= kUpdateFlagSigned;
  u.tag = 0;
  std::vector<uint8_t> body = PackUpdate(u);
  body.resize(body.size() - kUpdateTagBytes);
  u.tag = CbcMac(key, body);
  return u;
}

bool VerifyUpdate(std::span<const uint8_t> bytes, const TeaKey& key) {
  UpdateFile u;
  try {
    u = ParseUpdate(bytes);
  } catch (const UpdateError&) {
    return false;
  }
  if (!u.is_signed()) return false;
  return CbcMac(key, bytes.first(bytes.size() - kUpdateTagBytes)) == *u.tag;
}

ApplyResult ApplyUpdate(Machine& machine, std::span<const uint8_t> bytes, ApplyMode mode) {
  ApplyResult result;
  result.update = ParseUpdate(bytes);
  const UpdateFile& u = result.update;
  auto& engine = machine.engine();
  if (mode == ApplyMode::kAuthenticated) {
    if (!engine.installed_key) {
      throw UpdateError("authenticated update requested but no key is installed");
    }
    if (!VerifyUpdate(bytes, *engine.installed_key)) {
      throw UpdateError("update rejected: authentication failed");
    }
  }
  if (u.matches.size() > engine.match.size()) {
    throw UpdateError("update needs " + std::to_string(u.matches.size()) +
                      " match registers, engine has " + std::to_string(engine.match.size()));
  }
  engine.patch_ram.fill(Triad{});
  std::copy(u.triads.begin(), u.triads.end(), engine.patch_ram.begin());
  std::fill(engine.match.begin(), engine.match.end(), MatchRegister{});
  for (size_t i = 0; i < u.matches.size(); ++i) {
    engine.match[i] = {u.matches[i].rom_addr, static_cast<uint8_t>(u.matches[i].ram_index), true};
  }
  result.cycles = mode == ApplyMode::kAuthenticated ? kAuthenticatedApplyCycles
                                                    : kPlainApplyCycles;
  machine.host().tsc += result.cycles;
  return result;
}

void InstallPatchLoader(Machine& machine, ApplyMode mode) {
  machine.set_msr_write_hook([mode](Machine& m, uint32_t msr, uint64_t value) {
    MsrHookResult out;
    if (msr != kPatchLoaderMsr) return out;
    const auto addr = static_cast<uint32_t>(value);
    const auto& host = m.host();
    try {
      if (!host.InBounds(addr, kUpdateHeaderBytes)) throw UpdateError("header out of bounds");
      const auto mem = std::span(host.memory).subspan(addr - host.mem_base);
      const size_t len = UpdateLengthFromHeader(mem);
      if (!host.InBounds(addr, static_cast<uint32_t>(len))) {
        throw UpdateError("update out of bounds");
      }
      const std::vector<uint8_t> bytes(mem.begin(), mem.begin() + len);
      const uint64_t tsc = m.host().tsc;
      out.extra_cycles = ApplyUpdate(m, bytes, mode).cycles;
      m.host().tsc = tsc;  // charged by the dispatching instruction
    } catch (const UpdateError&) {
      out.fault = Fault{FaultKind::kGeneralProtection, addr, 0};
    }
    return out;
  });
}

}  // namespace ucode
