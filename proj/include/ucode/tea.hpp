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

// TEA block cipher and the CBC-MAC used to authenticate microcode updates.
//
// Blocks are 64-bit values whose high half is the first TEA word. Byte
// strings map onto blocks big-endian, eight bytes at a time.

#ifndef UCODE_TEA_HPP_
#define UCODE_TEA_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace ucode {

struct TeaKey {
  std::array<uint32_t, 4> words{};

  // 32 hex digits, most significant word first; optional 0x prefix.
  static std::optional<TeaKey> FromHex(std::string_view hex);
  std::string ToHex() const;

  friend bool operator==(const TeaKey&, const TeaKey&) = default;
};

inline constexpr uint32_t kTeaDelta = 0x9E3779B9;
inline constexpr int kTeaRounds = 32;

uint64_t TeaEncryptBlock(const TeaKey& key, uint64_t block);
uint64_t TeaDecryptBlock(const TeaKey& key, uint64_t block);

// Zero IV, ISO/IEC 9797-1 padding method 2 (0x80 then zeros, always added),
// tag is the last chained block.
uint64_t CbcMac(const TeaKey& key, std::span<const uint8_t> message);

}  // namespace ucode

#endif  // UCODE_TEA_HPP_
