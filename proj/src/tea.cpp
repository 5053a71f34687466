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

#include "ucode/tea.hpp"


#include "text_util.hpp"

namespace ucode {

std::optional<TeaKey> TeaKey::FromHex(std::string_view hex) {
  hex = text::Trim(hex);
  if (hex.size() > 2 && hex[0] == '0' && (hex[1] == 'x' || hex[1] == 'X')) {
    hex.remove_prefix(2);
  }
  if (hex.size() != 32) return std::nullopt;
  TeaKey key;
  for (int i = 0; i < 4; ++i) {
    const auto word = text::ParseNumber("0x" + std::string(hex.substr(8 * i, 8)));
    if (!word) return std::nullopt;
    key.words[i] = static_cast<uint32_t>(*word);
  }
  return key;
}

std::string TeaKey::ToHex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (uint32_t w : words) {
    for (int shift = 28; shift >= 0; shift -= 4) out += kDigits[(w >> shift) & 0xF];
  }
  return out;
}

uint64_t TeaEncryptBlock(const TeaKey& key, uint64_t block) {
  uint32_t v0 = static_cast<uint32_t>(block >> 32);
  uint32_t v1 = static_cast<uint32_t>(block);
  const auto& k = key.words;
  uint32_t sum = 0;
  for (int i = 0; i < kTeaRounds; ++i) {
    sum += kTeaDelta;
    v0 += ((v1 << 4) + k[0]) ^ (v1 + sum) ^ ((v1 >> 5) + k[1]);
    v1 += ((v0 << 4) + k[2]) ^ (v0 + sum) ^ ((v0 >> 5) + k[3]);
  }
  return (uint64_t{v0} << 32) | v1;
}

uint64_t TeaDecryptBlock(const TeaKey& key, uint64_t block) {
  uint32_t v0 = static_cast<uint32_t>(block >> 32);
  uint32_t v1 = static_cast<uint32_t>(block);
  const auto& k = key.words;
  uint32_t sum = kTeaDelta * kTeaRounds;
  for (int i = 0; i < kTeaRounds; ++i) {
    v1 -= ((v0 << 4) + k[2]) ^ (v0 + sum) ^ ((v0 >> 5) + k[3]);
    v0 -= ((v1 << 4) + k[0]) ^ (v1 + sum) ^ ((v1 >> 5) + k[1]);
    sum -= kTeaDelta;
  }
  return (uint64_t{v0} << 32) | v1;
}

uint64_t CbcMac(const TeaKey& key, std::span<const uint8_t> message) {
  uint64_t state = 0;
  const size_t padded = (message.size() / 8 + 1) * 8;
  for (size_t off = 0; off < padded; off += 8) {
    uint64_t block = 0;
    for (size_t i = 0; i < 8; ++i) {
      const size_t at = off + i;
      uint8_t byte = 0;
      if (at < message.size()) {
        byte = message[at];
      } else if (at == message.size()) {
        byte = 0x80;
      }
      block = (block << 8) | byte;
    }
    state = TeaEncryptBlock(key, state ^ block);
  }
  return state;
}

}  // namespace ucode
