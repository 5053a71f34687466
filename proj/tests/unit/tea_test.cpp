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
#include <unordered_set>

#include "oracles.hpp"
#include "ucode/tea.hpp"

namespace ucode {
namespace {

TeaKey RandomKey(std::mt19937_64& rng) {
  TeaKey k;
  for (auto& w : k.words) w = static_cast<uint32_t>(rng());
  return k;
}

TEST(Tea, ZeroVector) {
  // Published TEA vector for an all-zero key and block.
  EXPECT_EQ(TeaEncryptBlock(TeaKey{}, 0), 0x41EA3A0A94BAA940ull);
  EXPECT_EQ(ucode_test::RefTeaBlock({0, 0, 0, 0}, 0), 0x41EA3A0A94BAA940ull);
}

TEST(Tea, MatchesReferenceAndInverts) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const TeaKey k = RandomKey(rng);
    const uint64_t b = rng();
    const uint64_t c = TeaEncryptBlock(k, b);
    ASSERT_EQ(c, ucode_test::RefTeaBlock(k.words, b));
    ASSERT_EQ(TeaDecryptBlock(k, c), b);
  }
}

TEST(Tea, NoCollisionsOnSample) {
  std::mt19937_64 rng(4);
  const TeaKey k = RandomKey(rng);
  std::unordered_set<uint64_t> in, out;
  for (int i = 0; i < 100000; ++i) {
    const uint64_t b = rng();
    if (!in.insert(b).second) continue;
    ASSERT_TRUE(out.insert(TeaEncryptBlock(k, b)).second);
  }
}

TEST(Tea, KeyHex) {
  const auto k = TeaKey::FromHex("0x00112233445566778899aabbccddeeff");
  ASSERT_TRUE(k);
  EXPECT_EQ(k->words[0], 0x00112233u);
  EXPECT_EQ(k->words[3], 0xCCDDEEFFu);
  EXPECT_EQ(k->ToHex(), "00112233445566778899aabbccddeeff");
  EXPECT_FALSE(TeaKey::FromHex("0011"));
  EXPECT_FALSE(TeaKey::FromHex("zz112233445566778899aabbccddeeff"));
}

TEST(CbcMac, EmptyMessageIsPaddingBlock) {
  std::mt19937_64 rng(5);
  const TeaKey k = RandomKey(rng);
  EXPECT_EQ(CbcMac(k, {}), TeaEncryptBlock(k, 0x8000000000000000ull));
}

TEST(CbcMac, MatchesReference) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 500; ++i) {
    const TeaKey k = RandomKey(rng);
    std::vector<uint8_t> msg(rng() % 70);
    for (auto& b : msg) b = static_cast<uint8_t>(rng());
    ASSERT_EQ(CbcMac(k, msg), ucode_test::RefCbcMac(k.words, msg));
  }
}

TEST(CbcMac, BitFlipsAndKeysChangeTag) {
  std::mt19937_64 rng(7);
  const TeaKey k = RandomKey(rng);
  std::vector<uint8_t> msg(1024);
  for (auto& b : msg) b = static_cast<uint8_t>(rng());
  const uint64_t tag = CbcMac(k, msg);
  for (int i = 0; i < 1000; ++i) {
    auto m = msg;
    m[rng() % m.size()] ^= static_cast<uint8_t>(1u << (rng() % 8));
    ASSERT_NE(CbcMac(k, m), tag);
  }
  for (int i = 0; i < 100; ++i) ASSERT_NE(CbcMac(RandomKey(rng), msg), tag);
}

}  // namespace
}  // namespace ucode
