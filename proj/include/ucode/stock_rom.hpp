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

// Synthetic stock microcode ROM. Only the entry routines of the microcoded
// x86 instructions carry code; every other triad is an all-zero nop triad.
//
// Routine lengths are calibrated so the default cycle model reproduces the
// measured stock costs: rdtsc runs 6 triads (7 cycles), shrd 1 triad
// (2 cycles).

#ifndef UCODE_STOCK_ROM_HPP_
#define UCODE_STOCK_ROM_HPP_

#include <cstdint>
#include <string>

#include "ucode/engine.hpp"

namespace ucode {

inline constexpr uint16_t kRdtscEntry = 0x318;
inline constexpr uint16_t kShrdEntry = 0x4A0;
inline constexpr uint16_t kBoundEntry = 0x5C0;
inline constexpr uint16_t kWrmsrEntry = 0x7E0;

// RTL source of every stock routine, keyed by its entry address.
std::string StockRoutineSource(X86Mnemonic m);

// Writes the stock routines into `engine.rom` and marks rdtsc, shrd, bound
// and wrmsr as microcoded in the entry table.
void InstallStockRom(EngineState& engine);

}  // namespace ucode

#endif  // UCODE_STOCK_ROM_HPP_
