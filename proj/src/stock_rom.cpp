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

#include "ucode/stock_rom.hpp"

#include "ucode/error.hpp"
#include "ucode/rtl.hpp"

namespace ucode {

namespace {

// edx:eax <- TSC. The trailing triads stand in for the privilege and
// serialization checks of the real routine.
constexpr char kRdtscSource[] = R"(
  dbg t9q, TSC
  srl.q rdx, t9q, 32
  srl.q rax, t9q, 0
  nop
  nop
  nop
  nop
  nop
  nop
  nop
  nop
  nop
  nop
  nop
  nop
.sw_complete
  nop
  nop
  nop
)";

// t0 <- low 32 bits of (t1:t0) >> t2
constexpr char kShrdSource[] = R"(
.sw_complete
  sll.q t3q, t1q, 32
  or.q t3q, t3q, t0q
  srl.q t0q, t3q, t2q
)";

// Signed range check of t0 against the pair at [t1 + t2].
constexpr char kBoundSource[] = R"(
  add t3d, t1d, t2d
  ld t4d, [t3d]
  ld t5d, [t3d + 4]
  cmp t0d, t4d
  jl out_of_range
  cmp t0d, t5d
.sw_complete
  jg out_of_range
  nop
  nop
out_of_range:
.sw_complete
  mov t6d, 2
  writeout UFLAGS, t6d
  nop
)";

// MSR[ecx] <- edx:eax, kernel mode only.
constexpr char kWrmsrSource[] = R"(
  dbg t3d, UFLAGS
  and t3d, t3d, 0x100
  cmp t3d, 0
.sw_complete
  jnz privileged
  writeout UFLAGS, t3d, 1
  nop
privileged:
.sw_complete
  mov t3d, 3
  writeout UFLAGS, t3d
  nop
)";

struct Routine {
  X86Mnemonic mnemonic;
  uint16_t entry;
  const char* source;
};

constexpr Routine kRoutines[] = {
    {X86Mnemonic::kRdtsc, kRdtscEntry, kRdtscSource},
    {X86Mnemonic::kShrd, kShrdEntry, kShrdSource},
    {X86Mnemonic::kBound, kBoundEntry, kBoundSource},
    {X86Mnemonic::kWrmsr, kWrmsrEntry, kWrmsrSource},
};

}  // namespace

std::string StockRoutineSource(X86Mnemonic m) {
  for (const auto& r : kRoutines) {
    if (r.mnemonic == m) return r.source;
  }
  throw EngineError("no stock microcode routine for '" +
                    std::string(MnemonicName(m)) + "'");
}

void InstallStockRom(EngineState& engine) {
  engine.rom.assign(kRomTriads, Triad{});
  for (const auto& r : kRoutines) {
    const auto triads = Assemble(r.source, r.entry);
    for (size_t i = 0; i < triads.size(); ++i) engine.rom[r.entry + i] = triads[i];
    engine.entry_table[static_cast<size_t>(r.mnemonic)] = {true, r.entry};
  }
}

}  // namespace ucode
