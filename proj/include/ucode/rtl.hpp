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

// Textual RTL assembler and disassembler.
//
// One micro-op per line, `;` starts a comment. Three-operand forms put the
// destination first; two-operand ALU forms reuse the destination as first
// source. `.q`, `.d`, `.w` and `.b` suffixes select the operand size (default
// `.d`, or the view of the first register named). Ops are packed three per
// triad and short triads are padded with `nop`.
//
// `.sw_complete` and `.sw_branch <addr|label>` set the sequence word of the
// triad being filled; at a triad boundary they bind to the triad that follows,
// which therefore still executes. `label:` starts a new triad.

#ifndef UCODE_RTL_HPP_
#define UCODE_RTL_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ucode/isa.hpp"

namespace ucode {

// `origin` is the address of the first triad; labels resolve against it.
std::vector<Triad> Assemble(std::string_view text, uint16_t origin = 0);

std::string Disassemble(std::span<const Triad> triads);

// Single-op helpers used by the disassembler and error messages.
std::string FormatOp(const MicroOp& op);
MicroOp ParseOp(std::string_view line);

}  // namespace ucode

#endif  // UCODE_RTL_HPP_
