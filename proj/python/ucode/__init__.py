# Copyright 2026 The ucode Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Microcode toolchain and emulator."""

from ucode._ucode import (  # noqa: F401
    Machine,
    UcodeError,
    assemble,
    attest,
    cbc_mac,
    cli,
    decode_op,
    default_mapping_config,
    detect_hooks,
    disassemble,
    encode_op,
    hook_update,
    hwasan_update,
    isr_update,
    logical_to_physical,
    pack_update,
    physical_to_logical,
    rdtsc_update,
    recover_synthetic_mapping,
    sign_update,
    tea_decrypt,
    tea_encrypt,
    transpile,
    verify_update,
)

__version__ = "0.1.0"
