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

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "text_util.hpp"
#include "ucode/cli.hpp"
#include "ucode/defenses.hpp"
#include "ucode/engine.hpp"
#include "ucode/error.hpp"
#include "ucode/rom_map.hpp"
#include "ucode/rtl.hpp"
#include "ucode/tea.hpp"
#include "ucode/update.hpp"

namespace py = pybind11;

namespace ucode {
namespace {

std::span<const uint8_t> Span(const std::string& s) {
  return {reinterpret_cast<const uint8_t*>(s.data()), s.size()};
}

py::bytes Bytes(const std::vector<uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

TeaKey Key(const std::string& hex) {
  const auto k = TeaKey::FromHex(hex);
  if (!k) throw Error("key must be 32 hex digits");
  return *k;
}

Gpr GprByName(const std::string& name) {
  for (int g = 0; g < 8; ++g) {
    if (GprName(static_cast<Gpr>(g)) == name) return static_cast<Gpr>(g);
  }
  throw Error("unknown register '" + name + "'");
}

py::object FaultDict(const std::optional<Fault>& f) {
  if (!f) return py::none();
  py::dict d;
  d["kind"] = std::string(FaultKindName(f->kind));
  d["addr"] = f->addr;
  d["size"] = f->size;
  return d;
}

MachineConfig Config(uint32_t mem_size, const std::optional<std::string>& key) {
  MachineConfig cfg;
  cfg.mem_size = mem_size;
  if (key) cfg.installed_key = Key(*key);
  return cfg;
}

MappingConfig MapConfig(const std::optional<std::string>& text) {
  return text ? ParseMappingConfig(*text) : DefaultMappingConfig();
}

}  // namespace
}  // namespace ucode

PYBIND11_MODULE(_ucode, m) {
  using namespace ucode;
  m.doc() = "Microcode toolchain and emulator";
  py::register_exception<Error>(m, "UcodeError", PyExc_ValueError);

  // Assembler.
  m.def(
      "assemble",
      [](const std::string& text, uint16_t origin) { return Bytes(TriadsToBytes(Assemble(text, origin))); },
      py::arg("text"), py::arg("origin") = 0);
  m.def("disassemble", [](const py::bytes& b) {
    return Disassemble(TriadsFromBytes(Span(std::string(b))));
  });
  m.def("encode_op", [](const std::string& line) { return EncodeOp(ParseOp(line)); });
  m.def("decode_op", [](uint64_t word) { return FormatOp(DecodeOp(word)); });

  // TEA.
  m.def("tea_encrypt", [](const std::string& key, uint64_t block) {
    return TeaEncryptBlock(Key(key), block);
  });
  m.def("tea_decrypt", [](const std::string& key, uint64_t block) {
    return TeaDecryptBlock(Key(key), block);
  });
  m.def("cbc_mac", [](const std::string& key, const py::bytes& msg) {
    return CbcMac(Key(key), Span(std::string(msg)));
  });

  // ROM mapping.
  m.def("default_mapping_config", [] { return FormatMappingConfig(DefaultMappingConfig()); });
  m.def(
      "logical_to_physical",
      [](uint16_t addr, const std::optional<std::string>& cfg) {
        return MapConfig(cfg).LogicalToPhysical(addr);
      },
      py::arg("addr"), py::arg("config") = py::none());
  m.def(
      "physical_to_logical",
      [](uint16_t addr, const std::optional<std::string>& cfg) {
        return MapConfig(cfg).PhysicalToLogical(addr);
      },
      py::arg("addr"), py::arg("config") = py::none());
  m.def(
      "recover_synthetic_mapping",
      [](uint64_t seed, int unique_per_block) {
        std::mt19937_64 rng(seed);
        const auto planted = RandomMappingConfig(rng);
        const auto phys = SyntheticPhysicalRom(unique_per_block, rng);
        MachineConfig mc;
        mc.stock_rom = false;
        Machine machine(mc);
        machine.engine().rom = LogicalRom(phys, planted);
        const auto ps = EmulatePhysicalSemantics(CombineRegions(InterleaveTriads(phys)));
        const auto ls = ProbeLogicalSemantics(machine);
        const auto pairs = CorrelateChangesets(ps.semantics, ls.semantics);
        const auto r = RecoverMapping(pairs);
        return py::make_tuple(FormatMappingConfig(planted), FormatMappingConfig(r.config),
                              pairs.size());
      },
      py::arg("seed"), py::arg("unique_per_block") = 8);

  // Updates.
  m.def(
      "pack_update",
      [](const std::string& rtl, const std::vector<std::pair<uint16_t, uint16_t>>& matches) {
        UpdateFile u;
        u.triads = Assemble(rtl, kPatchRamBase);
        for (const auto& [rom, ram] : matches) u.matches.push_back({rom, ram});
        return Bytes(PackUpdate(u));
      },
      py::arg("rtl"), py::arg("matches") = std::vector<std::pair<uint16_t, uint16_t>>{});
  m.def("sign_update", [](const py::bytes& b, const std::string& key) {
    return Bytes(PackUpdate(SignUpdate(ParseUpdate(Span(std::string(b))), Key(key))));
  });
  m.def("verify_update", [](const py::bytes& b, const std::string& key) {
    return VerifyUpdate(Span(std::string(b)), Key(key));
  });
  m.def("rdtsc_update", [](int zero_bits) { return Bytes(PackUpdate(BuildRdtscProgram(zero_bits))); });
  m.def(
      "hwasan_update",
      [](const std::string& mode, uint32_t shadow_offset, uint32_t callback) {
        HwasanParams p;
        const auto rm = ReportModeFromName(mode);
        if (!rm) throw Error("unknown report mode '" + mode + "'");
        p.mode = *rm;
        p.shadow_offset = shadow_offset;
        p.callback_addr = callback;
        return Bytes(PackUpdate(BuildHwasanProgram(p)));
      },
      py::arg("mode") = "access_violation", py::arg("shadow_offset") = 0x8000,
      py::arg("callback") = 0);
  m.def(
      "hook_update",
      [](const std::string& target, uint32_t filter, uint32_t handler) {
        HookSpec h;
        const auto mn = MnemonicFromName(target);
        if (!mn) throw Error("unknown instruction '" + target + "'");
        h.target = *mn;
        h.filter_value = filter;
        h.handler_addr = handler;
        Machine stock;
        return Bytes(PackUpdate(BuildHookProgram(h, stock.engine())));
      },
      py::arg("target") = "shrd", py::arg("filter"), py::arg("handler") = 0x00400100);
  m.def(
      "isr_update",
      [](const std::optional<std::string>& assignment) {
        const IsrAssignment a = assignment ? ParseIsrAssignment(*assignment) : IsrAssignment{};
        Machine stock;
        return Bytes(PackUpdate(BuildIsrProgram(a, stock.engine())));
      },
      py::arg("assignment") = py::none());
  m.def(
      "transpile",
      [](const std::string& program, const std::optional<std::string>& assignment,
         const std::map<std::string, uint32_t>& symbols) {
        const IsrAssignment a = assignment ? ParseIsrAssignment(*assignment) : IsrAssignment{};
        return TranspileIsr(program, a, SymbolTable(symbols.begin(), symbols.end()));
      },
      py::arg("program"), py::arg("assignment") = py::none(),
      py::arg("symbols") = std::map<std::string, uint32_t>{});
  m.def("detect_hooks", [](const py::bytes& b) {
    const auto list = DetectorInstructions();
    std::vector<std::pair<std::string, int64_t>> out;
    for (const auto& r : DetectHooks([] { return Machine(); }, Span(std::string(b)), list)) {
      out.emplace_back(std::string(MnemonicName(r.mnemonic)), r.delta_cycles);
    }
    return out;
  });
  m.def("attest", [](uint64_t challenge, const std::string& key) {
    Machine machine;
    ProvisionEnclave(machine, Key(key));
    return EnclaveAttest(machine, challenge);
  });
  m.def("cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = CliMain(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });

  py::class_<Machine>(m, "Machine")
      .def(py::init([](uint32_t mem_size, const std::optional<std::string>& key) {
             return Machine(Config(mem_size, key));
           }),
           py::arg("mem_size") = 64 * 1024, py::arg("key") = py::none())
      .def(
          "apply_update",
          [](Machine& self, const py::bytes& b, bool authenticated) {
            return ApplyUpdate(self, Span(std::string(b)),
                               authenticated ? ApplyMode::kAuthenticated : ApplyMode::kPlain)
                .cycles;
          },
          py::arg("update"), py::arg("authenticated") = false)
      .def("measure",
           [](const Machine& self, const std::string& instr) {
             X86Instruction in;
             if (const auto mn = MnemonicFromName(instr)) {
               in = CanonicalInstruction(*mn);
             } else {
               in = ParseX86Instruction(instr);
             }
             return self.MeasureInstruction(in).cycles;
           })
      .def("dispatch",
           [](Machine& self, const std::string& instr) {
             const auto r = self.Dispatch(ParseX86Instruction(instr));
             py::dict d;
             d["cycles"] = r.cycles;
             d["triads"] = r.triads;
             d["microcoded"] = r.microcoded;
             d["fault"] = FaultDict(r.fault);
             d["redirect"] = r.redirect ? py::cast(r.redirect->target) : py::none();
             return d;
           })
      .def(
          "run",
          [](Machine& self, const std::string& program,
             const std::map<std::string, uint32_t>& symbols) {
            const auto r = self.RunProgram(
                ParseX86Program(program, SymbolTable(symbols.begin(), symbols.end())));
            py::dict d;
            d["cycles"] = r.total_cycles;
            d["halted"] = r.halted;
            d["fault"] = FaultDict(r.fault);
            d["trace"] = FormatTraceText(r.trace);
            return d;
          },
          py::arg("program"), py::arg("symbols") = std::map<std::string, uint32_t>{})
      .def("get_reg", [](const Machine& self, const std::string& r) { return self.host().reg(GprByName(r)); })
      .def("set_reg",
           [](Machine& self, const std::string& r, uint32_t v) { self.host().reg(GprByName(r)) = v; })
      .def("load32",
           [](const Machine& self, uint32_t addr) {
             const auto v = self.host().Load(addr, 4);
             if (!v) throw Error("address out of range");
             return static_cast<uint32_t>(*v);
           })
      .def("store32",
           [](Machine& self, uint32_t addr, uint32_t v) {
             if (!self.host().Store(addr, 4, v)) throw Error("address out of range");
           })
      .def("store8",
           [](Machine& self, uint32_t addr, uint8_t v) {
             if (!self.host().Store(addr, 1, v)) throw Error("address out of range");
           })
      .def_property(
          "tsc", [](const Machine& self) { return self.host().tsc; },
          [](Machine& self, uint64_t v) { self.host().tsc = v; })
      .def("memory", [](const Machine& self) { return Bytes(self.host().memory); });
}
