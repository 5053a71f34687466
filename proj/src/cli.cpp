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

#include "ucode/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "text_util.hpp"
#include "ucode/defenses.hpp"
#include "ucode/engine.hpp"
#include "ucode/error.hpp"
#include "ucode/rom_map.hpp"
#include "ucode/rtl.hpp"
#include "ucode/stock_rom.hpp"
#include "ucode/update.hpp"

namespace ucode {

namespace {

using nlohmann::json;
using text::Hex;

std::vector<uint8_t> ReadBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string ReadText(const std::string& path) {
  const auto b = ReadBytes(path);
  return {b.begin(), b.end()};
}

void WriteBytes(const std::string& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

void WriteText(const std::string& path, std::string_view s) {
  WriteBytes(path, std::span(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

std::string Join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

uint64_t Number(const std::string& s, const std::string& what) {
  const auto v = text::ParseNumber(text::Trim(s));
  if (!v) throw Error("bad " + what + " '" + s + "'");
  return *v;
}

TeaKey Key(const std::string& hex) {
  const auto k = TeaKey::FromHex(hex);
  if (!k) throw Error("key must be 32 hex digits");
  return *k;
}

Gpr GprFromName(const std::string& name) {
  for (int g = 0; g < 8; ++g) {
    if (GprName(static_cast<Gpr>(g)) == text::Lower(name)) return static_cast<Gpr>(g);
  }
  throw Error("unknown register '" + name + "'");
}

RegisterId FilterRegister(const std::string& name) {
  const std::string n = text::Lower(name);
  if (n.size() >= 2 && n[0] == 't') {
    const auto idx = text::ParseNumber(n.substr(1));
    if (idx && *idx < kTemporaryCount) return RegisterId::Temp(static_cast<int>(*idx));
  }
  const RegisterId r = RegisterId::X86(GprFromName(n));
  if (!r.IsMicrocodeGpr()) throw Error("filter register must be visible to microcode");
  return r;
}

json FaultJson(const std::optional<Fault>& f) {
  if (!f) return nullptr;
  return {{"kind", FaultKindName(f->kind)}, {"addr", f->addr}, {"size", f->size}};
}

std::string FaultText(const std::optional<Fault>& f) {
  if (!f) return "none";
  return std::string(FaultKindName(f->kind)) + " addr=" + Hex(f->addr) +
         " size=" + std::to_string(f->size);
}

json RegistersJson(const HostState& h) {
  json j;
  for (int g = 0; g < 8; ++g) j[std::string(GprName(static_cast<Gpr>(g)))] = h.gpr[g];
  j["eip"] = h.eip;
  j["tsc"] = h.tsc;
  j["flags"] = {{"zf", h.flags.zf}, {"cf", h.flags.cf}, {"sf", h.flags.sf}};
  return j;
}

std::string RegistersText(const HostState& h) {
  std::string s;
  for (int g = 0; g < 8; ++g) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s=0x%08x%s", std::string(GprName(static_cast<Gpr>(g))).c_str(),
                  h.gpr[g], g == 3 ? "\n" : " ");
    s += buf;
  }
  s += "\neip=" + Hex(h.eip) + " tsc=" + std::to_string(h.tsc) +
       " zf=" + std::to_string(h.flags.zf) + " cf=" + std::to_string(h.flags.cf) +
       " sf=" + std::to_string(h.flags.sf) + "\n";
  return s;
}

// Shared machine options: memory size, key, updates to load.
struct MachineOptions {
  uint32_t mem_size = 64 * 1024;
  std::string key;
  std::vector<std::string> updates;
  bool authenticated = false;

  void Add(CLI::App* app, bool with_updates = true) {
    app->add_option("--mem-size", mem_size, "Host memory size in bytes");
    app->add_option("--key", key, "Installed TEA key (32 hex digits)");
    if (with_updates) {
      app->add_option("--update", updates, "Update file to apply (repeatable)");
      app->add_flag("--authenticated", authenticated, "Apply updates in authenticated mode");
    }
  }

  Machine Build() const {
    MachineConfig cfg;
    cfg.mem_size = mem_size;
    if (!key.empty()) cfg.installed_key = Key(key);
    Machine m(cfg);
    for (const auto& path : updates) {
      ApplyUpdate(m, ReadBytes(path), authenticated ? ApplyMode::kAuthenticated
                                                    : ApplyMode::kPlain);
    }
    m.host().tsc = 0;
    return m;
  }
};

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int Run(const std::vector<std::string>& args) {
    CLI::App app{"Microcode toolchain and emulator", "ucodetool"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--format", format_, "Output format")
        ->check(CLI::IsMember({"text", "json"}));
    app.add_option("--seed", seed_, "Seed for randomized commands");
    AddAsm(app);
    AddDisasm(app);
    AddRom(app);
    AddEmu(app);
    AddUpdate(app);
    AddTranspile(app);
    AddDetect(app);
    AddDemo(app);
    AddAttest(app);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      out_ << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << "\n" << app.help();
      return kExitUsage;
    }
    try {
      action_();
    } catch (const Error& e) {
      err_ << "error: " << e.what() << "\n";
      return kExitDomainError;
    }
    return kExitOk;
  }

 private:
  bool Json() const { return format_ == "json"; }
  void Emit(const json& j) { out_ << j.dump(2) << "\n"; }

  template <typename F>
  void On(CLI::App* sub, F f) {
    sub->callback([this, f] { action_ = f; });
  }

  void AddAsm(CLI::App& app) {
    auto* sub = app.add_subcommand("asm", "Assemble RTL into a binary triad stream");
    auto* input = Own<std::string>();
    auto* output = Own<std::string>();
    auto* origin = Own<std::string>("0");
    sub->add_option("input", *input, "RTL source")->required();
    sub->add_option("-o,--output", *output, "Output file")->required();
    sub->add_option("--origin", *origin, "Address of the first triad");
    On(sub, [=, this] {
      const auto triads =
          Assemble(ReadText(*input), static_cast<uint16_t>(Number(*origin, "origin")));
      const auto bytes = TriadsToBytes(triads);
      WriteBytes(*output, bytes);
      if (Json()) {
        Emit({{"triads", triads.size()}, {"bytes", bytes.size()}, {"output", *output}});
      } else {
        out_ << triads.size() << " triads, " << bytes.size() << " bytes -> " << *output << "\n";
      }
    });
  }

  void AddDisasm(CLI::App& app) {
    auto* sub = app.add_subcommand("disasm", "Disassemble a binary triad stream");
    auto* input = Own<std::string>();
    sub->add_option("input", *input, "Triad stream")->required();
    On(sub, [=, this] {
      const auto triads = TriadsFromBytes(ReadBytes(*input));
      if (Json()) {
        json arr = json::array();
        for (const auto& t : triads) {
          json ops = json::array();
          for (const auto& op : t.ops) ops.push_back(FormatOp(op));
          std::string seq = "next";
          if (t.seq.action == SeqAction::kComplete) seq = "complete";
          if (t.seq.action == SeqAction::kBranch) seq = "branch " + Hex(t.seq.target);
          arr.push_back({{"ops", ops}, {"seq", seq}});
        }
        Emit(arr);
      } else {
        out_ << Disassemble(triads);
      }
    });
  }

  void AddRom(CLI::App& app) {
    auto* rom = app.add_subcommand("rom", "ROM readout and address mapping");
    rom->require_subcommand(1);

    auto* combine = rom->add_subcommand("combine", "Combine R1..R4 readouts into triads");
    auto* regions = Own<std::vector<std::string>>();
    auto* unreadable = Own<std::string>();
    auto* output = Own<std::string>();
    combine->add_option("regions", *regions, "Region files R1 R2 R3 R4")
        ->required()
        ->expected(4);
    combine->add_option("--unreadable", *unreadable, "Unreadable row list");
    combine->add_option("-o,--output", *output, "Physical triad stream");
    On(combine, [=, this] {
      const auto readout = LoadReadout(*regions, *unreadable);
      const auto triads = CombineRegions(readout);
      size_t bad = 0, unknown = 0;
      std::vector<uint8_t> bytes;
      for (const auto& t : triads) {
        bad += t.unreadable;
        unknown += !t.raw.Decode().has_value();
        for (uint64_t w : t.raw.ops) {
          for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(w >> (8 * i)));
        }
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(t.raw.seq >> (8 * i)));
      }
      if (!output->empty()) WriteBytes(*output, bytes);
      if (Json()) {
        Emit({{"triads", triads.size()}, {"unreadable", bad}, {"unrecognized", unknown}});
      } else {
        out_ << triads.size() << " triads, " << bad << " unreadable, " << unknown
             << " with unrecognized operations\n";
      }
    });

    auto* map = rom->add_subcommand("map", "Translate between logical and physical addresses");
    auto* config = Own<std::string>();
    auto* logical = Own<std::string>();
    auto* physical = Own<std::string>();
    map->add_option("--config", *config, "Mapping config (default: built-in example)");
    auto* lo = map->add_option("--logical", *logical, "Logical address");
    auto* ph = map->add_option("--physical", *physical, "Physical address");
    lo->excludes(ph);
    On(map, [=, this] {
      const MappingConfig cfg =
          config->empty() ? DefaultMappingConfig() : ParseMappingConfig(ReadText(*config));
      if (logical->empty() && physical->empty()) {
        throw Error("one of --logical or --physical is required");
      }
      uint16_t l, p;
      if (!logical->empty()) {
        l = static_cast<uint16_t>(Number(*logical, "address"));
        if (Number(*logical, "address") > 0xFFFF) throw MappingError("address out of range");
        p = cfg.LogicalToPhysical(l);
      } else {
        p = static_cast<uint16_t>(Number(*physical, "address"));
        if (Number(*physical, "address") > 0xFFFF) throw MappingError("address out of range");
        l = cfg.PhysicalToLogical(p);
      }
      if (Json()) {
        Emit({{"logical", l}, {"physical", p}, {"block", p / kBlockTriads}});
      } else {
        out_ << "logical " << Hex(l) << " -> physical " << Hex(p) << "\n";
      }
    });

    auto* synth = rom->add_subcommand("synth", "Write a synthetic ROM with a planted mapping");
    auto* dir = Own<std::string>();
    auto* unique = Own<int>(8);
    synth->add_option("-o,--output-dir", *dir, "Directory for the generated files")->required();
    synth->add_option("--unique", *unique, "Distinguishable triads per block");
    On(synth, [=, this] {
      std::mt19937_64 rng(seed_);
      const auto cfg = RandomMappingConfig(rng);
      const auto phys = SyntheticPhysicalRom(*unique, rng);
      const auto readout = InterleaveTriads(phys);
      std::error_code ec;
      std::filesystem::create_directories(*dir, ec);
      for (int r = 0; r < kRegionCount; ++r) {
        WriteBytes(Join(*dir, "r" + std::to_string(r + 1) + ".bin"), SerializeRegion(readout, r));
      }
      WriteBytes(Join(*dir, "logical.bin"), TriadsToBytes(LogicalRom(phys, cfg)));
      WriteText(Join(*dir, "planted.map"), FormatMappingConfig(cfg));
      if (Json()) {
        Emit({{"dir", *dir}, {"seed", seed_}});
      } else {
        out_ << "wrote r1..r4.bin, logical.bin and planted.map to " << *dir << "\n";
      }
    });

    auto* recover = rom->add_subcommand("recover", "Recover the mapping by semantic correlation");
    auto* rregions = Own<std::vector<std::string>>();
    auto* runreadable = Own<std::string>();
    auto* logical_rom = Own<std::string>();
    auto* routput = Own<std::string>();
    recover->add_option("regions", *rregions, "Region files R1 R2 R3 R4")
        ->required()
        ->expected(4);
    recover->add_option("--unreadable", *runreadable, "Unreadable row list");
    recover->add_option("--logical-rom", *logical_rom, "Logical ROM image to probe")->required();
    recover->add_option("-o,--output", *routput, "Write the recovered config");
    On(recover, [=, this] {
      const auto readout = LoadReadout(*rregions, *runreadable);
      const auto phys = EmulatePhysicalSemantics(CombineRegions(readout));
      MachineConfig mc;
      mc.stock_rom = false;
      Machine m(mc);
      auto rom_triads = TriadsFromBytes(ReadBytes(*logical_rom));
      if (rom_triads.size() != kRomTriads) throw MappingError("logical ROM must hold 0xF00 triads");
      m.engine().rom = std::move(rom_triads);
      const auto log = ProbeLogicalSemantics(m);
      const auto pairs = CorrelateChangesets(phys.semantics, log.semantics);
      const auto result = RecoverMapping(pairs);
      const std::string text = FormatMappingConfig(result.config);
      if (!routput->empty()) WriteText(*routput, text);
      if (Json()) {
        json blocks = json::array();
        for (int b = 0; b < kBlockCount; ++b) {
          const auto& p = result.config.blocks[b];
          blocks.push_back({{"block", b},
                            {"determined", result.determined[b]},
                            {"pairs", result.pair_count[b]},
                            {"table", p.table == PermTable::kNone ? "none"
                                      : p.table == PermTable::kT  ? "T"
                                                                  : "L"},
                            {"R", p.reverse},
                            {"S", p.swap},
                            {"logical", p.logical_block}});
        }
        Emit({{"pairs", pairs.size()}, {"blocks", blocks}});
      } else {
        out_ << pairs.size() << " address pairs\n";
        std::istringstream lines(text);
        std::string line;
        for (int b = 0; std::getline(lines, line); ++b) {
          out_ << line << (result.determined[b] ? "" : "  ; undetermined") << "\n";
        }
      }
    });
  }

  void AddEmu(CLI::App& app) {
    auto* emu = app.add_subcommand("emu", "Run the emulator");
    emu->require_subcommand(1);

    auto* run = emu->add_subcommand("run", "Run an x86 program and print its trace");
    auto* program = Own<std::string>();
    auto* opts = Own<MachineOptions>();
    auto* sets = Own<std::vector<std::string>>();
    auto* symbols = Own<std::vector<std::string>>();
    run->add_option("program", *program, "x86 assembly file")->required();
    opts->Add(run);
    run->add_option("--set", *sets, "Initial register or memory: eax=1, [0x10]=5");
    run->add_option("--symbol", *symbols, "Symbol definition name=value");
    On(run, [=, this] {
      Machine m = opts->Build();
      for (const auto& s : *sets) ApplySet(m, s);
      const auto p = ParseX86Program(ReadText(*program), ParseSymbols(*symbols));
      const auto r = m.RunProgram(p);
      if (Json()) {
        json trace = json::array();
        std::istringstream lines(FormatTraceJson(r.trace));
        std::string line;
        while (std::getline(lines, line)) trace.push_back(json::parse(line));
        Emit({{"trace", trace},
              {"total_cycles", r.total_cycles},
              {"halted", r.halted},
              {"fault", FaultJson(r.fault)},
              {"registers", RegistersJson(m.host())}});
      } else {
        out_ << FormatTraceText(r.trace);
        out_ << "total cycles: " << r.total_cycles << "\n";
        if (r.fault) out_ << "fault: " << FaultText(r.fault) << "\n";
        out_ << RegistersText(m.host());
      }
    });

    auto* bench = emu->add_subcommand("bench", "Measure an instruction with the TSC harness");
    auto* instr = Own<std::string>();
    auto* bopts = Own<MachineOptions>();
    bench->add_option("--instr", *instr, "Mnemonic or full instruction")->required();
    bopts->Add(bench);
    On(bench, [=, this] {
      const Machine m = bopts->Build();
      X86Instruction in;
      if (const auto mn = MnemonicFromName(text::Lower(*instr))) {
        in = CanonicalInstruction(*mn);
      } else {
        in = ParseX86Instruction(*instr);
      }
      const auto r = m.MeasureInstruction(in);
      if (Json()) {
        Emit({{"instruction", FormatX86(in)},
              {"cycles", r.cycles},
              {"raw_delta", r.raw_delta},
              {"harness_overhead", r.harness_overhead},
              {"fault", FaultJson(r.fault)},
              {"redirected", r.redirected}});
      } else {
        out_ << r.cycles << "\n";
      }
    });
  }

  void AddUpdate(CLI::App& app) {
    auto* up = app.add_subcommand("update", "Microcode update files");
    up->require_subcommand(1);

    auto* pack = up->add_subcommand("pack", "Assemble RTL into an update file");
    auto* source = Own<std::string>();
    auto* matches = Own<std::vector<std::string>>();
    auto* output = Own<std::string>();
    pack->add_option("source", *source, "RTL program for patch RAM (origin 0xF00)")->required();
    pack->add_option("--match", *matches, "Match entry rom_addr:ram_index (repeatable)");
    pack->add_option("-o,--output", *output, "Update file")->required();
    On(pack, [=, this] {
      UpdateFile u;
      u.triads = Assemble(ReadText(*source), kPatchRamBase);
      for (const auto& m : *matches) {
        const auto colon = m.find(':');
        if (colon == std::string::npos) throw Error("match entry must be rom_addr:ram_index");
        const auto rom = Number(m.substr(0, colon), "rom address");
        const auto ram = Number(m.substr(colon + 1), "ram index");
        if (rom > 0xFFFF || ram > 0xFFFF) throw UpdateError("match entry out of range");
        u.matches.push_back({static_cast<uint16_t>(rom), static_cast<uint16_t>(ram)});
      }
      const auto bytes = PackUpdate(u);
      WriteBytes(*output, bytes);
      ReportUpdate(ParseUpdate(bytes), bytes.size());
    });

    auto* sign = up->add_subcommand("sign", "Sign an update");
    auto* sin = Own<std::string>();
    auto* skey = Own<std::string>();
    auto* sout = Own<std::string>();
    sign->add_option("input", *sin, "Update file")->required();
    sign->add_option("--key", *skey, "TEA key (32 hex digits)")->required();
    sign->add_option("-o,--output", *sout, "Signed update file")->required();
    On(sign, [=, this] {
      const auto u = SignUpdate(ParseUpdate(ReadBytes(*sin)), Key(*skey));
      const auto bytes = PackUpdate(u);
      WriteBytes(*sout, bytes);
      ReportUpdate(u, bytes.size());
    });

    auto* verify = up->add_subcommand("verify", "Verify a signed update");
    auto* vin = Own<std::string>();
    auto* vkey = Own<std::string>();
    verify->add_option("input", *vin, "Update file")->required();
    verify->add_option("--key", *vkey, "TEA key (32 hex digits)")->required();
    On(verify, [=, this] {
      const bool ok = VerifyUpdate(ReadBytes(*vin), Key(*vkey));
      if (Json()) {
        Emit({{"valid", ok}});
      } else {
        out_ << (ok ? "valid" : "invalid") << "\n";
      }
      if (!ok) throw UpdateError("verification failed");
    });

    auto* apply = up->add_subcommand("apply", "Apply an update to a fresh engine");
    auto* ain = Own<std::string>();
    auto* aopts = Own<MachineOptions>();
    apply->add_option("input", *ain, "Update file")->required();
    aopts->Add(apply, false);
    apply->add_flag("--authenticated", aopts->authenticated, "Verify against the installed key");
    On(apply, [=, this] {
      Machine m = aopts->Build();
      const auto r = ApplyUpdate(m, ReadBytes(*ain), aopts->authenticated
                                                         ? ApplyMode::kAuthenticated
                                                         : ApplyMode::kPlain);
      if (Json()) {
        json matches = json::array();
        for (const auto& e : r.update.matches) {
          matches.push_back({{"rom_addr", e.rom_addr}, {"ram_index", e.ram_index}});
        }
        Emit({{"cycles", r.cycles}, {"triads", r.update.triads.size()}, {"matches", matches}});
      } else {
        out_ << "applied " << r.update.triads.size() << " triads, " << r.update.matches.size()
             << " match registers, " << r.cycles << " cycles\n";
      }
    });
  }

  void AddTranspile(CLI::App& app) {
    auto* sub = app.add_subcommand("transpile", "Rewrite x86 for instruction set randomization");
    auto* map = Own<std::string>();
    auto* input = Own<std::string>();
    auto* output = Own<std::string>();
    auto* symbols = Own<std::vector<std::string>>();
    sub->add_option("--map", *map, "Assignment file (default: shipped assignment)");
    sub->add_option("input", *input, "x86 assembly")->required();
    sub->add_option("--symbol", *symbols, "Symbol definition name=offset");
    sub->add_option("-o,--output", *output, "Output file");
    On(sub, [=, this] {
      const IsrAssignment a = map->empty() ? IsrAssignment{} : ParseIsrAssignment(ReadText(*map));
      const std::string out = TranspileIsr(ReadText(*input), a, ParseSymbols(*symbols));
      if (!output->empty()) {
        WriteText(*output, out);
      } else if (Json()) {
        Emit({{"program", out}});
      } else {
        out_ << out;
      }
    });
  }

  void AddDetect(CLI::App& app) {
    auto* sub = app.add_subcommand("detect", "Report instructions whose timing an update changes");
    auto* update = Own<std::string>();
    auto* opts = Own<MachineOptions>();
    sub->add_option("--update", *update, "Update under test")->required();
    opts->Add(sub, false);
    sub->add_flag("--authenticated", opts->authenticated, "Apply in authenticated mode");
    On(sub, [=, this] {
      const auto instrs = DetectorInstructions();
      const auto report =
          DetectHooks([opts] { return opts->Build(); }, ReadBytes(*update), instrs,
                      opts->authenticated ? ApplyMode::kAuthenticated : ApplyMode::kPlain);
      if (Json()) {
        json arr = json::array();
        for (const auto& r : report) {
          arr.push_back({{"mnemonic", MnemonicName(r.mnemonic)},
                         {"baseline", r.baseline_cycles},
                         {"delta", r.delta_cycles}});
        }
        Emit({{"measured", instrs.size()}, {"hooks", arr}});
      } else {
        for (const auto& r : report) {
          out_ << MnemonicName(r.mnemonic) << " " << (r.delta_cycles > 0 ? "+" : "")
               << r.delta_cycles << "\n";
        }
        if (report.empty()) out_ << "no timing differences\n";
      }
    });
  }

  void AddDemo(CLI::App& app) {
    auto* demo = app.add_subcommand("demo", "Build and run a defense microprogram");
    demo->require_subcommand(1);
    auto* output = Own<std::string>();

    auto* rdtsc = demo->add_subcommand("rdtsc", "Reduced-precision rdtsc");
    auto* zero_bits = Own<int>(8);
    rdtsc->add_option("--zero-bits", *zero_bits, "Low TSC bits to clear")->required();
    rdtsc->add_option("-o,--output", *output, "Write the update file");
    On(rdtsc, [=, this] {
      const auto bytes = PackUpdate(BuildRdtscProgram(*zero_bits));
      if (!output->empty()) WriteBytes(*output, bytes);
      Machine m;
      ApplyUpdate(m, bytes, ApplyMode::kPlain);
      const uint64_t cycles = m.MeasureInstruction(ParseX86Instruction("rdtsc")).cycles;
      std::mt19937_64 rng(seed_);
      m.host().tsc = rng() >> 16;
      const uint64_t tsc = m.host().tsc;
      m.Dispatch(ParseX86Instruction("rdtsc"));
      const uint32_t eax = m.host().reg(Gpr::kEax);
      const uint32_t edx = m.host().reg(Gpr::kEdx);
      if (Json()) {
        Emit({{"cycles", cycles}, {"tsc", tsc}, {"eax", eax}, {"edx", edx}});
      } else {
        out_ << "rdtsc cycles: " << cycles << "\n"
             << "tsc " << Hex(tsc) << " -> edx:eax " << Hex(edx) << ":" << Hex(eax) << "\n";
      }
    });

    auto* hwasan = demo->add_subcommand("hwasan", "Shadow-memory checks in bound");
    auto* mode = Own<std::string>("access_violation");
    auto* callback = Own<std::string>("0x00400100");
    hwasan->add_option("--mode", *mode, "access_violation | bound_range | x86_callback");
    hwasan->add_option("--callback", *callback, "Handler address for x86_callback");
    hwasan->add_option("-o,--output", *output, "Write the update file");
    On(hwasan, [=, this] {
      HwasanParams p;
      const auto rm = ReportModeFromName(*mode);
      if (!rm) throw Error("unknown report mode '" + *mode + "'");
      p.mode = *rm;
      p.callback_addr = static_cast<uint32_t>(Number(*callback, "callback address"));
      const auto bytes = PackUpdate(BuildHwasanProgram(p));
      if (!output->empty()) WriteBytes(*output, bytes);
      Machine m;
      ApplyUpdate(m, bytes, ApplyMode::kPlain);
      // Granule 0x1008 has its first 4 bytes addressable.
      m.host().Store(p.shadow_offset + (0x1008 >> 3), 1, 4);
      json rows = json::array();
      for (uint32_t addr : {0x1000u, 0x1008u, 0x100Cu}) {
        Machine run = m;
        run.host().reg(Gpr::kEsi) = addr;
        const auto r = run.Dispatch(ParseX86Instruction("bound esi, [4]"));
        std::string verdict = r.fault ? "bug" : r.redirect ? "bug (callback)" : "valid";
        if (Json()) {
          rows.push_back({{"addr", addr},
                          {"size", 4},
                          {"cycles", r.cycles},
                          {"fault", FaultJson(r.fault)},
                          {"redirect", r.redirect ? json(r.redirect->target) : json(nullptr)}});
        } else {
          out_ << "check " << Hex(addr) << " size 4: " << verdict << ", " << r.cycles
               << " cycles" << (r.fault ? ", fault " + FaultText(r.fault) : "") << "\n";
        }
      }
      if (Json()) {
        Emit({{"mode", *mode}, {"checks", rows}, {"reference_cycles", kAsanX86ReferenceCycles}});
      } else {
        out_ << "reference x86 sequence: " << kAsanX86ReferenceCycles << " cycles\n";
      }
    });

    auto* hook = demo->add_subcommand("hook", "Instrumentation hook with a microcode filter");
    auto* target = Own<std::string>("shrd");
    auto* filter = Own<std::string>("0x1234");
    auto* reg = Own<std::string>("t1");
    auto* handler = Own<std::string>("0x00400100");
    hook->add_option("--target", *target, "Microcoded instruction to hook");
    hook->add_option("--filter", *filter, "Filter value")->required();
    hook->add_option("--filter-register", *reg, "Register compared with the filter value");
    hook->add_option("--handler", *handler, "x86 handler address");
    hook->add_option("-o,--output", *output, "Write the update file");
    On(hook, [=, this] {
      HookSpec h;
      const auto mn = MnemonicFromName(text::Lower(*target));
      if (!mn) throw Error("unknown instruction '" + *target + "'");
      h.target = *mn;
      h.filter_register = FilterRegister(*reg);
      h.filter_value = static_cast<uint32_t>(Number(*filter, "filter"));
      h.handler_addr = static_cast<uint32_t>(Number(*handler, "handler address"));
      Machine m;
      const auto bytes = PackUpdate(BuildHookProgram(h, m.engine()));
      if (!output->empty()) WriteBytes(*output, bytes);
      ApplyUpdate(m, bytes, ApplyMode::kPlain);
      const auto in = CanonicalInstruction(h.target);
      const auto miss = m.MeasureInstruction(in);
      Machine stock;
      const auto base = stock.MeasureInstruction(in);
      if (Json()) {
        Emit({{"target", MnemonicName(h.target)},
              {"stock_cycles", base.cycles},
              {"hooked_cycles", miss.cycles}});
      } else {
        out_ << MnemonicName(h.target) << ": stock " << base.cycles << " cycles, hooked "
             << miss.cycles << " cycles (filter not matched)\n";
      }
    });
  }

  void AddAttest(CLI::App& app) {
    auto* sub = app.add_subcommand("attest", "Challenge-response attestation in microcode");
    auto* challenge = Own<std::string>();
    auto* key = Own<std::string>("000102030405060708090a0b0c0d0e0f");
    sub->add_option("--challenge", *challenge, "64-bit challenge")->required();
    sub->add_option("--key", *key, "Enclave key (32 hex digits)");
    On(sub, [=, this] {
      const TeaKey k = Key(*key);
      Machine m;
      ProvisionEnclave(m, k);
      const uint64_t c = Number(*challenge, "challenge");
      const uint64_t tag = EnclaveAttest(m, c);
      const auto msg = ChallengeBytes(c);
      const bool ok = tag == CbcMac(k, msg);
      if (Json()) {
        Emit({{"challenge", c}, {"tag", Hex(tag)}, {"verified", ok}});
      } else {
        out_ << "tag " << Hex(tag) << (ok ? " (verified)" : " (MISMATCH)") << "\n";
      }
      if (!ok) throw Error("attestation tag does not verify");
    });
  }

  template <typename T, typename... Args>
  T* Own(Args&&... args) {
    auto holder = std::make_shared<T>(std::forward<Args>(args)...);
    T* raw = holder.get();
    owned_.push_back(std::move(holder));
    return raw;
  }

  RomReadout LoadReadout(const std::vector<std::string>& paths, const std::string& unreadable) {
    RomReadout readout;
    std::array<bool, kRegionCount> seen{};
    for (const auto& p : paths) {
      RomReadout one;
      LoadRegion(ReadBytes(p), one);
      for (int r = 0; r < kRegionCount; ++r) {
        if (one.regions[r].empty()) continue;
        if (seen[r]) throw MappingError("region R" + std::to_string(r + 1) + " given twice");
        seen[r] = true;
        readout.regions[r] = std::move(one.regions[r]);
      }
    }
    if (!unreadable.empty()) readout.unreadable = ParseUnreadableList(ReadText(unreadable));
    return readout;
  }

  SymbolTable ParseSymbols(const std::vector<std::string>& defs) {
    SymbolTable t;
    for (const auto& d : defs) {
      const auto eq = d.find('=');
      if (eq == std::string::npos) throw Error("symbol must be name=value");
      t[d.substr(0, eq)] = static_cast<uint32_t>(Number(d.substr(eq + 1), "symbol value"));
    }
    return t;
  }

  void ApplySet(Machine& m, const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("--set expects target=value");
    const std::string target(text::Trim(s.substr(0, eq)));
    const uint64_t v = Number(s.substr(eq + 1), "value");
    if (!target.empty() && target.front() == '[') {
      if (target.back() != ']') throw Error("bad memory target '" + target + "'");
      const auto addr = Number(target.substr(1, target.size() - 2), "address");
      if (!m.host().Store(static_cast<uint32_t>(addr), 4, v)) {
        throw Error("address " + Hex(addr) + " is outside host memory");
      }
    } else {
      m.host().reg(GprFromName(target)) = static_cast<uint32_t>(v);
    }
  }

  void ReportUpdate(const UpdateFile& u, size_t size) {
    if (Json()) {
      Emit({{"bytes", size},
            {"triads", u.triads.size()},
            {"matches", u.matches.size()},
            {"signed", u.is_signed()},
            {"tag", u.tag ? json(Hex(*u.tag)) : json(nullptr)}});
    } else {
      out_ << size << " bytes, " << u.triads.size() << " triads, " << u.matches.size()
           << " match entries" << (u.is_signed() ? ", tag " + Hex(*u.tag) : "") << "\n";
    }
  }

  std::ostream& out_;
  std::ostream& err_;
  std::string format_ = "text";
  uint64_t seed_ = 1;
  std::function<void()> action_;
  std::vector<std::shared_ptr<void>> owned_;
};

}  // namespace

int CliMain(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return Cli(out, err).Run(args);
}

}  // namespace ucode
