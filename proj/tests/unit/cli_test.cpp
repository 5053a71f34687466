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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ucode/cli.hpp"
#include "ucode/isa.hpp"
#include "ucode/rom_map.hpp"
#include "ucode/rtl.hpp"

namespace ucode {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun Cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = CliMain(args, out, err);
  return {code, out.str(), err.str()};
}

std::string Data(const std::string& name) { return std::string(UCODE_DATA_DIR) + "/" + name; }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ucodetool_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string Path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(Cli({}).code, kExitUsage);
  EXPECT_EQ(Cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(Cli({"asm"}).code, kExitUsage);
  EXPECT_EQ(Cli({"--format", "xml", "disasm", "x"}).code, kExitUsage);
  EXPECT_EQ(Cli({"--help"}).code, kExitOk);
}

TEST_F(CliTest, DomainErrors) {
  const CliRun r = Cli({"disasm", Path("missing.bin")});
  EXPECT_EQ(r.code, kExitDomainError);
  EXPECT_NE(r.err.find("cannot open"), std::string::npos);
  EXPECT_EQ(Cli({"rom", "map", "--logical", "0xF00"}).code, kExitDomainError);
}

TEST_F(CliTest, AsmDisasmRoundTrip) {
  ASSERT_EQ(Cli({"asm", Data("tsc_split.rtl"), "-o", Path("l1.bin")}).code, kExitOk);
  const CliRun d = Cli({"disasm", Path("l1.bin")});
  ASSERT_EQ(d.code, kExitOk);
  std::ifstream in(Data("tsc_split.rtl"));
  std::stringstream src;
  src << in.rdbuf();
  EXPECT_EQ(Assemble(d.out), Assemble(src.str()));
  const auto j = nlohmann::json::parse(Cli({"--format", "json", "disasm", Path("l1.bin")}).out);
  EXPECT_EQ(j.size(), 3u);
  EXPECT_EQ(j[2]["seq"], "complete");
}

TEST_F(CliTest, RomMapUsesConfig) {
  const CliRun r = Cli({"rom", "map", "--config", Data("default.map"), "--logical", "0x318"});
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("physical 0x316"), std::string::npos);
  const auto j = nlohmann::json::parse(
      Cli({"--format", "json", "rom", "map", "--config", Data("default.map"), "--physical", "0x316"})
          .out);
  EXPECT_EQ(j["logical"], 0x318);
}

TEST_F(CliTest, BenchShrd) {
  EXPECT_EQ(Cli({"emu", "bench", "--instr", "shrd"}).out, "2\n");
  EXPECT_EQ(Cli({"emu", "bench", "--instr", "rdtsc"}).out, "7\n");
}

TEST_F(CliTest, RomSynthRecover) {
  ASSERT_EQ(Cli({"--seed", "3", "rom", "synth", "-o", dir_.string()}).code, kExitOk);
  const CliRun r = Cli({"rom", "recover", Path("r1.bin"), Path("r2.bin"), Path("r3.bin"),
                     Path("r4.bin"), "--logical-rom", Path("logical.bin"), "-o", Path("rec.map")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream a(Path("rec.map")), b(Path("planted.map"));
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(Cli({"rom", "combine", Path("r1.bin"), Path("r2.bin"), Path("r3.bin"), Path("r4.bin")})
                .code,
            kExitOk);
}

TEST_F(CliTest, UpdateLifecycle) {
  {
    std::ofstream f(Path("u.rtl"));
    f << ".sw_complete\nadd t0d, t0d, 1\n";
  }
  const std::string key = "00112233445566778899aabbccddeeff";
  ASSERT_EQ(Cli({"update", "pack", Path("u.rtl"), "--match", "0x4A0:0", "-o", Path("u.bin")}).code,
            kExitOk);
  ASSERT_EQ(Cli({"update", "sign", Path("u.bin"), "--key", key, "-o", Path("s.bin")}).code,
            kExitOk);
  EXPECT_EQ(Cli({"update", "verify", Path("s.bin"), "--key", key}).code, kExitOk);
  EXPECT_EQ(Cli({"update", "verify", Path("u.bin"), "--key", key}).code, kExitDomainError);
  const CliRun apply =
      Cli({"update", "apply", Path("s.bin"), "--authenticated", "--key", key});
  EXPECT_EQ(apply.code, kExitOk);
  EXPECT_NE(apply.out.find("68525 cycles"), std::string::npos);
  EXPECT_NE(Cli({"update", "apply", Path("u.bin")}).out.find("5377 cycles"), std::string::npos);
  const CliRun det = Cli({"detect", "--update", Path("u.bin")});
  EXPECT_EQ(det.out, "shrd +4\n");
}

TEST_F(CliTest, Demos) {
  const CliRun rd = Cli({"demo", "rdtsc", "--zero-bits", "8"});
  EXPECT_NE(rd.out.find("rdtsc cycles: 15"), std::string::npos);
  const CliRun hook = Cli({"demo", "hook", "--target", "shrd", "--filter", "0x1234", "-o",
                        Path("hook.bin")});
  EXPECT_NE(hook.out.find("hooked 8 cycles"), std::string::npos);
  EXPECT_EQ(Cli({"detect", "--update", Path("hook.bin")}).out, "shrd +6\n");
  const auto hw = nlohmann::json::parse(Cli({"--format", "json", "demo", "hwasan"}).out);
  EXPECT_EQ(hw["checks"][0]["cycles"], 106);
  EXPECT_EQ(Cli({"demo", "hwasan", "--mode", "nope"}).code, kExitDomainError);
}

TEST_F(CliTest, TranspileReferenceProgram) {
  const CliRun r = Cli({"transpile", "--map", Data("isr_default.map"), Data("isr_native.asm"),
                     "--symbol", "msg0=0", "--symbol", "msg1=4", "--symbol", "rc=0x18"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("bound esi, [eax + 0x80003]"), std::string::npos);
}

TEST_F(CliTest, AttestAndRun) {
  const auto j = nlohmann::json::parse(
      Cli({"--format", "json", "attest", "--challenge", "0x0123456789abcdef"}).out);
  EXPECT_TRUE(j["verified"]);
  {
    std::ofstream f(Path("p.asm"));
    f << "mov eax, 5\nshrd eax, ecx, 1\nhlt\n";
  }
  const auto run = nlohmann::json::parse(
      Cli({"--format", "json", "emu", "run", Path("p.asm"), "--set", "ecx=1"}).out);
  EXPECT_EQ(run["registers"]["eax"], 0x80000002u);
  EXPECT_EQ(run["trace"].size(), 2u);
  EXPECT_TRUE(run["halted"]);
}

}  // namespace
}  // namespace ucode
