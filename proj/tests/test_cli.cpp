#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "cat/bench.hpp"
#include "cat/gateway.hpp"
#include "cat/emulator.hpp"
#include "cat/guards.hpp"
#include "cat/verifier.hpp"
#include "corpus.hpp"

namespace fs = std::filesystem;
using namespace cat;

namespace {

struct CmdResult {
  int exit_code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() /
                 ("cat_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

CmdResult run_cmd(const std::string& cmd) {
  fs::path out = work_dir() / "stdout.txt";
  fs::path err = work_dir() / "stderr.txt";
  std::string full = cmd + " > " + out.string() + " 2> " + err.string();
  int rc = std::system(full.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string bin(const char* tool) {
  return std::string(CAT_BIN_DIR) + "/" + tool;
}

fs::path write_file(const std::string& name, const std::string& text) {
  fs::path p = work_dir() / name;
  std::ofstream out(p, std::ios::binary);
  out << text;
  return p;
}

fs::path write_bundle(const std::string& name, const bundle::CodeProofBundle& b) {
  auto bytes = bundle::encode_bundle(b);
  fs::path p = work_dir() / name;
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  return p;
}

}  // namespace

TEST_CASE("catgen produces a decodable bundle with the requested manifest") {
  fs::path src = write_file("store.s",
                            ".global main\nmain:\n    mov [rbx+8], rax\n    ret\n");
  fs::path out = work_dir() / "store.catb";
  CmdResult r = run_cmd(bin("catgen") + " " + src.string() + " -o " +
                        out.string() + " --policies p1");
  REQUIRE(r.exit_code == 0);
  std::string bytes = slurp(out);
  bundle::CodeProofBundle b = bundle::decode_bundle(std::vector<uint8_t>(
      bytes.begin(), bytes.end()));
  CHECK(b.manifest.policies == bundle::P1);
  CHECK(b.entry_symbol == "main");
}

TEST_CASE("catgen honors the ssa stride flag") {
  fs::path src = write_file("probe.s", corpus::kAexProbe);
  fs::path out = work_dir() / "probe.catb";
  CmdResult r = run_cmd(bin("catgen") + " " + src.string() + " -o " +
                        out.string() + " --policies p6 --ssa-k 20");
  REQUIRE(r.exit_code == 0);
  std::string bytes = slurp(out);
  auto b = bundle::decode_bundle(std::vector<uint8_t>(bytes.begin(), bytes.end()));
  CHECK(b.manifest.policies == bundle::P6);
  CHECK(b.manifest.ssa_stride_k == 20);
  CHECK(b.manifest.aex_threshold == 22);
}

TEST_CASE("catgen rejects unknown policies with a usage message") {
  fs::path src = write_file("any.s", ".global main\nmain:\n    ret\n");
  CmdResult r = run_cmd(bin("catgen") + " " + src.string() + " --policies p9");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("usage") != std::string::npos);
}

TEST_CASE("catgen reports parse errors on stderr") {
  fs::path src = write_file("bad.s", ".global main\nmain:\n    frobnicate\n");
  CmdResult r = run_cmd(bin("catgen") + " " + src.string());
  CHECK(r.exit_code == 1);
  CHECK(!r.err.empty());
}

TEST_CASE("catcheck accepts producer bundles and rejects mutants") {
  std::string src = corpus::generate_kernel(777);
  auto m = corpus::manifest_for(bundle::P1 | bundle::P2);
  fs::path good = write_bundle("good.catb", pipeline::produce(src, m));
  CmdResult ok = run_cmd(bin("catcheck") + " " + good.string());
  CHECK(ok.exit_code == 0);

  std::mt19937_64 rng(1);
  auto mutant = corpus::make_mutant(src, m, corpus::Mutation::DeleteStoreGuard, rng);
  REQUIRE(mutant.has_value());
  fs::path bad = write_bundle("bad.catb", *mutant);
  CmdResult rej = run_cmd(bin("catcheck") + " " + bad.string());
  CHECK(rej.exit_code == 2);
  CHECK(rej.out.find("MissingGuard") != std::string::npos);
}

TEST_CASE("catcheck exits 1 on truncated input") {
  fs::path p = write_file("trunc.catb", "CAT");  // not even a full magic
  CmdResult r = run_cmd(bin("catcheck") + " " + p.string());
  CHECK(r.exit_code == 1);
}

TEST_CASE("catrun completes an in-bounds service kernel end to end") {
  fs::path src = write_file("echo.s", corpus::kSvcEchoDigest);
  fs::path b = work_dir() / "echo.catb";
  REQUIRE(run_cmd(bin("catgen") + " " + src.string() + " -o " + b.string() +
                  " --policies all --mode ccaas")
              .exit_code == 0);
  std::vector<uint8_t> input = corpus::test_input();
  fs::path data = work_dir() / "input.bin";
  {
    std::ofstream out(data, std::ios::binary);
    out.write(reinterpret_cast<const char*>(input.data()),
              static_cast<std::streamsize>(input.size()));
  }
  fs::path transcript = work_dir() / "frames.bin";
  fs::path writelog = work_dir() / "writes.log";
  CmdResult r = run_cmd(bin("catrun") + " " + b.string() + " --data " +
                        data.string() + " --transcript " + transcript.string() +
                        " --write-log " + writelog.string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("status: completed") != std::string::npos);
  CHECK(r.out.find("output[0]") != std::string::npos);

  // the transcript carries quote, code, data and exactly one send frame
  std::string t = slurp(transcript);
  auto frames = gateway::decode_frames(
      std::vector<uint8_t>(t.begin(), t.end()));
  int sends = 0;
  for (const auto& f : frames)
    if (f.type == gateway::FrameType::Send) sends++;
  CHECK(sends == 1);

  // write-log lines have the documented `<step> <addr> <len>` shape
  std::istringstream wl(slurp(writelog));
  std::string line;
  REQUIRE(std::getline(wl, line));
  uint64_t step;
  std::string addr;
  int len;
  std::istringstream ls(line);
  ls >> step >> addr >> len;
  CHECK(addr.substr(0, 2) == "0x");
  CHECK(len > 0);
}

TEST_CASE("catrun reports violations with the 0xffffffff code") {
  fs::path src = write_file("oob.s", corpus::kAdvOobStoreLow);
  fs::path b = work_dir() / "oob.catb";
  REQUIRE(run_cmd(bin("catgen") + " " + src.string() + " -o " + b.string() +
                  " --policies p1")
              .exit_code == 0);
  CmdResult r = run_cmd(bin("catrun") + " " + b.string());
  CHECK(r.exit_code == 3);
  CHECK(r.out.find("violation") != std::string::npos);
  CHECK(r.out.find("0xffffffff") != std::string::npos);
}

TEST_CASE("catrun refuses unverifiable bundles with exit 2") {
  std::mt19937_64 rng(7);
  std::string src = corpus::generate_kernel(4242);
  auto m = corpus::manifest_for(bundle::P1);
  auto mutant = corpus::make_mutant(src, m, corpus::Mutation::DeleteStoreGuard, rng);
  REQUIRE(mutant.has_value());
  fs::path p = write_bundle("reject.catb", *mutant);
  CmdResult r = run_cmd(bin("catrun") + " " + p.string());
  CHECK(r.exit_code == 2);
  CHECK(r.out.find("MissingGuard") != std::string::npos);
}

TEST_CASE("catrun distinguishes faults and step limits") {
  fs::path src = write_file("overflow.s", corpus::kAdvStackOverflow);
  fs::path b = work_dir() / "overflow.catb";
  REQUIRE(run_cmd(bin("catgen") + " " + src.string() + " -o " + b.string() +
                  " --policies p1")
              .exit_code == 0);
  CmdResult fault = run_cmd(bin("catrun") + " " + b.string());
  CHECK(fault.exit_code == 4);
  CHECK(fault.out.find("guard-page") != std::string::npos);

  fs::path spin = write_file("spin.s", ".global main\nmain:\n.Ls:\n    jmp .Ls\n");
  fs::path sb = work_dir() / "spin.catb";
  REQUIRE(run_cmd(bin("catgen") + " " + spin.string() + " -o " + sb.string())
              .exit_code == 0);
  CmdResult limit = run_cmd(bin("catrun") + " " + sb.string() + " --step-limit 500");
  CHECK(limit.exit_code == 5);
}

TEST_CASE("catrun aborts a clustered AEX schedule at the default threshold") {
  // locate the injection window via an in-process trace, then hand the
  // schedule file to the CLI
  auto m = corpus::manifest_for(bundle::kAllPolicies);
  bundle::CodeProofBundle b = pipeline::produce(corpus::kAexProbe, m);
  loader::LoadedImage img = loader::load(b, loader::build_layout({}));
  verifier::VerificationReport rep = verifier::verify(img, m);
  REQUIRE(rep.accepted);
  loader::rewrite_immediates(img, rep.all_slots());
  loader::seal(img);
  emu::RunConfig cfg;
  cfg.trace_calls = true;
  std::vector<uint8_t> input = corpus::test_input();
  emu::ExecutionOutcome traced = emu::run(img, input, emu::recording_hooks(nullptr),
                                          cfg, rep.annotation_ranges(img.base));
  uint64_t ssa_addr = img.runtime_syms.at(guards::kSsaCheck);
  std::vector<uint64_t> checks;
  for (auto [step, target] : traced.call_trace)
    if (target == ssa_addr) checks.push_back(step);
  REQUIRE(checks.size() >= 2);

  fs::path bp = write_bundle("probe_aex.catb", b);
  fs::path data = work_dir() / "probe_input.bin";
  {
    std::ofstream out(data, std::ios::binary);
    out.write(reinterpret_cast<const char*>(input.data()),
              static_cast<std::streamsize>(input.size()));
  }
  auto schedule_file = [&](int n) {
    std::ostringstream lines;
    for (int i = 0; i < n; i++) lines << (checks[0] + 14 + i) << "\n";
    return write_file("aex_" + std::to_string(n) + ".txt", lines.str());
  };
  CmdResult ok = run_cmd(bin("catrun") + " " + bp.string() + " --data " +
                         data.string() + " --aex " + schedule_file(21).string());
  CHECK(ok.exit_code == 0);
  CmdResult bad = run_cmd(bin("catrun") + " " + bp.string() + " --data " +
                          data.string() + " --aex " + schedule_file(22).string());
  CHECK(bad.exit_code == 3);
}

TEST_CASE("catcheck agrees with the in-process verifier verdict") {
  std::mt19937_64 rng(99);
  for (uint64_t seed : {40ull, 41ull}) {
    std::string src = corpus::generate_kernel(seed);
    auto m = corpus::manifest_for(bundle::kAllPolicies);
    bundle::CodeProofBundle good = pipeline::produce(src, m);
    loader::LoadedImage img = loader::load(good, loader::build_layout({}));
    bool api_verdict = verifier::verify(img, m).accepted;
    fs::path p = write_bundle("agree.catb", good);
    CmdResult r = run_cmd(bin("catcheck") + " " + p.string());
    CHECK((r.exit_code == 0) == api_verdict);

    auto mutant =
        corpus::make_mutant(src, m, corpus::Mutation::RemoveShadowEpilog, rng);
    REQUIRE(mutant.has_value());
    loader::LoadedImage mimg = loader::load(*mutant, loader::build_layout({}));
    bool api_mut = verifier::verify(mimg, m).accepted;
    fs::path mp = write_bundle("agree_mut.catb", *mutant);
    CmdResult mr = run_cmd(bin("catcheck") + " " + mp.string());
    CHECK((mr.exit_code == 0) == api_mut);
    CHECK(mr.exit_code == 2);
  }
}

TEST_CASE("catbench reports the four granularities per kernel") {
  fs::path dir = work_dir() / "bench_kernels";
  fs::create_directories(dir);
  std::ofstream(dir / "k1.s") << corpus::generate_kernel(1010);
  fs::path csv = work_dir() / "bench.csv";
  CmdResult r = run_cmd(bin("catbench") + " " + dir.string() + " --csv " +
                        csv.string());
  REQUIRE(r.exit_code == 0);
  std::string table = slurp(csv);
  CHECK(table.find("name,policy_set,size_base,") == 0);
  CHECK(table.find("P1,") != std::string::npos);
  CHECK(table.find("P1+P2") != std::string::npos);
  CHECK(table.find("P1-P5") != std::string::npos);
  CHECK(table.find("P1-P6") != std::string::npos);
  int lines = 0;
  for (char c : table)
    if (c == '\n') lines++;
  CHECK(lines == 5);  // header + 4 rows
}

TEST_CASE("identical inputs give identical bundles and report bytes") {
  fs::path src = write_file("det.s", corpus::generate_kernel(5151));
  fs::path b1 = work_dir() / "det1.catb";
  fs::path b2 = work_dir() / "det2.catb";
  REQUIRE(run_cmd(bin("catgen") + " " + src.string() + " -o " + b1.string() +
                  " --policies all").exit_code == 0);
  REQUIRE(run_cmd(bin("catgen") + " " + src.string() + " -o " + b2.string() +
                  " --policies all").exit_code == 0);
  CHECK(slurp(b1) == slurp(b2));

  fs::path dir = work_dir() / "det_kernels";
  fs::create_directories(dir);
  std::ofstream(dir / "k.s") << corpus::generate_kernel(5252);
  fs::path c1 = work_dir() / "det1.csv";
  fs::path c2 = work_dir() / "det2.csv";
  REQUIRE(run_cmd(bin("catbench") + " " + dir.string() + " --csv " + c1.string())
              .exit_code == 0);
  REQUIRE(run_cmd(bin("catbench") + " " + dir.string() + " --csv " + c2.string())
              .exit_code == 0);
  CHECK(slurp(c1) == slurp(c2));
}

TEST_CASE("catbench on an empty directory emits an empty report") {
  fs::path dir = work_dir() / "empty_kernels";
  fs::create_directories(dir);
  CmdResult r = run_cmd(bin("catbench") + " " + dir.string());
  CHECK(r.exit_code == 0);
}
