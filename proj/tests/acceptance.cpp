// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one pass/fail line per criterion.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "cat/bench.hpp"
#include "cat/emulator.hpp"
#include "cat/gateway.hpp"
#include "cat/guards.hpp"
#include "cat/verifier.hpp"
#include "corpus.hpp"

using namespace cat;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& what) {
  printf("%s criterion-%d: %s\n", ok ? "PASS" : "FAIL", criterion, what.c_str());
  fflush(stdout);
  if (!ok) g_failures++;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Prepared {
  loader::LoadedImage img;
  std::vector<std::pair<uint64_t, uint64_t>> annotations;
  bool ok = false;
  std::string err;
};

Prepared prepare(const std::string& src, const bundle::PolicyManifest& m) {
  Prepared p;
  try {
    bundle::CodeProofBundle b = pipeline::produce(src, m);
    p.img = loader::load(b, loader::build_layout({}));
    verifier::VerificationReport rep = verifier::verify(p.img, m);
    if (!rep.accepted) {
      p.err = "verification rejected";
      return p;
    }
    loader::rewrite_immediates(p.img, rep.all_slots());
    loader::seal(p.img);
    p.annotations = rep.annotation_ranges(p.img.base);
    p.ok = true;
  } catch (const std::exception& e) {
    p.err = e.what();
  }
  return p;
}

const uint8_t kLadderP1 = bundle::P1;
const uint8_t kLadderP12 = bundle::P1 | bundle::P2;
const uint8_t kLadderP15 =
    bundle::P1 | bundle::P2 | bundle::P3 | bundle::P4 | bundle::P5;
const uint8_t kLadderP16 = bundle::kAllPolicies;

// Untrusted writes outside the contiguous writable window.
bool audit_clean(const emu::ExecutionOutcome& out, const loader::EnclaveLayout& l) {
  for (const auto& w : out.write_log)
    if (!w.trusted && (w.addr < l.writable_lo() || w.addr + w.len > l.writable_hi()))
      return false;
  return true;
}

int run_tool(const std::string& cmd) {
  int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "cat_acceptance";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// ---------------------------------------------------------------------------

void criterion1_soundness() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(20240817);
  std::vector<uint8_t> sets = {kLadderP1, kLadderP12, kLadderP15, kLadderP16};

  int valid_total = 0, valid_accepted = 0;
  int mutants_total = 0, mutants_rejected = 0;
  int cli_checked = 0, cli_agree = 0;
  std::ostringstream detail;

  for (int i = 0; i < 20; i++) {
    std::string src = corpus::generate_kernel(9000 + i);
    auto m = corpus::manifest_for(sets[i % sets.size()]);
    bundle::CodeProofBundle b;
    try {
      b = pipeline::produce(src, m);
    } catch (const std::exception& e) {
      detail << " produce failed on seed " << 9000 + i << ": " << e.what();
      valid_total++;
      continue;
    }
    valid_total++;
    loader::LoadedImage img = loader::load(b, loader::build_layout({}));
    verifier::VerificationReport rep = verifier::verify(img, m);
    if (rep.accepted) valid_accepted++;
    else detail << " valid bundle " << i << " rejected;";

    if (i < 2) {  // bind the verdicts to the actual catcheck binary
      fs::path p = temp_dir() / ("c1_valid_" + std::to_string(i) + ".catb");
      auto bytes = bundle::encode_bundle(b);
      std::ofstream(p, std::ios::binary)
          .write(reinterpret_cast<const char*>(bytes.data()),
                 static_cast<std::streamsize>(bytes.size()));
      cli_checked++;
      if (run_tool(std::string(CAT_BIN_DIR) + "/catcheck " + p.string()) == 0)
        cli_agree++;
    }

    for (corpus::Mutation kind : corpus::mutations_for(m)) {
      auto mutant = corpus::make_mutant(src, m, kind, rng);
      if (!mutant) continue;
      mutants_total++;
      loader::LoadedImage mimg = loader::load(*mutant, loader::build_layout({}));
      verifier::VerificationReport mrep = verifier::verify(mimg, m);
      bool rejected = !mrep.accepted;
      // a mutant that somehow verifies must still fail placeholder hygiene
      if (!rejected) {
        try {
          loader::rewrite_immediates(mimg, mrep.all_slots());
        } catch (const loader::LoaderError&) {
          rejected = true;
        }
      }
      if (rejected) mutants_rejected++;
      else detail << " mutant " << corpus::mutation_name(kind) << " on kernel "
                  << i << " accepted;";
      if (mutants_total <= 2) {
        fs::path p =
            temp_dir() / ("c1_mut_" + std::to_string(mutants_total) + ".catb");
        auto bytes = bundle::encode_bundle(*mutant);
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes.data()),
                   static_cast<std::streamsize>(bytes.size()));
        cli_checked++;
        if (run_tool(std::string(CAT_BIN_DIR) + "/catcheck " + p.string()) == 2)
          cli_agree++;
      }
    }
  }
  double dt = seconds_since(t0);
  bool ok = valid_total >= 20 && valid_accepted == valid_total &&
            mutants_total >= 100 && mutants_rejected == mutants_total &&
            cli_agree == cli_checked && dt < 60.0;
  std::ostringstream os;
  os << "verifier soundness: " << valid_accepted << "/" << valid_total
     << " valid accepted, " << mutants_rejected << "/" << mutants_total
     << " mutants rejected, " << cli_agree << "/" << cli_checked
     << " catcheck spot checks, " << dt << "s" << detail.str();
  report(1, ok, os.str());
}

void criterion2_confinement() {
  auto m = corpus::manifest_for(kLadderP15);
  std::vector<uint8_t> input = corpus::test_input();
  bool ok = true;
  std::ostringstream detail;

  // benign corpus kernels complete with a clean audit
  for (const auto& [name, src] : corpus::load_kernel_dir(CAT_KERNEL_DIR)) {
    Prepared p = prepare(src, m);
    if (!p.ok) {
      ok = false;
      detail << " " << name << ": " << p.err << ";";
      continue;
    }
    emu::ExecutionOutcome out =
        emu::run(p.img, input, emu::recording_hooks(nullptr), {}, p.annotations);
    if (out.status != emu::Status::Completed || !audit_clean(out, p.img.layout)) {
      ok = false;
      detail << " " << name << ": " << emu::status_name(out.status) << ";";
    }
  }

  // adversarial variants abort with the canonical code and a clean audit
  struct Adv {
    const char* name;
    const char* src;
  };
  for (Adv a : {Adv{"oob-store-low", corpus::kAdvOobStoreLow},
                Adv{"oob-store-high", corpus::kAdvOobStoreHigh},
                Adv{"off-list-call", corpus::kAdvOffListCall},
                Adv{"ret-corrupt", corpus::kAdvRetCorrupt}}) {
    Prepared p = prepare(a.src, m);
    if (!p.ok) {
      ok = false;
      detail << " " << a.name << ": " << p.err << ";";
      continue;
    }
    emu::ExecutionOutcome out =
        emu::run(p.img, input, emu::recording_hooks(nullptr), {}, p.annotations);
    if (out.status != emu::Status::Violation || out.violation_code != 0xFFFFFFFF ||
        !audit_clean(out, p.img.layout)) {
      ok = false;
      detail << " " << a.name << ": " << emu::status_name(out.status) << " code "
             << std::hex << out.violation_code << std::dec << ";";
    }
  }
  report(2, ok,
         "runtime confinement: corpus + adversarial variants, write-log audit "
         "inside the writable window" +
             detail.str());
}

void criterion3_aex_threshold() {
  auto m = corpus::manifest_for(kLadderP16);
  bool defaults_ok = m.aex_threshold == 22 && m.ssa_stride_k == 20;
  Prepared p = prepare(corpus::kAexProbe, m);
  if (!p.ok || !defaults_ok) {
    report(3, false, "aex threshold: setup failed: " + p.err);
    return;
  }
  std::vector<uint8_t> input = corpus::test_input();

  emu::RunConfig trace_cfg;
  trace_cfg.trace_calls = true;
  emu::ExecutionOutcome traced = emu::run(
      p.img, input, emu::recording_hooks(nullptr), trace_cfg, p.annotations);
  uint64_t ssa_addr = p.img.runtime_syms.at(guards::kSsaCheck);
  std::vector<uint64_t> checks;
  for (auto [step, target] : traced.call_trace)
    if (target == ssa_addr) checks.push_back(step);
  if (traced.status != emu::Status::Completed || checks.size() < 2) {
    report(3, false, "aex threshold: probe did not trace two checks");
    return;
  }
  uint64_t window = checks[0] + 14;
  auto run_n = [&](uint64_t n) {
    emu::RunConfig cfg;
    for (uint64_t i = 0; i < n; i++) cfg.aex_schedule.insert(window + i);
    return emu::run(p.img, input, emu::recording_hooks(nullptr), cfg,
                    p.annotations);
  };
  emu::ExecutionOutcome pass21 = run_n(21);
  emu::ExecutionOutcome abort22 = run_n(22);
  bool ok = pass21.status == emu::Status::Completed &&
            abort22.status == emu::Status::Violation &&
            abort22.violation_code == 0xFFFFFFFF;
  std::ostringstream os;
  os << "aex threshold exactness (k=20, threshold=22): 21 exits -> "
     << emu::status_name(pass21.status) << ", 22 exits -> "
     << emu::status_name(abort22.status);
  report(3, ok, os.str());
}

void criterion4_quotas() {
  bool ok = true;
  std::ostringstream detail;

  // session-level: exactly one send, then SendQuotaExceeded
  auto cd = corpus::manifest_for(bundle::P1, bundle::ServiceMode::CDaaS);
  gateway::Consumer consumer({}, cd);
  gateway::Client client(gateway::measure_consumer({}, cd));
  auto nonce = client.fresh_nonce();
  client.process_quote(consumer.attest(nonce), nonce);
  consumer.complete_handshake(client.kx_public());
  std::vector<uint8_t> one(1, 0x7);
  std::vector<uint8_t> first = consumer.ocall_send(one);
  bool second_rejected = false;
  try {
    consumer.ocall_send(one);
  } catch (const gateway::GatewayError& e) {
    second_rejected = e.kind == gateway::GatewayError::Kind::SendQuotaExceeded;
  }
  if (!second_rejected) {
    ok = false;
    detail << " second send not rejected;";
  }

  // 2 bytes against an 8-bit budget
  gateway::Consumer consumer2({}, cd);
  gateway::Client client2(gateway::measure_consumer({}, cd));
  auto n2 = client2.fresh_nonce();
  client2.process_quote(consumer2.attest(n2), n2);
  consumer2.complete_handshake(client2.kx_public());
  bool budget_rejected = false;
  try {
    consumer2.ocall_send(std::vector<uint8_t>{1, 2});
  } catch (const gateway::GatewayError& e) {
    budget_rejected = e.kind == gateway::GatewayError::Kind::OutputBudgetExceeded;
  }
  if (!budget_rejected) {
    ok = false;
    detail << " oversized output not rejected;";
  }

  // the same rules bind emulated kernels
  for (auto [name, src] :
       {std::pair<const char*, const char*>{"send-twice", corpus::kAdvSendTwice},
        {"big-output", corpus::kAdvBigOutput}}) {
    auto m = corpus::manifest_for(bundle::P1, bundle::ServiceMode::CDaaS);
    Prepared p = prepare(src, m);
    if (!p.ok) {
      ok = false;
      detail << " " << name << ": " << p.err << ";";
      continue;
    }
    gateway::Consumer gc({}, m);
    gateway::Client cl(gateway::measure_consumer({}, m));
    auto n = cl.fresh_nonce();
    cl.process_quote(gc.attest(n), n);
    gc.complete_handshake(cl.kx_public());
    emu::GatewayHooks hooks;
    hooks.send = [&](std::span<const uint8_t> payload) {
      try {
        gc.ocall_send(payload);
        return true;
      } catch (const gateway::GatewayError&) {
        return false;
      }
    };
    hooks.recv = []() -> std::optional<std::vector<uint8_t>> {
      return std::nullopt;
    };
    emu::ExecutionOutcome out =
        emu::run(p.img, corpus::test_input(), hooks, {}, p.annotations);
    if (out.status != emu::Status::Violation || out.violation_code != 0xFFFFFFFF) {
      ok = false;
      detail << " " << name << " did not abort;";
    }
  }

  // constant emission length across payload sizes
  auto cc = corpus::manifest_for(bundle::P1);
  gateway::Consumer c3({}, cc);
  gateway::Client cl3(gateway::measure_consumer({}, cc));
  auto n3 = cl3.fresh_nonce();
  cl3.process_quote(c3.attest(n3), n3);
  c3.complete_handshake(cl3.kx_public());
  size_t len0 = c3.ocall_send(std::vector<uint8_t>{}).size();
  size_t len1 = c3.ocall_send(std::vector<uint8_t>(1, 9)).size();
  size_t len2 = c3.ocall_send(std::vector<uint8_t>(200, 9)).size();
  size_t expect = cc.pad_length + gateway::kPadPrefix + gateway::kAeadOverhead;
  if (!(len0 == expect && len1 == expect && len2 == expect &&
        first.size() ==
            cd.pad_length + gateway::kPadPrefix + gateway::kAeadOverhead)) {
    ok = false;
    detail << " frame lengths differ;";
  }
  report(4, ok,
         "P0 quotas: single CDaaS send, 8-bit budget, constant frame lengths" +
             detail.str());
}

void criterion5_placeholders() {
  using P = bundle::Placeholder;
  struct Case {
    uint8_t policies;
    std::vector<P> expected;
  };
  std::vector<Case> cases = {
      {kLadderP1, {P::UpperDataBound, P::LowerDataBound}},
      {kLadderP12,
       {P::UpperDataBound, P::LowerDataBound, P::UpperStackBound,
        P::LowerStackBound}},
      {kLadderP15,
       {P::UpperDataBound, P::LowerDataBound, P::UpperStackBound,
        P::LowerStackBound, P::ShadowStackBase, P::BranchTargetTableAddr,
        P::BranchTargetCount}},
      {kLadderP16,
       {P::UpperDataBound, P::LowerDataBound, P::UpperStackBound,
        P::LowerStackBound, P::ShadowStackBase, P::BranchTargetTableAddr,
        P::BranchTargetCount}},
  };
  bool ok = true;
  std::ostringstream detail;
  for (size_t ci = 0; ci < cases.size(); ci++) {
    auto m = corpus::manifest_for(cases[ci].policies);
    std::string src = corpus::generate_kernel(7100 + ci);
    try {
      bundle::CodeProofBundle b = pipeline::produce(src, m);
      loader::LoadedImage img = loader::load(b, loader::build_layout({}));
      std::set<P> present;
      for (auto [off, f] : bundle::scan_placeholders(img.code)) {
        (void)off;
        present.insert(f);
      }
      for (P f : cases[ci].expected)
        if (!present.count(f)) {
          ok = false;
          detail << " missing " << bundle::placeholder_name(f) << " under set "
                 << ci << ";";
        }
      verifier::VerificationReport rep = verifier::verify(img, m);
      if (!rep.accepted) {
        ok = false;
        detail << " set " << ci << " rejected;";
        continue;
      }
      loader::rewrite_immediates(img, rep.all_slots());
      if (!bundle::scan_placeholders(img.code).empty()) {
        ok = false;
        detail << " placeholders survive rewrite under set " << ci << ";";
      }
    } catch (const std::exception& e) {
      ok = false;
      detail << " set " << ci << ": " << e.what() << ";";
    }
  }
  report(5, ok,
         "placeholder hygiene: selected placeholders present before rewriting, "
         "none after" +
             detail.str());
}

void criterion6_differential() {
  std::vector<uint8_t> input = corpus::test_input();
  auto kernels = corpus::load_kernel_dir(CAT_KERNEL_DIR);
  int compared = 0;
  bool ok = kernels.size() >= 10;
  std::ostringstream detail;
  std::vector<std::pair<std::string, std::string>> work(kernels.begin(),
                                                        kernels.end());
  work.emplace_back("svc_echo_digest", corpus::kSvcEchoDigest);
  for (const auto& [name, src] : work) {
    try {
      pipeline::ConsumeOptions opts;
      std::vector<std::vector<uint8_t>> base_out, inst_out;
      emu::ExecutionOutcome base = pipeline::baseline_run(
          src, input, emu::recording_hooks(&base_out), opts);
      auto m = corpus::manifest_for(kLadderP16);
      pipeline::ConsumeResult res = pipeline::consume_and_run(
          pipeline::produce(src, m), input, emu::recording_hooks(&inst_out),
          opts);
      bool same = base.status == emu::Status::Completed && res.ran &&
                  res.outcome.status == emu::Status::Completed &&
                  base.data_digest == res.outcome.data_digest &&
                  base_out == inst_out;
      if (!same) {
        ok = false;
        detail << " " << name << " diverged;";
      } else {
        compared++;
      }
    } catch (const std::exception& e) {
      ok = false;
      detail << " " << name << ": " << e.what() << ";";
    }
  }
  ok = ok && compared >= 10;
  std::ostringstream os;
  os << "differential correctness: " << compared
     << " kernels with identical digests and outputs" << detail.str();
  report(6, ok, os.str());
}

void criterion7_overhead() {
  auto t0 = Clock::now();
  bench::BenchReport rep =
      bench::run_bench(corpus::load_kernel_dir(CAT_KERNEL_DIR), 50'000'000);
  double dt = seconds_since(t0);

  bool ok = !rep.rows.empty();
  std::ostringstream detail;
  double memcpy_ovh = -1;
  std::map<std::string, std::map<std::string, double>> dinsn;
  for (const auto& row : rep.rows) {
    if (!row.ok) {
      ok = false;
      detail << " " << row.name << "/" << row.policy_set << ": " << row.note
             << ";";
      continue;
    }
    dinsn[row.name][row.policy_set] = double(row.dinsn_instrumented);
    if (row.name == "bm_memcpy" && row.policy_set == "P1-P5")
      memcpy_ovh = row.size_overhead_pct;
  }
  if (memcpy_ovh < 20.0 || memcpy_ovh > 230.0) {
    ok = false;
    detail << " memcpy size overhead " << memcpy_ovh << "% outside [20,230];";
  }
  for (const auto& [name, per_set] : dinsn) {
    if (per_set.size() != 4) continue;
    double p1 = per_set.at("P1"), p12 = per_set.at("P1+P2"),
           p15 = per_set.at("P1-P5"), p16 = per_set.at("P1-P6");
    if (!(p1 <= p12 && p12 <= p15 && p15 <= p16)) {
      ok = false;
      detail << " " << name << " ladder not monotone;";
    }
  }
  if (dt >= 300.0) {
    ok = false;
    detail << " bench took " << dt << "s;";
  }
  std::ostringstream os;
  os << "overhead trends: memcpy P1-P5 size +" << memcpy_ovh
     << "% in [20,230], dinsn ladder monotone for " << dinsn.size()
     << " kernels, bench " << dt << "s" << detail.str();
  report(7, ok, os.str());
}

void criterion8_guard_pages() {
  auto m = corpus::manifest_for(kLadderP15);
  Prepared p = prepare(corpus::kAdvStackOverflow, m);
  if (!p.ok) {
    report(8, false, "guard pages: setup failed: " + p.err);
    return;
  }
  emu::RunConfig cfg;
  cfg.step_limit = 10'000'000;
  emu::ExecutionOutcome out =
      emu::run(p.img, corpus::test_input(), emu::recording_hooks(nullptr), cfg,
               p.annotations);
  const loader::Region& stack = p.img.layout.stack;
  bool writes_confined = true;
  for (const auto& w : out.write_log)
    if (!w.trusted && !(w.addr >= stack.base && w.addr + w.len <= stack.end()))
      writes_confined = false;
  bool ok = out.status == emu::Status::Fault &&
            out.fault == emu::FaultKind::GuardPage && writes_confined;
  std::ostringstream os;
  os << "guard pages: runaway push faults at the guard page ("
     << emu::status_name(out.status) << "/" << emu::fault_name(out.fault)
     << ") with every untrusted write inside the stack";
  report(8, ok, os.str());
}

void criterion9_end_to_end() {
  bool ok = true;
  std::ostringstream detail;
  std::vector<uint8_t> input = corpus::test_input();

  // scenario 1: CCaaS echo digest
  {
    auto m = corpus::manifest_for(kLadderP16);
    gateway::Consumer consumer({}, m);
    gateway::Client client(gateway::measure_consumer({}, m));
    auto nonce = client.fresh_nonce();
    client.process_quote(consumer.attest(nonce), nonce);
    consumer.complete_handshake(client.kx_public());

    bundle::CodeProofBundle b = pipeline::produce(corpus::kSvcEchoDigest, m);
    bundle::CodeProofBundle received = consumer.ecall_receive_binary(
        client.encrypt_code(bundle::encode_bundle(b)));
    std::vector<uint8_t> data =
        consumer.ecall_receive_userdata(client.encrypt_data(input));
    std::vector<std::vector<uint8_t>> frames;
    emu::GatewayHooks hooks;
    hooks.send = [&](std::span<const uint8_t> payload) {
      frames.push_back(consumer.ocall_send(payload));
      return true;
    };
    hooks.recv = []() -> std::optional<std::vector<uint8_t>> {
      return std::nullopt;
    };
    pipeline::ConsumeOptions opts;
    pipeline::ConsumeResult res =
        pipeline::consume_and_run(received, data, hooks, opts);
    uint64_t expect = corpus::echo_digest_oracle(input);
    bool good = res.ran && res.outcome.status == emu::Status::Completed &&
                frames.size() == 1;
    if (good) {
      std::vector<uint8_t> plain = client.decrypt_output(frames[0]);
      uint64_t got = 0;
      for (size_t i = 0; i < plain.size() && i < 8; i++)
        got |= static_cast<uint64_t>(plain[i]) << (8 * i);
      good = plain.size() == 8 && got == expect;
    }
    if (!good) {
      ok = false;
      detail << " ccaas-echo failed;";
    }
  }

  // scenario 2: CDaaS one-bit answer
  {
    auto m = corpus::manifest_for(kLadderP16, bundle::ServiceMode::CDaaS);
    gateway::Consumer consumer({}, m);
    gateway::Client client(gateway::measure_consumer({}, m));
    auto nonce = client.fresh_nonce();
    client.process_quote(consumer.attest(nonce), nonce);
    consumer.complete_handshake(client.kx_public());

    bundle::CodeProofBundle b = pipeline::produce(corpus::kSvcOneBit, m);
    bundle::CodeProofBundle received = consumer.ecall_receive_binary(
        client.encrypt_code(bundle::encode_bundle(b)));
    std::vector<uint8_t> data =
        consumer.ecall_receive_userdata(client.encrypt_data(input));
    std::vector<std::vector<uint8_t>> frames;
    emu::GatewayHooks hooks;
    hooks.send = [&](std::span<const uint8_t> payload) {
      try {
        frames.push_back(consumer.ocall_send(payload));
        return true;
      } catch (const gateway::GatewayError&) {
        return false;
      }
    };
    hooks.recv = []() -> std::optional<std::vector<uint8_t>> {
      return std::nullopt;
    };
    pipeline::ConsumeOptions opts;
    pipeline::ConsumeResult res =
        pipeline::consume_and_run(received, data, hooks, opts);

    // oracle: does any later qword exceed the first?
    uint64_t threshold = 0, answer = 0;
    for (int i = 0; i < 8; i++)
      threshold |= static_cast<uint64_t>(input[i]) << (8 * i);
    for (size_t off = 8; off + 8 <= input.size(); off += 8) {
      uint64_t q = 0;
      for (int i = 0; i < 8; i++)
        q |= static_cast<uint64_t>(input[off + i]) << (8 * i);
      if (q > threshold) {
        answer = 1;
        break;
      }
    }
    bool good = res.ran && res.outcome.status == emu::Status::Completed &&
                frames.size() == 1;
    if (good) {
      std::vector<uint8_t> plain = client.decrypt_output(frames[0]);
      good = plain.size() == 1 && plain[0] == answer;
    }
    if (!good) {
      ok = false;
      detail << " cdaas-onebit failed;";
    }
  }

  // scenario 3: tampered upload is rejected before verification
  {
    auto m = corpus::manifest_for(kLadderP16);
    gateway::Consumer consumer({}, m);
    gateway::Client client(gateway::measure_consumer({}, m));
    auto nonce = client.fresh_nonce();
    client.process_quote(consumer.attest(nonce), nonce);
    consumer.complete_handshake(client.kx_public());

    bundle::CodeProofBundle b = pipeline::produce(corpus::kSvcEchoDigest, m);
    std::vector<uint8_t> ct = client.encrypt_code(bundle::encode_bundle(b));
    ct[ct.size() / 2] ^= 0x40;
    bool rejected = false;
    try {
      consumer.ecall_receive_binary(ct);
    } catch (const gateway::GatewayError& e) {
      rejected = e.kind == gateway::GatewayError::Kind::AuthFailure;
    }
    if (!rejected) {
      ok = false;
      detail << " tampered upload accepted;";
    }
  }

  report(9, ok,
         "end-to-end pipeline: CCaaS echo digest, CDaaS one-bit answer, "
         "tampered upload rejected" +
             detail.str());
}

}  // namespace

int main() {
  auto t0 = Clock::now();
  criterion1_soundness();
  criterion2_confinement();
  criterion3_aex_threshold();
  criterion4_quotas();
  criterion5_placeholders();
  criterion6_differential();
  criterion7_overhead();
  criterion8_guard_pages();
  criterion9_end_to_end();
  printf("%s: %d criterion(s) failed, total %.1fs\n",
         g_failures ? "FAILURE" : "SUCCESS", g_failures, seconds_since(t0));
  return g_failures ? 1 : 0;
}
