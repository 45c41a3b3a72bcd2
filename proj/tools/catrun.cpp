// Full pipeline driver: mock attestation, encrypted code/data upload,
// verification, immediate rewriting, and emulated execution with the
// gateway enforcing P0. Exit codes: 0 completed, 2 verification rejected,
// 3 policy violation, 4 fault, 5 step limit, 1 other errors.
#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "cat/gateway.hpp"
#include "cat/pipeline.hpp"

using namespace cat;

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

std::set<uint64_t> read_aex_schedule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::set<uint64_t> steps;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    steps.insert(std::stoull(line));
  }
  return steps;
}

std::string hex(std::span<const uint8_t> bytes) {
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (uint8_t b : bytes) os << std::setw(2) << int(b);
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"catrun - confidential attestation pipeline"};
  std::string bundle_path, data_path, aex_path, layout_path, writelog_path,
      transcript_path;
  uint64_t step_limit = 20'000'000;
  app.add_option("bundle", bundle_path, "CATB bundle file")->required();
  app.add_option("--data", data_path, "user data file placed at the data base");
  app.add_option("--aex", aex_path, "AEX schedule: one step index per line");
  app.add_option("--layout", layout_path, "layout config file");
  app.add_option("--step-limit", step_limit, "emulated instruction budget");
  app.add_option("--write-log", writelog_path, "emit '<step> <addr> <len>' lines");
  app.add_option("--transcript", transcript_path, "record gateway frames");
  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<uint8_t> bundle_bytes = read_file(bundle_path);
    bundle::CodeProofBundle provider_bundle;
    loader::LayoutConfig layout_cfg;
    try {
      provider_bundle = bundle::decode_bundle(bundle_bytes);
      if (!layout_path.empty()) {
        std::ifstream lf(layout_path);
        std::stringstream ss;
        ss << lf.rdbuf();
        layout_cfg = loader::parse_layout_config(ss.str());
      }
    } catch (const std::exception& e) {
      std::cerr << "catrun: " << e.what() << "\n";
      return 1;
    }
    std::vector<uint8_t> data;
    if (!data_path.empty()) data = read_file(data_path);

    std::vector<gateway::Frame> transcript;

    // Attestation handshake between the in-process client and the consumer.
    gateway::Consumer consumer(layout_cfg, provider_bundle.manifest);
    gateway::Client client(
        gateway::measure_consumer(layout_cfg, provider_bundle.manifest));
    auto nonce = client.fresh_nonce();
    gateway::Quote quote = consumer.attest(nonce);
    transcript.push_back({gateway::FrameType::Quote, gateway::encode_quote(quote)});
    client.process_quote(quote, nonce);
    consumer.complete_handshake(client.kx_public());

    // Encrypted upload of the code+proof and the user data.
    std::vector<uint8_t> code_ct = client.encrypt_code(bundle_bytes);
    transcript.push_back({gateway::FrameType::Code, code_ct});
    bundle::CodeProofBundle b = consumer.ecall_receive_binary(code_ct);
    std::vector<uint8_t> plain_data;
    {
      std::vector<uint8_t> data_ct = client.encrypt_data(data);
      transcript.push_back({gateway::FrameType::Data, data_ct});
      plain_data = consumer.ecall_receive_userdata(data_ct);
    }

    std::vector<std::vector<uint8_t>> emitted_frames;
    emu::GatewayHooks hooks;
    hooks.send = [&](std::span<const uint8_t> payload) {
      try {
        std::vector<uint8_t> ct = consumer.ocall_send(payload);
        transcript.push_back({gateway::FrameType::Send, ct});
        emitted_frames.push_back(std::move(ct));
        return true;
      } catch (const gateway::GatewayError& e) {
        std::cerr << "catrun: gateway: " << e.what() << "\n";
        return false;
      }
    };
    hooks.recv = [&]() -> std::optional<std::vector<uint8_t>> {
      try {
        return consumer.ocall_recv();
      } catch (const gateway::GatewayError& e) {
        std::cerr << "catrun: gateway: " << e.what() << "\n";
        return std::nullopt;
      }
    };

    pipeline::ConsumeOptions opts;
    opts.layout = layout_cfg;
    opts.run.step_limit = step_limit;
    if (!aex_path.empty()) opts.run.aex_schedule = read_aex_schedule(aex_path);
    opts.run.record_writes = !writelog_path.empty();

    pipeline::ConsumeResult res =
        pipeline::consume_and_run(b, plain_data, hooks, opts);
    if (!res.ran) {
      std::cout << verifier::serialize_report(res.report);
      std::cout << "rejected: " << res.report.violations.size()
                << " violation(s)\n";
      return 2;
    }

    if (!transcript_path.empty()) {
      std::ofstream out(transcript_path, std::ios::binary);
      for (const gateway::Frame& f : transcript) {
        std::vector<uint8_t> enc = gateway::encode_frame(f);
        out.write(reinterpret_cast<const char*>(enc.data()),
                  static_cast<std::streamsize>(enc.size()));
      }
    }
    if (!writelog_path.empty()) {
      std::ofstream out(writelog_path);
      for (const emu::WriteRec& w : res.outcome.write_log)
        out << w.step << " 0x" << std::hex << w.addr << std::dec << " " << w.len
            << "\n";
    }

    const emu::ExecutionOutcome& out = res.outcome;
    std::cout << "status: " << emu::status_name(out.status);
    if (out.status == emu::Status::Violation)
      std::cout << " code 0x" << std::hex << out.violation_code << std::dec;
    if (out.status == emu::Status::Fault)
      std::cout << " (" << emu::fault_name(out.fault) << ")";
    std::cout << "\nsteps: " << out.steps << "\n";
    std::cout << "data digest: 0x" << std::hex << out.data_digest << std::dec
              << "\n";
    for (size_t i = 0; i < emitted_frames.size(); i++) {
      std::vector<uint8_t> plain = client.decrypt_output(emitted_frames[i]);
      std::cout << "output[" << i << "] (" << emitted_frames[i].size()
                << " byte frame): " << hex(plain) << "\n";
    }
    if (!out.message.empty()) std::cout << "note: " << out.message << "\n";

    switch (out.status) {
      case emu::Status::Completed: return 0;
      case emu::Status::Violation: return 3;
      case emu::Status::Fault: return 4;
      case emu::Status::StepLimit: return 5;
      default: return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "catrun: " << e.what() << "\n";
    return 1;
  }
}
