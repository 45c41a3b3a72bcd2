// Producer CLI: instrument a subset-assembly source per the selected
// policies and emit a CATB code+proof bundle.
#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cat/pipeline.hpp"

using namespace cat;

namespace {

bool parse_policies(const std::string& spec, uint8_t* out) {
  uint8_t policies = 0;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "p1") policies |= bundle::P1;
    else if (tok == "p2") policies |= bundle::P2;
    else if (tok == "p3") policies |= bundle::P3;
    else if (tok == "p4") policies |= bundle::P4;
    else if (tok == "p5") policies |= bundle::P5;
    else if (tok == "p6") policies |= bundle::P6;
    else if (tok == "all") policies |= bundle::kAllPolicies;
    else if (tok == "none") {}
    else return false;
  }
  *out = policies;
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"catgen - policy-compliant code generator"};
  std::string source_path, out_path = "out.catb", policies_spec = "none";
  std::string mode = "ccaas";
  bundle::PolicyManifest manifest;
  manifest.max_sends = 0;  // 0 = pick the mode default below

  app.add_option("source", source_path, "subset assembly source file")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("-o,--output", out_path, "output bundle path");
  app.add_option("--policies", policies_spec,
                 "comma list of p1..p6, or 'all'/'none'");
  app.add_option("--mode", mode, "service mode: ccaas or cdaas");
  app.add_option("--pad-length", manifest.pad_length, "fixed send payload size");
  app.add_option("--max-sends", manifest.max_sends, "send quota");
  app.add_option("--max-output-bits", manifest.max_output_bits,
                 "CDaaS output bit budget");
  app.add_option("--ssa-k", manifest.ssa_stride_k, "ssa check stride (default 20)");
  app.add_option("--aex-threshold", manifest.aex_threshold,
                 "AEX abort threshold (default 22)");
  CLI11_PARSE(app, argc, argv);

  if (!parse_policies(policies_spec, &manifest.policies)) {
    std::cerr << "catgen: unknown policy in --policies " << policies_spec << "\n"
              << "usage: --policies p1,p2,p3,p4,p5,p6 | all | none\n";
    return 1;
  }
  if (mode == "ccaas") {
    manifest.mode = bundle::ServiceMode::CCaaS;
    if (manifest.max_sends == 0) manifest.max_sends = 16;
  } else if (mode == "cdaas") {
    manifest.mode = bundle::ServiceMode::CDaaS;
    if (manifest.max_sends == 0) manifest.max_sends = 1;
    if (manifest.max_output_bits == 0) manifest.max_output_bits = 8;
  } else {
    std::cerr << "catgen: --mode must be ccaas or cdaas\n";
    return 1;
  }

  try {
    std::ifstream in(source_path);
    std::stringstream buf;
    buf << in.rdbuf();
    bundle::CodeProofBundle b = pipeline::produce(buf.str(), manifest);
    std::vector<uint8_t> bytes = bundle::encode_bundle(b);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) {
      std::cerr << "catgen: cannot write " << out_path << "\n";
      return 1;
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "catgen: " << e.what() << "\n";
    return 1;
  }
}
