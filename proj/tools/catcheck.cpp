// Consumer-side verifier CLI: load and verify a bundle, print the report.
// Exit 0 accepted, 2 rejected, 1 on decode or I/O errors.
#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cat/loader.hpp"
#include "cat/verifier.hpp"

using namespace cat;

int main(int argc, char** argv) {
  CLI::App app{"catcheck - policy compliance verifier"};
  std::string bundle_path, layout_path;
  app.add_option("bundle", bundle_path, "CATB bundle file")->required();
  app.add_option("--layout", layout_path, "layout config file (key=value)");
  CLI11_PARSE(app, argc, argv);

  try {
    std::ifstream in(bundle_path, std::ios::binary);
    if (!in) {
      std::cerr << "catcheck: cannot open " << bundle_path << "\n";
      return 1;
    }
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());

    bundle::CodeProofBundle b;
    loader::LayoutConfig cfg;
    try {
      b = bundle::decode_bundle(bytes);
      if (!layout_path.empty()) {
        std::ifstream lf(layout_path);
        std::stringstream ss;
        ss << lf.rdbuf();
        cfg = loader::parse_layout_config(ss.str());
      }
    } catch (const std::exception& e) {
      std::cerr << "catcheck: " << e.what() << "\n";
      return 1;
    }

    loader::EnclaveLayout layout = loader::build_layout(cfg);
    loader::LoadedImage img = loader::load(b, layout);
    verifier::VerificationReport rep = verifier::verify(img, b.manifest);
    if (rep.accepted) {
      std::cout << "accepted: " << rep.coverage.size()
                << " instructions verified, " << rep.matches.size()
                << " annotations matched\n";
      return 0;
    }
    std::cout << verifier::serialize_report(rep);
    std::cout << "rejected: " << rep.violations.size() << " violation(s)\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "catcheck: " << e.what() << "\n";
    return 1;
  }
}
