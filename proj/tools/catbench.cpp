// Overhead benchmark across the four policy granularities.
#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cat/bench.hpp"

namespace fs = std::filesystem;
using namespace cat;

int main(int argc, char** argv) {
  CLI::App app{"catbench - instrumentation overhead report"};
  std::string kernel_dir, csv_path;
  uint64_t step_limit = 50'000'000;
  app.add_option("kernels", kernel_dir, "directory of .s kernels")->required();
  app.add_option("--csv", csv_path, "write the machine-readable report here");
  app.add_option("--step-limit", step_limit, "per-run instruction budget");
  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<std::pair<std::string, std::string>> kernels;
    if (fs::exists(kernel_dir)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(kernel_dir))
        if (e.is_regular_file() && e.path().extension() == ".s")
          files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const fs::path& p : files) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        kernels.emplace_back(p.stem().string(), ss.str());
      }
    }

    bench::BenchReport rep = bench::run_bench(kernels, step_limit);
    std::cout << bench::to_table(rep);
    if (!csv_path.empty()) {
      std::ofstream out(csv_path);
      out << bench::to_csv(rep);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "catbench: " << e.what() << "\n";
    return 1;
  }
}
