// Composition helpers wiring producer and consumer halves together for the
// CLI tools and the test suites.
#pragma once

#include <optional>
#include <span>
#include <string>

#include "cat/bundle.hpp"
#include "cat/emulator.hpp"
#include "cat/instrument.hpp"
#include "cat/loader.hpp"
#include "cat/verifier.hpp"

namespace cat::pipeline {

// Producer: parse, apply the manifest's passes, link.
bundle::CodeProofBundle produce(const std::string& source,
                                const bundle::PolicyManifest& manifest);

struct ConsumeOptions {
  loader::LayoutConfig layout;
  emu::RunConfig run;
};

struct ConsumeResult {
  verifier::VerificationReport report;
  bool ran = false;  // false when verification rejected
  emu::ExecutionOutcome outcome;
  loader::LoadedImage image;
};

// Consumer: load, verify, rewrite, seal, execute. Stops after verification
// when the report rejects.
ConsumeResult consume_and_run(const bundle::CodeProofBundle& b,
                              std::span<const uint8_t> data,
                              emu::GatewayHooks hooks,
                              const ConsumeOptions& opts);

// Reference run of the same source with no policies applied.
emu::ExecutionOutcome baseline_run(const std::string& source,
                                   std::span<const uint8_t> data,
                                   emu::GatewayHooks hooks,
                                   const ConsumeOptions& opts);

}  // namespace cat::pipeline
