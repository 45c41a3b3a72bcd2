#include "cat/pipeline.hpp"

namespace cat::pipeline {

bundle::CodeProofBundle produce(const std::string& source,
                                const bundle::PolicyManifest& manifest) {
  prog::Program p = instrument::parse_asm(source);
  p = instrument::apply_policies(std::move(p), manifest);
  return instrument::link(p, manifest);
}

ConsumeResult consume_and_run(const bundle::CodeProofBundle& b,
                              std::span<const uint8_t> data,
                              emu::GatewayHooks hooks,
                              const ConsumeOptions& opts) {
  ConsumeResult res;
  loader::EnclaveLayout layout = loader::build_layout(opts.layout);
  res.image = loader::load(b, layout);
  res.report = verifier::verify(res.image, b.manifest);
  if (!res.report.accepted) return res;

  loader::rewrite_immediates(res.image, res.report.all_slots());
  loader::seal(res.image);
  res.outcome = emu::run(res.image, data, std::move(hooks), opts.run,
                         res.report.annotation_ranges(res.image.base));
  res.ran = true;
  return res;
}

emu::ExecutionOutcome baseline_run(const std::string& source,
                                   std::span<const uint8_t> data,
                                   emu::GatewayHooks hooks,
                                   const ConsumeOptions& opts) {
  prog::Program p = instrument::parse_asm(source);
  loader::EnclaveLayout layout = loader::build_layout(opts.layout);
  return emu::run_uninstrumented(p, layout, data, std::move(hooks), opts.run);
}

}  // namespace cat::pipeline
