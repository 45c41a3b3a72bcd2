// Shared test corpus: embedded service and adversarial kernels, a seeded
// random kernel generator, and bundle mutation utilities for the soundness
// harness.
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cat/bundle.hpp"
#include "cat/instrument.hpp"
#include "cat/pipeline.hpp"

namespace corpus {

// Service kernels for gateway integration scenarios.
extern const char* kSvcEchoDigest;  // CCaaS: checksum input, send 8 bytes
extern const char* kSvcOneBit;      // CDaaS: predicate answer, send 1 byte
extern const char* kSvcRecvEcho;    // CCaaS: recv a message, mix, send

// Adversarial kernels; all verify cleanly and misbehave only at runtime.
extern const char* kAdvOobStoreLow;
extern const char* kAdvOobStoreHigh;
extern const char* kAdvOffListCall;
extern const char* kAdvRetCorrupt;
extern const char* kAdvStackOverflow;
extern const char* kAdvRspOob;
extern const char* kAdvSendTwice;
extern const char* kAdvBigOutput;

// Straight-line kernel for AEX threshold probing (one long basic block).
extern const char* kAexProbe;

// The qword add/xor chain kSvcEchoDigest computes, reproduced as the test
// oracle.
uint64_t echo_digest_oracle(const std::vector<uint8_t>& data);

// Kernel files shipped with the repo (name, source), sorted by name.
std::vector<std::pair<std::string, std::string>> load_kernel_dir(
    const std::string& dir);

// Deterministic 4 KiB input block (same stream the bench uses).
std::vector<uint8_t> test_input();

cat::bundle::PolicyManifest manifest_for(
    uint8_t policies,
    cat::bundle::ServiceMode mode = cat::bundle::ServiceMode::CCaaS);

// Structured random kernels: every one contains stores, rsp adjustments,
// direct and indirect calls, loops, and at least two functions, so each
// policy has material to guard. Generated programs always terminate.
std::string generate_kernel(uint64_t seed);

enum class Mutation {
  DeleteStoreGuard,
  DeleteRspGuard,
  DeleteCfiGuard,
  RemoveShadowProlog,
  RemoveShadowEpilog,
  RemoveSsaCheck,
  AlterPlaceholder,   // flip the low bit of a guard's placeholder imm
  MalformGuardToken,  // swap a guard's ja for jae
  InsertUnguardedStore,
  BranchIntoGuard,  // retarget a direct branch into a guard interior
};

// Applies one mutation to an instrumented program and relinks, or nullopt
// when the program has no site for this mutation kind.
std::optional<cat::bundle::CodeProofBundle> make_mutant(
    const std::string& source, const cat::bundle::PolicyManifest& manifest,
    Mutation kind, std::mt19937_64& rng);

// All mutations applicable to the manifest's policy set.
std::vector<Mutation> mutations_for(const cat::bundle::PolicyManifest& m);

const char* mutation_name(Mutation m);

}  // namespace corpus
