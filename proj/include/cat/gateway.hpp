// Enclave boundary: ECall-style ingestion and OCall-style send/recv with
// authenticated encryption, fixed-length padding and quota enforcement, plus
// a mock measurement/key-exchange handshake standing in for hardware
// attestation.
#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cat/bundle.hpp"
#include "cat/loader.hpp"

namespace cat::gateway {

struct GatewayError : std::runtime_error {
  enum class Kind {
    NonceReplay,
    AuthFailure,
    DataTooLarge,
    SendQuotaExceeded,
    OutputBudgetExceeded,
    OutputTooLarge,
    QueueEmpty,
    ModeViolation,
    NotEstablished,
  };
  Kind kind;
  GatewayError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

inline constexpr size_t kNonceLen = 16;
inline constexpr size_t kMeasurementLen = 32;
inline constexpr size_t kKxPubLen = 32;
inline constexpr size_t kSigLen = 64;
// XChaCha20-Poly1305 nonce + tag, plus the 4-byte inner length prefix.
inline constexpr size_t kAeadOverhead = 24 + 16;
inline constexpr size_t kPadPrefix = 4;

enum class FrameType : uint8_t { Quote = 1, Code = 2, Data = 3, Send = 4, Recv = 5 };

struct Frame {
  FrameType type;
  std::vector<uint8_t> payload;
};

std::vector<uint8_t> encode_frame(const Frame& f);
// Decodes one frame from the front of `bytes`; advances *consumed.
Frame decode_frame(std::span<const uint8_t> bytes, size_t* consumed);
std::vector<Frame> decode_frames(std::span<const uint8_t> bytes);

struct Measurement {
  std::array<uint8_t, kMeasurementLen> digest{};
  bool operator==(const Measurement&) const = default;
};

// Hash of the consumer build identifier, the layout configuration and the
// policy manifest it will enforce.
Measurement measure_consumer(const loader::LayoutConfig& layout,
                             const bundle::PolicyManifest& manifest);

struct Quote {
  Measurement measurement;
  std::array<uint8_t, kNonceLen> nonce{};
  std::array<uint8_t, kKxPubLen> kx_pub{};
  std::array<uint8_t, kSigLen> signature{};
};

std::vector<uint8_t> encode_quote(const Quote& q);
Quote decode_quote(std::span<const uint8_t> bytes);

// The repo-local signing key pair standing in for the attestation root.
std::array<uint8_t, 32> consumer_test_public_key();

struct Session {
  bundle::ServiceMode mode = bundle::ServiceMode::CCaaS;
  uint32_t pad_length = 256;
  uint32_t max_sends = 16;
  uint32_t max_output_bits = 0;  // 0 = unlimited
  uint32_t sends_used = 0;
  uint64_t output_bits_used = 0;
};

// Bootstrap-consumer half of the channel.
class Consumer {
 public:
  Consumer(loader::LayoutConfig layout, bundle::PolicyManifest manifest);

  Measurement measurement() const { return measurement_; }
  Quote attest(const std::array<uint8_t, kNonceLen>& nonce);
  void complete_handshake(const std::array<uint8_t, kKxPubLen>& client_pub);
  bool established() const { return established_; }

  bundle::CodeProofBundle ecall_receive_binary(std::span<const uint8_t> ciphertext);
  std::vector<uint8_t> ecall_receive_userdata(std::span<const uint8_t> ciphertext);

  // Pads to the session's fixed length and encrypts; every emission has
  // identical size for a fixed configuration.
  std::vector<uint8_t> ocall_send(std::span<const uint8_t> plaintext);
  std::vector<uint8_t> ocall_recv();
  void host_deliver(std::span<const uint8_t> ciphertext);  // queue a Recv payload

  const Session& session() const { return session_; }

 private:
  std::vector<uint8_t> open(std::span<const uint8_t> ct, FrameType aad);

  loader::LayoutConfig layout_;
  bundle::PolicyManifest manifest_;
  Measurement measurement_;
  Session session_;
  bool established_ = false;
  std::array<uint8_t, 32> kx_pub_{}, kx_sk_{};
  std::array<uint8_t, 32> rx_{}, tx_{};
  std::set<std::array<uint8_t, kNonceLen>> seen_nonces_;
  std::deque<std::vector<uint8_t>> recv_queue_;
};

// Data-owner / code-provider half, used by the CLI driver and tests.
class Client {
 public:
  explicit Client(Measurement expected);

  std::array<uint8_t, kNonceLen> fresh_nonce();
  // Verifies signature, nonce freshness and measurement, then derives the
  // session keys. Throws AuthFailure on any mismatch.
  void process_quote(const Quote& q, const std::array<uint8_t, kNonceLen>& nonce);
  std::array<uint8_t, kKxPubLen> kx_public() const { return kx_pub_; }
  bool established() const { return established_; }

  std::vector<uint8_t> encrypt_code(std::span<const uint8_t> bundle_bytes);
  std::vector<uint8_t> encrypt_data(std::span<const uint8_t> data);
  std::vector<uint8_t> encrypt_recv_payload(std::span<const uint8_t> payload);
  // Strips padding from a Send frame payload.
  std::vector<uint8_t> decrypt_output(std::span<const uint8_t> ciphertext);

 private:
  Measurement expected_;
  std::array<uint8_t, 32> kx_pub_{}, kx_sk_{};
  std::array<uint8_t, 32> rx_{}, tx_{};
  bool established_ = false;
};

}  // namespace cat::gateway
