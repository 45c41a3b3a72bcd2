#include "cat/gateway.hpp"

#include <sodium.h>

#include <cassert>
#include <cstring>
#include <mutex>

namespace cat::gateway {

namespace {

[[noreturn]] void fail(GatewayError::Kind k, const std::string& msg) {
  throw GatewayError(k, msg);
}

void ensure_sodium() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    if (sodium_init() < 0) throw std::runtime_error("libsodium init failed");
  });
}

constexpr char kBuildId[] = "cat-bootstrap-consumer-v1";
// Repo-local test seed; the mock trust root for quote signatures.
constexpr uint8_t kSignSeed[32] = {
    0xc4, 0x7b, 0x11, 0x5e, 0x92, 0x0a, 0x3d, 0x66, 0x28, 0xf1, 0xd9,
    0x4c, 0x83, 0x57, 0xee, 0x02, 0x9b, 0x30, 0xa8, 0x71, 0x46, 0x5d,
    0x1f, 0xc2, 0x88, 0x0b, 0x64, 0xd3, 0x3a, 0xe5, 0x79, 0x16};

struct SignKeys {
  std::array<uint8_t, crypto_sign_PUBLICKEYBYTES> pk;
  std::array<uint8_t, crypto_sign_SECRETKEYBYTES> sk;
};

const SignKeys& sign_keys() {
  static SignKeys keys = [] {
    ensure_sodium();
    SignKeys k;
    crypto_sign_seed_keypair(k.pk.data(), k.sk.data(), kSignSeed);
    return k;
  }();
  return keys;
}

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; i++) out.push_back((v >> (8 * i)) & 0xFF);
}

std::vector<uint8_t> manifest_bytes(const bundle::PolicyManifest& m) {
  std::vector<uint8_t> b;
  b.push_back(m.policies);
  b.push_back(static_cast<uint8_t>(m.mode));
  append_u32(b, m.pad_length);
  append_u32(b, m.max_sends);
  append_u32(b, m.max_output_bits);
  append_u32(b, m.ssa_stride_k);
  append_u32(b, m.aex_threshold);
  return b;
}

std::vector<uint8_t> seal(std::span<const uint8_t> key,
                          std::span<const uint8_t> plain, FrameType aad) {
  ensure_sodium();
  std::vector<uint8_t> out(crypto_aead_xchacha20poly1305_ietf_NPUBBYTES);
  randombytes_buf(out.data(), out.size());
  out.resize(out.size() + plain.size() + crypto_aead_xchacha20poly1305_ietf_ABYTES);
  uint8_t aad_byte = static_cast<uint8_t>(aad);
  unsigned long long clen = 0;
  crypto_aead_xchacha20poly1305_ietf_encrypt(
      out.data() + crypto_aead_xchacha20poly1305_ietf_NPUBBYTES, &clen,
      plain.data(), plain.size(), &aad_byte, 1, nullptr, out.data(), key.data());
  out.resize(crypto_aead_xchacha20poly1305_ietf_NPUBBYTES + clen);
  return out;
}

std::vector<uint8_t> open_sealed(std::span<const uint8_t> key,
                                 std::span<const uint8_t> ct, FrameType aad) {
  ensure_sodium();
  constexpr size_t npub = crypto_aead_xchacha20poly1305_ietf_NPUBBYTES;
  constexpr size_t tag = crypto_aead_xchacha20poly1305_ietf_ABYTES;
  if (ct.size() < npub + tag)
    fail(GatewayError::Kind::AuthFailure, "ciphertext too short");
  std::vector<uint8_t> plain(ct.size() - npub - tag);
  unsigned long long plen = 0;
  uint8_t aad_byte = static_cast<uint8_t>(aad);
  if (crypto_aead_xchacha20poly1305_ietf_decrypt(
          plain.data(), &plen, nullptr, ct.data() + npub, ct.size() - npub,
          &aad_byte, 1, ct.data(), key.data()) != 0)
    fail(GatewayError::Kind::AuthFailure, "AEAD authentication failed");
  plain.resize(plen);
  return plain;
}

}  // namespace

std::vector<uint8_t> encode_frame(const Frame& f) {
  std::vector<uint8_t> out;
  out.push_back(static_cast<uint8_t>(f.type));
  append_u32(out, static_cast<uint32_t>(f.payload.size()));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

Frame decode_frame(std::span<const uint8_t> bytes, size_t* consumed) {
  if (bytes.size() < 5)
    fail(GatewayError::Kind::AuthFailure, "truncated frame header");
  uint8_t t = bytes[0];
  if (t < 1 || t > 5) fail(GatewayError::Kind::AuthFailure, "unknown frame type");
  uint32_t len = 0;
  for (int i = 0; i < 4; i++) len |= static_cast<uint32_t>(bytes[1 + i]) << (8 * i);
  if (bytes.size() - 5 < len)
    fail(GatewayError::Kind::AuthFailure, "truncated frame payload");
  Frame f;
  f.type = static_cast<FrameType>(t);
  f.payload.assign(bytes.begin() + 5, bytes.begin() + 5 + len);
  if (consumed) *consumed = 5 + len;
  return f;
}

std::vector<Frame> decode_frames(std::span<const uint8_t> bytes) {
  std::vector<Frame> frames;
  size_t pos = 0;
  while (pos < bytes.size()) {
    size_t used = 0;
    frames.push_back(decode_frame(bytes.subspan(pos), &used));
    pos += used;
  }
  return frames;
}

Measurement measure_consumer(const loader::LayoutConfig& layout,
                             const bundle::PolicyManifest& manifest) {
  ensure_sodium();
  std::vector<uint8_t> input;
  input.insert(input.end(), kBuildId, kBuildId + sizeof(kBuildId));
  std::string cfg = loader::serialize_layout_config(layout);
  input.insert(input.end(), cfg.begin(), cfg.end());
  auto mb = manifest_bytes(manifest);
  input.insert(input.end(), mb.begin(), mb.end());

  Measurement m;
  crypto_generichash(m.digest.data(), m.digest.size(), input.data(), input.size(),
                     nullptr, 0);
  return m;
}

std::vector<uint8_t> encode_quote(const Quote& q) {
  std::vector<uint8_t> out;
  out.insert(out.end(), q.measurement.digest.begin(), q.measurement.digest.end());
  out.insert(out.end(), q.nonce.begin(), q.nonce.end());
  out.insert(out.end(), q.kx_pub.begin(), q.kx_pub.end());
  out.insert(out.end(), q.signature.begin(), q.signature.end());
  return out;
}

Quote decode_quote(std::span<const uint8_t> bytes) {
  if (bytes.size() != kMeasurementLen + kNonceLen + kKxPubLen + kSigLen)
    fail(GatewayError::Kind::AuthFailure, "quote has wrong size");
  Quote q;
  size_t pos = 0;
  std::memcpy(q.measurement.digest.data(), bytes.data() + pos, kMeasurementLen);
  pos += kMeasurementLen;
  std::memcpy(q.nonce.data(), bytes.data() + pos, kNonceLen);
  pos += kNonceLen;
  std::memcpy(q.kx_pub.data(), bytes.data() + pos, kKxPubLen);
  pos += kKxPubLen;
  std::memcpy(q.signature.data(), bytes.data() + pos, kSigLen);
  return q;
}

std::array<uint8_t, 32> consumer_test_public_key() {
  std::array<uint8_t, 32> pk;
  std::memcpy(pk.data(), sign_keys().pk.data(), 32);
  return pk;
}

Consumer::Consumer(loader::LayoutConfig layout, bundle::PolicyManifest manifest)
    : layout_(std::move(layout)), manifest_(manifest) {
  ensure_sodium();
  measurement_ = measure_consumer(layout_, manifest_);
  session_.mode = manifest_.mode;
  session_.pad_length = manifest_.pad_length;
  session_.max_sends = manifest_.max_sends;
  session_.max_output_bits = manifest_.max_output_bits;
}

Quote Consumer::attest(const std::array<uint8_t, kNonceLen>& nonce) {
  if (!seen_nonces_.insert(nonce).second)
    fail(GatewayError::Kind::NonceReplay, "nonce replayed");
  Quote q;
  q.measurement = measurement_;
  q.nonce = nonce;
  crypto_kx_keypair(kx_pub_.data(), kx_sk_.data());
  q.kx_pub = kx_pub_;

  std::vector<uint8_t> signed_part;
  signed_part.insert(signed_part.end(), q.measurement.digest.begin(),
                     q.measurement.digest.end());
  signed_part.insert(signed_part.end(), q.nonce.begin(), q.nonce.end());
  signed_part.insert(signed_part.end(), q.kx_pub.begin(), q.kx_pub.end());
  crypto_sign_detached(q.signature.data(), nullptr, signed_part.data(),
                       signed_part.size(), sign_keys().sk.data());
  return q;
}

void Consumer::complete_handshake(const std::array<uint8_t, kKxPubLen>& client_pub) {
  if (crypto_kx_server_session_keys(rx_.data(), tx_.data(), kx_pub_.data(),
                                    kx_sk_.data(), client_pub.data()) != 0)
    fail(GatewayError::Kind::AuthFailure, "key exchange failed");
  established_ = true;
}

std::vector<uint8_t> Consumer::open(std::span<const uint8_t> ct, FrameType aad) {
  if (!established_)
    fail(GatewayError::Kind::NotEstablished, "no session established");
  return open_sealed(rx_, ct, aad);
}

bundle::CodeProofBundle Consumer::ecall_receive_binary(
    std::span<const uint8_t> ciphertext) {
  std::vector<uint8_t> plain = open(ciphertext, FrameType::Code);
  return bundle::decode_bundle(plain);
}

std::vector<uint8_t> Consumer::ecall_receive_userdata(
    std::span<const uint8_t> ciphertext) {
  std::vector<uint8_t> plain = open(ciphertext, FrameType::Data);
  if (plain.size() > layout_.data_size)
    fail(GatewayError::Kind::DataTooLarge, "user data exceeds the data region");
  return plain;
}

std::vector<uint8_t> Consumer::ocall_send(std::span<const uint8_t> plaintext) {
  if (!established_)
    fail(GatewayError::Kind::NotEstablished, "no session established");
  if (session_.sends_used >= session_.max_sends)
    fail(GatewayError::Kind::SendQuotaExceeded, "send quota exhausted");
  if (plaintext.size() > session_.pad_length)
    fail(GatewayError::Kind::OutputTooLarge, "payload exceeds the pad length");
  if (session_.mode == bundle::ServiceMode::CDaaS && session_.max_output_bits) {
    uint64_t bits = static_cast<uint64_t>(plaintext.size()) * 8;
    if (session_.output_bits_used + bits > session_.max_output_bits)
      fail(GatewayError::Kind::OutputBudgetExceeded,
           "output bit budget exceeded");
    session_.output_bits_used += bits;
  }
  session_.sends_used++;

  std::vector<uint8_t> padded(kPadPrefix + session_.pad_length, 0);
  uint32_t n = static_cast<uint32_t>(plaintext.size());
  for (int i = 0; i < 4; i++) padded[i] = (n >> (8 * i)) & 0xFF;
  std::memcpy(padded.data() + kPadPrefix, plaintext.data(), plaintext.size());
  return seal(tx_, padded, FrameType::Send);
}

std::vector<uint8_t> Consumer::ocall_recv() {
  if (session_.mode != bundle::ServiceMode::CCaaS)
    fail(GatewayError::Kind::ModeViolation, "recv is CCaaS-only");
  if (recv_queue_.empty())
    fail(GatewayError::Kind::QueueEmpty, "no queued host message");
  std::vector<uint8_t> ct = std::move(recv_queue_.front());
  recv_queue_.pop_front();
  return open(ct, FrameType::Recv);
}

void Consumer::host_deliver(std::span<const uint8_t> ciphertext) {
  recv_queue_.emplace_back(ciphertext.begin(), ciphertext.end());
}

Client::Client(Measurement expected) : expected_(expected) { ensure_sodium(); }

std::array<uint8_t, kNonceLen> Client::fresh_nonce() {
  std::array<uint8_t, kNonceLen> n;
  randombytes_buf(n.data(), n.size());
  return n;
}

void Client::process_quote(const Quote& q,
                           const std::array<uint8_t, kNonceLen>& nonce) {
  std::vector<uint8_t> signed_part;
  signed_part.insert(signed_part.end(), q.measurement.digest.begin(),
                     q.measurement.digest.end());
  signed_part.insert(signed_part.end(), q.nonce.begin(), q.nonce.end());
  signed_part.insert(signed_part.end(), q.kx_pub.begin(), q.kx_pub.end());
  if (crypto_sign_verify_detached(q.signature.data(), signed_part.data(),
                                  signed_part.size(),
                                  sign_keys().pk.data()) != 0)
    fail(GatewayError::Kind::AuthFailure, "quote signature invalid");
  if (q.nonce != nonce)
    fail(GatewayError::Kind::AuthFailure, "quote nonce mismatch");
  if (!(q.measurement == expected_))
    fail(GatewayError::Kind::AuthFailure, "measurement mismatch");

  crypto_kx_keypair(kx_pub_.data(), kx_sk_.data());
  if (crypto_kx_client_session_keys(rx_.data(), tx_.data(), kx_pub_.data(),
                                    kx_sk_.data(), q.kx_pub.data()) != 0)
    fail(GatewayError::Kind::AuthFailure, "key exchange failed");
  established_ = true;
}

std::vector<uint8_t> Client::encrypt_code(std::span<const uint8_t> bundle_bytes) {
  if (!established_) fail(GatewayError::Kind::NotEstablished, "no session");
  return seal(tx_, bundle_bytes, FrameType::Code);
}

std::vector<uint8_t> Client::encrypt_data(std::span<const uint8_t> data) {
  if (!established_) fail(GatewayError::Kind::NotEstablished, "no session");
  return seal(tx_, data, FrameType::Data);
}

std::vector<uint8_t> Client::encrypt_recv_payload(std::span<const uint8_t> payload) {
  if (!established_) fail(GatewayError::Kind::NotEstablished, "no session");
  return seal(tx_, payload, FrameType::Recv);
}

std::vector<uint8_t> Client::decrypt_output(std::span<const uint8_t> ciphertext) {
  if (!established_) fail(GatewayError::Kind::NotEstablished, "no session");
  std::vector<uint8_t> padded = open_sealed(rx_, ciphertext, FrameType::Send);
  if (padded.size() < kPadPrefix)
    fail(GatewayError::Kind::AuthFailure, "padded payload too short");
  uint32_t n = 0;
  for (int i = 0; i < 4; i++) n |= static_cast<uint32_t>(padded[i]) << (8 * i);
  if (n > padded.size() - kPadPrefix)
    fail(GatewayError::Kind::AuthFailure, "corrupt pad length");
  return std::vector<uint8_t>(padded.begin() + kPadPrefix,
                              padded.begin() + kPadPrefix + n);
}

}  // namespace cat::gateway
