#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "blockflow/errors.hpp"
#include "blockflow/linalg.hpp"

namespace blockflow::net {

using Bytes = std::vector<uint8_t>;

// Wire layout, all integers little-endian:
//   magic "LDSH" (4) | version u8 | origin u32 | destination u32 |
//   type-id u16 | payload-length u32 | signature-length u16 |
//   signature | payload
// The 21-byte herald is the fixed prefix; the signature covers
// (herald || payload).
inline constexpr size_t kHeraldSize = 21;
inline constexpr uint8_t kProtocolVersion = 1;
inline constexpr std::array<uint8_t, 4> kMagic = {'L', 'D', 'S', 'H'};

/// Fixed shape of a registered message type; the wire size of every known
/// type is known up front, so receive buffers never guess.
struct PayloadShape {
    enum class Kind { Empty, Scalar, Vector, Matrix } kind = Kind::Scalar;
    int rows = 0;
    int cols = 0;

    static PayloadShape empty() { return {Kind::Empty, 0, 0}; }
    static PayloadShape scalar() { return {Kind::Scalar, 1, 1}; }
    static PayloadShape vector(int n) { return {Kind::Vector, n, 1}; }
    static PayloadShape matrix(int r, int c) { return {Kind::Matrix, r, c}; }

    size_t byteSize() const;
};

/// Decoded payload value; vectors travel as n-by-1 matrices.
using PayloadValue = std::variant<std::monostate, double, la::Matrix>;

/// type-id <-> shape registry with bijective encode/decode per type.
class PayloadCodec {
public:
    void registerType(uint16_t typeId, PayloadShape shape);
    bool known(uint16_t typeId) const { return shapes_.count(typeId) != 0; }
    const PayloadShape& shape(uint16_t typeId) const;

    /// Row-major little-endian doubles. Throws PayloadSizeMismatch when the
    /// value does not have the registered shape.
    Bytes encodePayload(uint16_t typeId, const PayloadValue& value) const;
    PayloadValue decodePayload(uint16_t typeId, std::span<const uint8_t> bytes) const;

private:
    std::map<uint16_t, PayloadShape> shapes_;
};

/// Detached signature scheme over the signed region. The default is
/// HMAC-SHA256 under a shared key; the interface leaves room for a
/// public-key scheme without any format change.
class FrameSigner {
public:
    virtual ~FrameSigner() = default;
    virtual Bytes sign(std::span<const uint8_t> data) const = 0;
    virtual bool verify(std::span<const uint8_t> data,
                        std::span<const uint8_t> signature) const = 0;
    virtual size_t signatureSize() const = 0;
};

class HmacSha256Signer final : public FrameSigner {
public:
    explicit HmacSha256Signer(Bytes key);
    Bytes sign(std::span<const uint8_t> data) const override;
    bool verify(std::span<const uint8_t> data,
                std::span<const uint8_t> signature) const override;
    size_t signatureSize() const override { return 32; }

private:
    Bytes key_;
};

/// Named key handles, mirroring a trusted-key list. signFrame/verifyFrame
/// throw UnknownKey for unregistered handles.
class KeyStore {
public:
    void addKey(const std::string& handle, Bytes key);
    const FrameSigner& signer(const std::string& handle) const;

private:
    std::map<std::string, std::unique_ptr<HmacSha256Signer>> signers_;
};

enum class DecodeErrorKind {
    Malformed,     // truncated, trailing bytes, or inconsistent lengths
    BadMagic,      // wrong magic or unknown version
    UnknownType,   // unregistered type-id
    SizeMismatch,  // payload length does not match the registered shape
    SignatureInvalid,
    AddressMismatch,
    kCount,
};

class DecodeError : public EngineError {
public:
    DecodeError(DecodeErrorKind kind, const std::string& what)
        : EngineError(what), kind_(kind) {}
    DecodeErrorKind kind() const { return kind_; }

private:
    DecodeErrorKind kind_;
};

#define BLOCKFLOW_DECODE_ERROR(Name)                                       \
    class Name : public DecodeError {                                      \
    public:                                                                \
        explicit Name(const std::string& what)                             \
            : DecodeError(DecodeErrorKind::Name, what) {}                  \
    };
BLOCKFLOW_DECODE_ERROR(Malformed)
BLOCKFLOW_DECODE_ERROR(BadMagic)
BLOCKFLOW_DECODE_ERROR(UnknownType)
BLOCKFLOW_DECODE_ERROR(SizeMismatch)
BLOCKFLOW_DECODE_ERROR(SignatureInvalid)
BLOCKFLOW_DECODE_ERROR(AddressMismatch)
#undef BLOCKFLOW_DECODE_ERROR

struct Message {
    uint32_t origin = 0;
    uint32_t destination = 0;
    uint16_t typeId = 0;
    PayloadValue value;
    Bytes payload;
};

/// Emits herald || signature || payload with the signature computed over
/// (herald || payload).
Bytes encodeFrame(uint32_t origin, uint32_t destination, uint16_t typeId,
                  const PayloadValue& value, const PayloadCodec& codec,
                  const FrameSigner& signer);

/// Strict parse of exactly one frame: bad magic, unknown version or type,
/// size inconsistencies, trailing bytes, and failed signatures all reject.
/// When localDestination is set, frames addressed elsewhere are rejected
/// with AddressMismatch.
Message decodeFrame(std::span<const uint8_t> bytes, const PayloadCodec& codec,
                    const FrameSigner& verifier,
                    std::optional<uint32_t> localDestination = std::nullopt);

/// Detached signature over an arbitrary buffer under a named key.
Bytes signFrame(std::span<const uint8_t> bytes, const KeyStore& keys,
                const std::string& keyHandle);
bool verifyFrame(std::span<const uint8_t> bytes, std::span<const uint8_t> signature,
                 const KeyStore& keys, const std::string& keyHandle);

/// One datagram per frame in both directions.
class Transport {
public:
    virtual ~Transport() = default;
    virtual void send(const Bytes& datagram) = 0;
    virtual std::optional<Bytes> receive(int timeoutMs) = 0;
};

/// Paired in-memory queues for tests. makeInMemoryPair()'s first element
/// sends into the second's receive queue and vice versa.
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> makeInMemoryPair();

/// UDP datagram transport bound to bindHost:bindPort, sending to
/// peerHost:peerPort.
std::unique_ptr<Transport> makeUdpTransport(const std::string& bindHost, uint16_t bindPort,
                                            const std::string& peerHost, uint16_t peerPort);

/// Publishing and receiving endpoint: one frame per datagram out, and on the
/// way in every frame that fails to decode is silently dropped and counted
/// by error class.
class FrameEndpoint {
public:
    FrameEndpoint(std::unique_ptr<Transport> transport, PayloadCodec codec,
                  std::shared_ptr<const FrameSigner> signer, uint32_t localId,
                  bool filterByDestination = true);

    void publish(uint32_t destination, uint16_t typeId, const PayloadValue& value);
    std::optional<Message> receive(int timeoutMs = 0);

    uint64_t drops(DecodeErrorKind kind) const;
    uint64_t totalDrops() const;
    uint32_t localId() const { return localId_; }
    const PayloadCodec& codec() const { return codec_; }

private:
    std::unique_ptr<Transport> transport_;
    PayloadCodec codec_;
    std::shared_ptr<const FrameSigner> signer_;
    uint32_t localId_;
    bool filter_;
    std::array<uint64_t, static_cast<size_t>(DecodeErrorKind::kCount)> drops_{};
};

}  // namespace blockflow::net
