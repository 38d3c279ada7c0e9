#include "blockflow/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <openssl/core_names.h>
#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/params.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace blockflow::net {

size_t PayloadShape::byteSize() const {
    switch (kind) {
        case Kind::Empty:
            return 0;
        case Kind::Scalar:
            return 8;
        case Kind::Vector:
            return static_cast<size_t>(rows) * 8;
        case Kind::Matrix:
            return static_cast<size_t>(rows) * cols * 8;
    }
    return 0;
}

void PayloadCodec::registerType(uint16_t typeId, PayloadShape shape) {
    shapes_[typeId] = shape;
}

const PayloadShape& PayloadCodec::shape(uint16_t typeId) const {
    auto it = shapes_.find(typeId);
    if (it == shapes_.end())
        throw UnknownType("unregistered message type " + std::to_string(typeId));
    return it->second;
}

namespace {

void putU16(Bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void putU32(Bytes& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint16_t getU16(std::span<const uint8_t> b, size_t at) {
    return static_cast<uint16_t>(b[at] | (b[at + 1] << 8));
}

uint32_t getU32(std::span<const uint8_t> b, size_t at) {
    return static_cast<uint32_t>(b[at]) | (static_cast<uint32_t>(b[at + 1]) << 8) |
           (static_cast<uint32_t>(b[at + 2]) << 16) |
           (static_cast<uint32_t>(b[at + 3]) << 24);
}

void putDouble(Bytes& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
}

double getDouble(std::span<const uint8_t> b, size_t at) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[at + i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

Bytes PayloadCodec::encodePayload(uint16_t typeId, const PayloadValue& value) const {
    const PayloadShape& s = shape(typeId);
    Bytes out;
    out.reserve(s.byteSize());
    switch (s.kind) {
        case PayloadShape::Kind::Empty:
            if (!std::holds_alternative<std::monostate>(value))
                throw PayloadSizeMismatch("type " + std::to_string(typeId) +
                                          " carries no payload");
            break;
        case PayloadShape::Kind::Scalar: {
            const double* d = std::get_if<double>(&value);
            if (!d) throw PayloadSizeMismatch("type " + std::to_string(typeId) +
                                              " expects a scalar payload");
            putDouble(out, *d);
            break;
        }
        case PayloadShape::Kind::Vector:
        case PayloadShape::Kind::Matrix: {
            const la::Matrix* m = std::get_if<la::Matrix>(&value);
            if (!m || m->rows() != s.rows || m->cols() != s.cols)
                throw PayloadSizeMismatch("payload shape does not match type " +
                                          std::to_string(typeId));
            for (double v : m->data()) putDouble(out, v);
            break;
        }
    }
    return out;
}

PayloadValue PayloadCodec::decodePayload(uint16_t typeId,
                                         std::span<const uint8_t> bytes) const {
    const PayloadShape& s = shape(typeId);
    if (bytes.size() != s.byteSize())
        throw SizeMismatch("payload of " + std::to_string(bytes.size()) +
                           " bytes does not match type " + std::to_string(typeId));
    switch (s.kind) {
        case PayloadShape::Kind::Empty:
            return std::monostate{};
        case PayloadShape::Kind::Scalar:
            return getDouble(bytes, 0);
        case PayloadShape::Kind::Vector:
        case PayloadShape::Kind::Matrix: {
            la::Matrix m(s.rows, s.cols);
            for (size_t i = 0; i < m.data().size(); ++i) m.data()[i] = getDouble(bytes, i * 8);
            return m;
        }
    }
    throw Malformed("corrupt payload shape");
}

// --- HMAC-SHA256 ------------------------------------------------------------

namespace {

EVP_MAC* hmacAlgorithm() {
    static EVP_MAC* mac = EVP_MAC_fetch(nullptr, "HMAC", nullptr);
    return mac;
}

}  // namespace

HmacSha256Signer::HmacSha256Signer(Bytes key) : key_(std::move(key)) {
    if (key_.empty()) throw UnknownKey("empty HMAC key");
}

Bytes HmacSha256Signer::sign(std::span<const uint8_t> data) const {
    EVP_MAC_CTX* ctx = EVP_MAC_CTX_new(hmacAlgorithm());
    if (!ctx) throw TransportError("EVP_MAC_CTX_new failed");
    char digest[] = "SHA256";
    OSSL_PARAM params[] = {OSSL_PARAM_construct_utf8_string(OSSL_MAC_PARAM_DIGEST, digest, 0),
                           OSSL_PARAM_construct_end()};
    uint8_t out[64];
    size_t outLen = 0;
    bool ok = EVP_MAC_init(ctx, key_.data(), key_.size(), params) == 1 &&
              EVP_MAC_update(ctx, data.data(), data.size()) == 1 &&
              EVP_MAC_final(ctx, out, &outLen, sizeof out) == 1;
    EVP_MAC_CTX_free(ctx);
    if (!ok) throw TransportError("HMAC computation failed");
    return Bytes(out, out + outLen);
}

bool HmacSha256Signer::verify(std::span<const uint8_t> data,
                              std::span<const uint8_t> signature) const {
    Bytes expected = sign(data);
    if (signature.size() != expected.size()) return false;
    return CRYPTO_memcmp(expected.data(), signature.data(), expected.size()) == 0;
}

void KeyStore::addKey(const std::string& handle, Bytes key) {
    signers_[handle] = std::make_unique<HmacSha256Signer>(std::move(key));
}

const FrameSigner& KeyStore::signer(const std::string& handle) const {
    auto it = signers_.find(handle);
    if (it == signers_.end()) throw UnknownKey("unknown key handle '" + handle + "'");
    return *it->second;
}

// --- frame codec -------------------------------------------------------------

Bytes encodeFrame(uint32_t origin, uint32_t destination, uint16_t typeId,
                  const PayloadValue& value, const PayloadCodec& codec,
                  const FrameSigner& signer) {
    Bytes payload = codec.encodePayload(typeId, value);

    Bytes herald;
    herald.reserve(kHeraldSize);
    herald.insert(herald.end(), kMagic.begin(), kMagic.end());
    herald.push_back(kProtocolVersion);
    putU32(herald, origin);
    putU32(herald, destination);
    putU16(herald, typeId);
    putU32(herald, static_cast<uint32_t>(payload.size()));
    putU16(herald, static_cast<uint16_t>(signer.signatureSize()));

    Bytes signedRegion = herald;
    signedRegion.insert(signedRegion.end(), payload.begin(), payload.end());
    Bytes signature = signer.sign(signedRegion);

    Bytes frame = std::move(herald);
    frame.insert(frame.end(), signature.begin(), signature.end());
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

Message decodeFrame(std::span<const uint8_t> bytes, const PayloadCodec& codec,
                    const FrameSigner& verifier, std::optional<uint32_t> localDestination) {
    if (bytes.size() < kHeraldSize) throw Malformed("frame shorter than the herald");
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
        throw BadMagic("bad magic bytes");
    if (bytes[4] != kProtocolVersion)
        throw BadMagic("unknown protocol version " + std::to_string(bytes[4]));

    Message msg;
    msg.origin = getU32(bytes, 5);
    msg.destination = getU32(bytes, 9);
    msg.typeId = getU16(bytes, 13);
    uint32_t payloadLen = getU32(bytes, 15);
    uint16_t sigLen = getU16(bytes, 19);

    if (!codec.known(msg.typeId))
        throw UnknownType("unregistered message type " + std::to_string(msg.typeId));
    if (sigLen != verifier.signatureSize()) throw Malformed("unexpected signature length");
    // Exactly one frame: no truncation, no trailing bytes.
    size_t expected = kHeraldSize + static_cast<size_t>(sigLen) + payloadLen;
    if (bytes.size() != expected)
        throw Malformed("frame length " + std::to_string(bytes.size()) +
                        " does not match declared " + std::to_string(expected));
    if (payloadLen != codec.shape(msg.typeId).byteSize())
        throw SizeMismatch("declared payload length " + std::to_string(payloadLen) +
                           " does not match type " + std::to_string(msg.typeId));

    std::span<const uint8_t> signature = bytes.subspan(kHeraldSize, sigLen);
    std::span<const uint8_t> payload = bytes.subspan(kHeraldSize + sigLen, payloadLen);

    Bytes signedRegion;
    signedRegion.reserve(kHeraldSize + payloadLen);
    signedRegion.insert(signedRegion.end(), bytes.begin(), bytes.begin() + kHeraldSize);
    signedRegion.insert(signedRegion.end(), payload.begin(), payload.end());
    if (!verifier.verify(signedRegion, signature))
        throw SignatureInvalid("frame signature did not verify");

    if (localDestination && msg.destination != *localDestination)
        throw AddressMismatch("frame addressed to " + std::to_string(msg.destination) +
                              ", local id is " + std::to_string(*localDestination));

    msg.payload.assign(payload.begin(), payload.end());
    msg.value = codec.decodePayload(msg.typeId, payload);
    return msg;
}

Bytes signFrame(std::span<const uint8_t> bytes, const KeyStore& keys,
                const std::string& keyHandle) {
    return keys.signer(keyHandle).sign(bytes);
}

bool verifyFrame(std::span<const uint8_t> bytes, std::span<const uint8_t> signature,
                 const KeyStore& keys, const std::string& keyHandle) {
    return keys.signer(keyHandle).verify(bytes, signature);
}

// --- transports --------------------------------------------------------------

namespace {

struct SharedQueue {
    std::mutex mutex;
    std::deque<Bytes> queue;
};

class InMemoryTransport final : public Transport {
public:
    InMemoryTransport(std::shared_ptr<SharedQueue> tx, std::shared_ptr<SharedQueue> rx)
        : tx_(std::move(tx)), rx_(std::move(rx)) {}

    void send(const Bytes& datagram) override {
        std::lock_guard lock(tx_->mutex);
        tx_->queue.push_back(datagram);
    }

    std::optional<Bytes> receive(int) override {
        std::lock_guard lock(rx_->mutex);
        if (rx_->queue.empty()) return std::nullopt;
        Bytes front = std::move(rx_->queue.front());
        rx_->queue.pop_front();
        return front;
    }

private:
    std::shared_ptr<SharedQueue> tx_;
    std::shared_ptr<SharedQueue> rx_;
};

class UdpTransport final : public Transport {
public:
    UdpTransport(const std::string& bindHost, uint16_t bindPort, const std::string& peerHost,
                 uint16_t peerPort) {
        fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
        if (fd_ < 0) throw TransportError("socket() failed");
        sockaddr_in local{};
        local.sin_family = AF_INET;
        local.sin_port = htons(bindPort);
        if (::inet_pton(AF_INET, bindHost.c_str(), &local.sin_addr) != 1) {
            ::close(fd_);
            throw TransportError("bad bind address '" + bindHost + "'");
        }
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&local), sizeof local) != 0) {
            ::close(fd_);
            throw TransportError("bind() failed on " + bindHost + ":" +
                                 std::to_string(bindPort));
        }
        peer_.sin_family = AF_INET;
        peer_.sin_port = htons(peerPort);
        if (::inet_pton(AF_INET, peerHost.c_str(), &peer_.sin_addr) != 1) {
            ::close(fd_);
            throw TransportError("bad peer address '" + peerHost + "'");
        }
    }

    ~UdpTransport() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void send(const Bytes& datagram) override {
        ssize_t n = ::sendto(fd_, datagram.data(), datagram.size(), 0,
                             reinterpret_cast<const sockaddr*>(&peer_), sizeof peer_);
        if (n < 0 || static_cast<size_t>(n) != datagram.size())
            throw TransportError("sendto() failed");
    }

    std::optional<Bytes> receive(int timeoutMs) override {
        pollfd pfd{fd_, POLLIN, 0};
        int ready = ::poll(&pfd, 1, timeoutMs);
        if (ready <= 0) return std::nullopt;
        uint8_t buffer[65536];
        sockaddr_in from{};
        socklen_t fromLen = sizeof from;
        ssize_t n = ::recvfrom(fd_, buffer, sizeof buffer, 0,
                               reinterpret_cast<sockaddr*>(&from), &fromLen);
        if (n < 0) return std::nullopt;
        // Reply path for echo servers: talk back to whoever spoke last.
        peer_ = from;
        return Bytes(buffer, buffer + n);
    }

private:
    int fd_ = -1;
    sockaddr_in peer_{};
};

}  // namespace

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> makeInMemoryPair() {
    auto a = std::make_shared<SharedQueue>();
    auto b = std::make_shared<SharedQueue>();
    return {std::make_unique<InMemoryTransport>(a, b),
            std::make_unique<InMemoryTransport>(b, a)};
}

std::unique_ptr<Transport> makeUdpTransport(const std::string& bindHost, uint16_t bindPort,
                                            const std::string& peerHost, uint16_t peerPort) {
    return std::make_unique<UdpTransport>(bindHost, bindPort, peerHost, peerPort);
}

// --- endpoint ----------------------------------------------------------------

FrameEndpoint::FrameEndpoint(std::unique_ptr<Transport> transport, PayloadCodec codec,
                             std::shared_ptr<const FrameSigner> signer, uint32_t localId,
                             bool filterByDestination)
    : transport_(std::move(transport)),
      codec_(std::move(codec)),
      signer_(std::move(signer)),
      localId_(localId),
      filter_(filterByDestination) {}

void FrameEndpoint::publish(uint32_t destination, uint16_t typeId,
                            const PayloadValue& value) {
    transport_->send(encodeFrame(localId_, destination, typeId, value, codec_, *signer_));
}

std::optional<Message> FrameEndpoint::receive(int timeoutMs) {
    while (true) {
        std::optional<Bytes> datagram = transport_->receive(timeoutMs);
        if (!datagram) return std::nullopt;
        try {
            return decodeFrame(*datagram, codec_, *signer_,
                               filter_ ? std::optional<uint32_t>(localId_) : std::nullopt);
        } catch (const DecodeError& e) {
            ++drops_[static_cast<size_t>(e.kind())];
            // Malformed traffic never takes the stream down; keep reading.
        }
    }
}

uint64_t FrameEndpoint::drops(DecodeErrorKind kind) const {
    return drops_.at(static_cast<size_t>(kind));
}

uint64_t FrameEndpoint::totalDrops() const {
    uint64_t total = 0;
    for (uint64_t d : drops_) total += d;
    return total;
}

}  // namespace blockflow::net
