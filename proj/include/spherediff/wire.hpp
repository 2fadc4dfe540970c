#pragma once

// Framed wire protocol for out-of-process denoisers.
//
//   frame   := length:u32le body
//   body    := header '\n' payload
//   header  := one line of compact JSON (no raw newline)
//   payload := H·W·C float32 little-endian values, row-major cells,
//              channels innermost; a request with "directions": true
//              appends H·W·3 float32 source directions (x, y, z)
//
// Header keys: "version" ("1"), "type" ("denoise" | "result" |
// "noise_level" | "error"), "H", "W", "C", "t", "T", "prompt", "azimuth",
// "elevation" (view angles in degrees), "seed", "directions", "sigma"
// (noise_level responses), "reason" (error responses).
//
// Values are computed in double and rounded once to float32 on encode.

#include "spherediff/denoiser.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spherediff::wire {

inline constexpr std::string_view kProtocolVersion = "1";
/// Frames above this size are rejected before allocation.
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

enum class MessageType { denoise, result, noise_level, error };

std::string_view to_string(MessageType t);
std::optional<MessageType> parse_message_type(std::string_view s);

struct Header {
    std::string version{kProtocolVersion};
    MessageType type = MessageType::denoise;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 0;
    int t = 0;
    int total_steps = 0;
    std::string prompt;
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    std::uint64_t seed = 0;
    bool has_directions = false;
    double sigma = 0.0;
    std::string reason;
};

struct Message {
    Header header;
    std::vector<float> payload;
    std::vector<float> directions;
};

/// Body bytes (header line + payload), without the length prefix.
std::vector<std::uint8_t> encode_body(const Message& m);
/// Throws ProtocolError for malformed bodies, ProtocolVersionError for a
/// version other than "1", ShapeMismatchError when the payload size does
/// not match the header.
Message decode_body(std::span<const std::uint8_t> body);

/// Length prefix + body.
std::vector<std::uint8_t> encode_frame(const Message& m);

void put_u32le(std::uint32_t v, std::span<std::uint8_t, 4> out);
std::uint32_t get_u32le(std::span<const std::uint8_t, 4> in);
void put_f32le(float v, std::span<std::uint8_t, 4> out);
float get_f32le(std::span<const std::uint8_t, 4> in);

Message make_request(const DenoiseRequest& req);
/// Rebuilds an in-process request; coordinates are not carried on the wire.
DenoiseRequest to_request(const Message& m);
Message make_result(const Header& request_header, const FeatureMatrix& features);
Message make_error(std::string reason);
Message make_noise_query(int t, int total_steps);
Message make_noise_reply(double sigma);
/// Checks a result against the request shape; throws RemoteError for error
/// replies and ShapeMismatchError naming the mismatching field.
FeatureMatrix read_result(const Message& reply, const Header& request_header);

/// Blocking byte stream (socket or pipe pair).
class Stream {
public:
    virtual ~Stream() = default;
    /// Fills `out` completely; returns false on clean EOF before the first
    /// byte, throws TransportError on EOF mid-read or I/O failure.
    virtual bool read_exact(std::span<std::uint8_t> out) = 0;
    virtual void write_all(std::span<const std::uint8_t> data) = 0;
};

/// Owns a read and a write file descriptor (the same one for sockets).
class FdStream final : public Stream {
public:
    FdStream(int read_fd, int write_fd, bool owns = true);
    explicit FdStream(int fd) : FdStream(fd, fd, true) {}
    ~FdStream() override;
    FdStream(const FdStream&) = delete;
    FdStream& operator=(const FdStream&) = delete;

    bool read_exact(std::span<std::uint8_t> out) override;
    void write_all(std::span<const std::uint8_t> data) override;

private:
    int read_fd_;
    int write_fd_;
    bool owns_;
};

/// Reads one frame body; nothing on clean EOF between frames.
std::optional<std::vector<std::uint8_t>> read_frame(Stream& s);
void write_frame(Stream& s, const Message& m);

}  // namespace spherediff::wire
