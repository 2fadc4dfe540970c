#include "spherediff/wire.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <cstring>

#include <unistd.h>

namespace spherediff::wire {

using nlohmann::json;

std::string_view to_string(MessageType t) {
    switch (t) {
        case MessageType::denoise: return "denoise";
        case MessageType::result: return "result";
        case MessageType::noise_level: return "noise_level";
        case MessageType::error: return "error";
    }
    return "unknown";
}

std::optional<MessageType> parse_message_type(std::string_view s) {
    for (auto t : {MessageType::denoise, MessageType::result, MessageType::noise_level, MessageType::error}) {
        if (to_string(t) == s) return t;
    }
    return std::nullopt;
}

void put_u32le(std::uint32_t v, std::span<std::uint8_t, 4> out) {
    for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32le(std::span<const std::uint8_t, 4> in) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
    return v;
}

void put_f32le(float v, std::span<std::uint8_t, 4> out) { put_u32le(std::bit_cast<std::uint32_t>(v), out); }

float get_f32le(std::span<const std::uint8_t, 4> in) { return std::bit_cast<float>(get_u32le(in)); }

namespace {

bool carries_grid(MessageType t) { return t == MessageType::denoise || t == MessageType::result; }

json header_to_json(const Header& h) {
    json j;
    j["version"] = h.version;
    j["type"] = std::string(to_string(h.type));
    switch (h.type) {
        case MessageType::denoise:
        case MessageType::result:
            j["H"] = h.height;
            j["W"] = h.width;
            j["C"] = h.channels;
            j["t"] = h.t;
            j["T"] = h.total_steps;
            j["prompt"] = h.prompt;
            j["azimuth"] = h.azimuth_deg;
            j["elevation"] = h.elevation_deg;
            j["seed"] = h.seed;
            if (h.type == MessageType::denoise) j["directions"] = h.has_directions;
            break;
        case MessageType::noise_level:
            j["t"] = h.t;
            j["T"] = h.total_steps;
            j["sigma"] = h.sigma;
            break;
        case MessageType::error:
            j["reason"] = h.reason;
            break;
    }
    return j;
}

template <typename T>
T required(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) throw ProtocolError(std::string("header is missing \"") + key + "\"", key);
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ProtocolError(std::string("header field \"") + key + "\" has the wrong type", key);
    }
}

template <typename T>
T optional_field(const json& j, const char* key, T fallback) {
    return j.contains(key) ? required<T>(j, key) : fallback;
}

Header header_from_json(const json& j) {
    Header h;
    if (!j.is_object()) throw ProtocolError("header is not a JSON object", "header");
    if (!j.contains("version")) throw ProtocolError("header is missing \"version\"", "version");
    if (!j["version"].is_string() || j["version"].get<std::string>() != kProtocolVersion) {
        throw ProtocolVersionError("unsupported protocol version " + j["version"].dump() + ", expected \"1\"",
                                   "version");
    }
    h.version = j["version"].get<std::string>();
    const auto type_name = required<std::string>(j, "type");
    const auto type = parse_message_type(type_name);
    if (!type) throw ProtocolError("unknown message type \"" + type_name + "\"", "type");
    h.type = *type;
    switch (h.type) {
        case MessageType::denoise:
        case MessageType::result:
            h.height = required<std::uint32_t>(j, "H");
            h.width = required<std::uint32_t>(j, "W");
            h.channels = required<std::uint32_t>(j, "C");
            h.t = required<int>(j, "t");
            h.total_steps = required<int>(j, "T");
            h.prompt = optional_field<std::string>(j, "prompt", {});
            h.azimuth_deg = optional_field<double>(j, "azimuth", 0.0);
            h.elevation_deg = optional_field<double>(j, "elevation", 0.0);
            h.seed = optional_field<std::uint64_t>(j, "seed", 0);
            h.has_directions = h.type == MessageType::denoise && optional_field<bool>(j, "directions", false);
            break;
        case MessageType::noise_level:
            h.t = required<int>(j, "t");
            h.total_steps = required<int>(j, "T");
            h.sigma = optional_field<double>(j, "sigma", 0.0);
            break;
        case MessageType::error:
            h.reason = optional_field<std::string>(j, "reason", {});
            break;
    }
    return h;
}

void append_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
    const std::size_t base = out.size();
    out.resize(base + 4 * values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        put_f32le(values[i], std::span<std::uint8_t, 4>(out.data() + base + 4 * i, 4));
    }
}

std::vector<float> read_floats(std::span<const std::uint8_t> bytes) {
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = get_f32le(std::span<const std::uint8_t, 4>(bytes.data() + 4 * i, 4));
    }
    return out;
}

}  // namespace

std::vector<std::uint8_t> encode_body(const Message& m) {
    const std::string head = header_to_json(m.header).dump() + "\n";
    std::vector<std::uint8_t> out(head.begin(), head.end());
    out.reserve(out.size() + 4 * (m.payload.size() + m.directions.size()));
    append_floats(out, m.payload);
    append_floats(out, m.directions);
    return out;
}

Message decode_body(std::span<const std::uint8_t> body) {
    const auto newline = std::find(body.begin(), body.end(), std::uint8_t{'\n'});
    if (newline == body.end()) throw ProtocolError("frame has no header terminator", "header");
    const std::string head(body.begin(), newline);
    json j;
    try {
        j = json::parse(head);
    } catch (const json::parse_error& e) {
        throw ProtocolError(std::string("header is not valid JSON: ") + e.what(), "header");
    }
    Message m;
    m.header = header_from_json(j);
    const auto payload = body.subspan(static_cast<std::size_t>(newline - body.begin()) + 1);

    std::size_t expected = 0;
    std::size_t grid_values = 0;
    if (carries_grid(m.header.type)) {
        const std::size_t cells = std::size_t{m.header.height} * m.header.width;
        grid_values = cells * m.header.channels;
        expected = 4 * grid_values + (m.header.has_directions ? 12 * cells : 0);
    }
    if (payload.size() != expected) {
        throw ShapeMismatchError("payload has " + std::to_string(payload.size()) + " bytes, header implies " +
                                     std::to_string(expected),
                                 "payload");
    }
    m.payload = read_floats(payload.first(4 * grid_values));
    m.directions = read_floats(payload.subspan(4 * grid_values));
    return m;
}

std::vector<std::uint8_t> encode_frame(const Message& m) {
    const auto body = encode_body(m);
    if (body.size() > kMaxFrameBytes) throw ProtocolError("frame exceeds maximum size", "frame length");
    std::vector<std::uint8_t> out(4 + body.size());
    put_u32le(static_cast<std::uint32_t>(body.size()), std::span<std::uint8_t, 4>(out.data(), 4));
    std::copy(body.begin(), body.end(), out.begin() + 4);
    return out;
}

Message make_request(const DenoiseRequest& req) {
    req.validate();
    Message m;
    auto& h = m.header;
    h.type = MessageType::denoise;
    h.height = static_cast<std::uint32_t>(req.height);
    h.width = static_cast<std::uint32_t>(req.width);
    h.channels = static_cast<std::uint32_t>(req.channels());
    h.t = req.t;
    h.total_steps = req.total_steps;
    h.prompt = req.prompt;
    h.azimuth_deg = req.view_azimuth_deg;
    h.elevation_deg = req.view_elevation_deg;
    h.seed = req.seed;
    h.has_directions = true;
    m.payload.reserve(req.features.data().size());
    for (double v : req.features.data()) m.payload.push_back(static_cast<float>(v));
    m.directions.reserve(3 * req.directions.size());
    for (const auto& d : req.directions) {
        m.directions.push_back(static_cast<float>(d.x()));
        m.directions.push_back(static_cast<float>(d.y()));
        m.directions.push_back(static_cast<float>(d.z()));
    }
    return m;
}

DenoiseRequest to_request(const Message& m) {
    const auto& h = m.header;
    if (h.type != MessageType::denoise) throw ProtocolError("expected a denoise message", "type");
    DenoiseRequest req;
    req.height = h.height;
    req.width = h.width;
    req.features = FeatureMatrix(req.cell_count(), h.channels);
    std::copy(m.payload.begin(), m.payload.end(), req.features.data().begin());
    req.t = h.t;
    req.total_steps = h.total_steps;
    req.prompt = h.prompt;
    req.view_azimuth_deg = h.azimuth_deg;
    req.view_elevation_deg = h.elevation_deg;
    req.seed = h.seed;
    if (h.has_directions) {
        req.directions.reserve(req.cell_count());
        for (std::size_t cell = 0; cell < req.cell_count(); ++cell) {
            try {
                req.directions.emplace_back(m.directions[3 * cell], m.directions[3 * cell + 1],
                                            m.directions[3 * cell + 2]);
            } catch (const std::invalid_argument&) {
                throw ShapeMismatchError("cell " + std::to_string(cell) + " carries a degenerate direction",
                                         "directions");
            }
        }
    } else {
        // The backend knows nothing about geometry; give it a neutral field.
        req.directions.assign(req.cell_count(), Direction{});
    }
    req.validate();
    return req;
}

Message make_result(const Header& request_header, const FeatureMatrix& features) {
    Message m;
    m.header = request_header;
    m.header.type = MessageType::result;
    m.header.has_directions = false;
    m.payload.reserve(features.data().size());
    for (double v : features.data()) m.payload.push_back(static_cast<float>(v));
    return m;
}

Message make_error(std::string reason) {
    Message m;
    m.header.type = MessageType::error;
    m.header.reason = std::move(reason);
    return m;
}

Message make_noise_query(int t, int total_steps) {
    Message m;
    m.header.type = MessageType::noise_level;
    m.header.t = t;
    m.header.total_steps = total_steps;
    return m;
}

Message make_noise_reply(double sigma) {
    Message m = make_noise_query(0, 0);
    m.header.sigma = sigma;
    return m;
}

FeatureMatrix read_result(const Message& reply, const Header& request_header) {
    const auto& h = reply.header;
    if (h.type == MessageType::error) throw RemoteError("backend error: " + h.reason, "reason");
    if (h.type != MessageType::result) {
        throw ProtocolError("expected a result message, got " + std::string(to_string(h.type)), "type");
    }
    const auto check = [](std::uint32_t got, std::uint32_t want, const char* field) {
        if (got != want) {
            throw ShapeMismatchError(std::string("response ") + field + " = " + std::to_string(got) + ", request had " +
                                         std::to_string(want),
                                     field);
        }
    };
    check(h.height, request_header.height, "H");
    check(h.width, request_header.width, "W");
    check(h.channels, request_header.channels, "C");
    FeatureMatrix out(std::size_t{h.height} * h.width, h.channels);
    std::copy(reply.payload.begin(), reply.payload.end(), out.data().begin());
    return out;
}

FdStream::FdStream(int read_fd, int write_fd, bool owns) : read_fd_(read_fd), write_fd_(write_fd), owns_(owns) {}

FdStream::~FdStream() {
    if (!owns_) return;
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
}

bool FdStream::read_exact(std::span<std::uint8_t> out) {
    std::size_t done = 0;
    while (done < out.size()) {
        const ssize_t n = ::read(read_fd_, out.data() + done, out.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("read failed: ") + std::strerror(errno));
        }
        if (n == 0) {
            if (done == 0) return false;
            throw TransportError("stream closed after " + std::to_string(done) + " of " + std::to_string(out.size()) +
                                 " bytes");
        }
        done += static_cast<std::size_t>(n);
    }
    return true;
}

void FdStream::write_all(std::span<const std::uint8_t> data) {
    std::size_t done = 0;
    while (done < data.size()) {
        const ssize_t n = ::write(write_fd_, data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("write failed: ") + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

std::optional<std::vector<std::uint8_t>> read_frame(Stream& s) {
    std::array<std::uint8_t, 4> prefix{};
    try {
        if (!s.read_exact(prefix)) return std::nullopt;
    } catch (const TransportError& e) {
        throw TransportError(std::string("truncated frame length prefix: ") + e.what(), "frame length");
    }
    const std::uint32_t length = get_u32le(prefix);
    if (length > kMaxFrameBytes) {
        throw ProtocolError("frame length " + std::to_string(length) + " exceeds maximum", "frame length");
    }
    std::vector<std::uint8_t> body(length);
    try {
        if (length > 0 && !s.read_exact(body)) throw TransportError("stream closed before frame body");
    } catch (const TransportError& e) {
        throw TransportError(std::string("truncated frame (frame length ") + std::to_string(length) + "): " + e.what(),
                             "frame length");
    }
    return body;
}

void write_frame(Stream& s, const Message& m) { s.write_all(encode_frame(m)); }

}  // namespace spherediff::wire
