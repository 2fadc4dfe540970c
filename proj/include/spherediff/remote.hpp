#pragma once

// Wire-protocol client and the bundled loopback server.
//
// Endpoints: "tcp://host:port", "unix:/path/to/socket", or
// "stdio:<shell command>" (spawns the command and talks over its
// stdin/stdout).

#include "spherediff/denoiser.hpp"
#include "spherediff/wire.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace spherediff {

inline constexpr const char* kEndpointEnvVar = "SPHEREDIFF_DENOISER_ENDPOINT";

struct Endpoint {
    enum class Kind { tcp, unix_socket, stdio };
    Kind kind = Kind::tcp;
    std::string host;
    std::uint16_t port = 0;
    std::string path;     // unix socket
    std::string command;  // stdio

    /// Throws std::invalid_argument for unrecognized forms.
    static Endpoint parse(const std::string& spec);
    std::string to_string() const;
};

/// Denoiser that forwards each request over the wire protocol. Sockets open
/// one connection per request; stdio endpoints share one child process and
/// serialize requests.
class RemoteDenoiser final : public Denoiser {
public:
    explicit RemoteDenoiser(Endpoint endpoint);
    ~RemoteDenoiser() override;

    FeatureMatrix denoise(const DenoiseRequest& req) const override;
    double noise_sigma(int t, int total_steps) const override;
    std::string name() const override { return "remote"; }

    const Endpoint& endpoint() const { return endpoint_; }

private:
    wire::Message round_trip(const wire::Message& request) const;

    Endpoint endpoint_;
    struct Child;
    mutable std::mutex child_mutex_;
    mutable std::unique_ptr<Child> child_;
};

/// Answers frames on one stream until EOF. Malformed frames get an error
/// reply and the session continues; a version mismatch or truncated frame
/// gets an error reply and ends the session. Denoise requests go to
/// `backend`; results are rounded once to float32.
void serve_session(wire::Stream& stream, const Denoiser& backend);

/// TCP server on 127.0.0.1 with an ephemeral port, one thread per
/// connection. Stops and joins on destruction.
class LoopbackServer {
public:
    explicit LoopbackServer(DenoiserHandle backend, std::uint16_t port = 0);
    ~LoopbackServer();
    LoopbackServer(const LoopbackServer&) = delete;
    LoopbackServer& operator=(const LoopbackServer&) = delete;

    std::uint16_t port() const { return port_; }
    Endpoint endpoint() const;
    void stop();

private:
    void accept_loop();

    DenoiserHandle backend_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::mutex sessions_mutex_;
    std::vector<std::thread> sessions_;
    std::vector<int> session_fds_;
};

}  // namespace spherediff
