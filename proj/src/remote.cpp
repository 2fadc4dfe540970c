#include "spherediff/remote.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <stdexcept>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

namespace spherediff {

namespace {

void ignore_sigpipe() {
    static const bool once = [] {
        std::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)once;
}

std::string errno_text() { return std::strerror(errno); }

int connect_tcp(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
        throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc), "endpoint");
    }
    int fd = -1;
    std::string last_error = "no addresses";
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            last_error = errno_text();
            continue;
        }
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        last_error = errno_text();
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw TransportError("cannot connect to " + host + ":" + service + ": " + last_error, "endpoint");
    return fd;
}

int connect_unix(const std::string& path) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof(addr.sun_path)) throw TransportError("unix socket path too long", "endpoint");
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError("socket: " + errno_text(), "endpoint");
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
        const std::string msg = "cannot connect to " + path + ": " + errno_text();
        ::close(fd);
        throw TransportError(msg, "endpoint");
    }
    return fd;
}

}  // namespace

Endpoint Endpoint::parse(const std::string& spec) {
    Endpoint e;
    if (spec.rfind("tcp://", 0) == 0) {
        const std::string rest = spec.substr(6);
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size()) {
            throw std::invalid_argument("tcp endpoint must look like tcp://host:port, got " + spec);
        }
        e.kind = Kind::tcp;
        e.host = rest.substr(0, colon);
        if (e.host.size() > 2 && e.host.front() == '[' && e.host.back() == ']') e.host = e.host.substr(1, e.host.size() - 2);
        std::size_t used = 0;
        unsigned long port = 0;
        try {
            port = std::stoul(rest.substr(colon + 1), &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != rest.size() - colon - 1 || port == 0 || port > 65535) {
            throw std::invalid_argument("bad port in endpoint " + spec);
        }
        e.port = static_cast<std::uint16_t>(port);
        return e;
    }
    if (spec.rfind("unix:", 0) == 0) {
        e.kind = Kind::unix_socket;
        e.path = spec.substr(5);
        if (e.path.rfind("//", 0) == 0) e.path = e.path.substr(2);
        if (e.path.empty()) throw std::invalid_argument("unix endpoint needs a path");
        return e;
    }
    if (spec.rfind("stdio:", 0) == 0) {
        e.kind = Kind::stdio;
        e.command = spec.substr(6);
        if (e.command.empty()) throw std::invalid_argument("stdio endpoint needs a command");
        return e;
    }
    throw std::invalid_argument("unrecognized endpoint \"" + spec + "\" (expected tcp://, unix: or stdio:)");
}

std::string Endpoint::to_string() const {
    switch (kind) {
        case Kind::tcp: return "tcp://" + host + ":" + std::to_string(port);
        case Kind::unix_socket: return "unix:" + path;
        case Kind::stdio: return "stdio:" + command;
    }
    return {};
}

struct RemoteDenoiser::Child {
    pid_t pid = -1;
    std::unique_ptr<wire::FdStream> stream;

    explicit Child(const std::string& command) {
        int to_child[2];
        int from_child[2];
        if (::pipe(to_child) != 0) throw TransportError("pipe: " + errno_text(), "endpoint");
        if (::pipe(from_child) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw TransportError("pipe: " + errno_text(), "endpoint");
        }
        pid = ::fork();
        if (pid < 0) throw TransportError("fork: " + errno_text(), "endpoint");
        if (pid == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        stream = std::make_unique<wire::FdStream>(from_child[0], to_child[1]);
    }

    ~Child() {
        stream.reset();  // closing stdin lets the child exit
        if (pid > 0) {
            int status = 0;
            ::waitpid(pid, &status, 0);
        }
    }
};

RemoteDenoiser::RemoteDenoiser(Endpoint endpoint) : endpoint_(std::move(endpoint)) { ignore_sigpipe(); }

RemoteDenoiser::~RemoteDenoiser() = default;

wire::Message RemoteDenoiser::round_trip(const wire::Message& request) const {
    std::optional<std::vector<std::uint8_t>> body;
    if (endpoint_.kind == Endpoint::Kind::stdio) {
        std::lock_guard lock(child_mutex_);
        if (!child_) child_ = std::make_unique<Child>(endpoint_.command);
        try {
            wire::write_frame(*child_->stream, request);
            body = wire::read_frame(*child_->stream);
        } catch (const TransportError&) {
            child_.reset();
            throw;
        }
        if (!body) {
            child_.reset();
            throw TransportError("backend closed the stream without replying", "endpoint");
        }
    } else {
        const int fd = endpoint_.kind == Endpoint::Kind::tcp ? connect_tcp(endpoint_.host, endpoint_.port)
                                                             : connect_unix(endpoint_.path);
        wire::FdStream stream(fd);
        wire::write_frame(stream, request);
        body = wire::read_frame(stream);
        if (!body) throw TransportError("backend closed the connection without replying", "endpoint");
    }
    return wire::decode_body(*body);
}

FeatureMatrix RemoteDenoiser::denoise(const DenoiseRequest& req) const {
    const auto request = wire::make_request(req);
    return wire::read_result(round_trip(request), request.header);
}

double RemoteDenoiser::noise_sigma(int t, int total_steps) const {
    const auto reply = round_trip(wire::make_noise_query(t, total_steps));
    if (reply.header.type == wire::MessageType::error) {
        throw RemoteError("backend error: " + reply.header.reason, "reason");
    }
    if (reply.header.type != wire::MessageType::noise_level) {
        throw ProtocolError("expected a noise_level reply", "type");
    }
    return reply.header.sigma;
}

void serve_session(wire::Stream& stream, const Denoiser& backend) {
    const auto reply_error = [&stream](const std::string& reason) {
        try {
            wire::write_frame(stream, wire::make_error(reason));
        } catch (const TransportError&) {
        }
    };
    for (;;) {
        std::optional<std::vector<std::uint8_t>> body;
        try {
            body = wire::read_frame(stream);
        } catch (const DenoiserError& e) {
            reply_error(e.what());
            return;
        }
        if (!body) return;

        wire::Message msg;
        try {
            msg = wire::decode_body(*body);
        } catch (const ProtocolVersionError& e) {
            reply_error(e.what());
            return;
        } catch (const DenoiserError& e) {
            reply_error(e.what());
            continue;
        }

        try {
            switch (msg.header.type) {
                case wire::MessageType::denoise: {
                    const auto req = wire::to_request(msg);
                    const auto out = backend.denoise(req);
                    if (out.rows() != req.cell_count() || out.cols() != req.channels()) {
                        throw ShapeMismatchError("backend returned a grid of the wrong shape", "payload");
                    }
                    wire::write_frame(stream, wire::make_result(msg.header, out));
                    break;
                }
                case wire::MessageType::noise_level:
                    wire::write_frame(stream,
                                      wire::make_noise_reply(backend.noise_sigma(msg.header.t, msg.header.total_steps)));
                    break;
                default:
                    reply_error("unexpected message type \"" + std::string(wire::to_string(msg.header.type)) + "\"");
                    break;
            }
        } catch (const TransportError&) {
            return;
        } catch (const std::exception& e) {
            reply_error(e.what());
        }
    }
}

LoopbackServer::LoopbackServer(DenoiserHandle backend, std::uint16_t port) : backend_(std::move(backend)) {
    if (!backend_) throw std::invalid_argument("LoopbackServer: backend is null");
    ignore_sigpipe();
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw TransportError("socket: " + errno_text());
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd_, 64) != 0) {
        const std::string msg = "cannot listen on 127.0.0.1:" + std::to_string(port) + ": " + errno_text();
        ::close(listen_fd_);
        throw TransportError(msg);
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
}

LoopbackServer::~LoopbackServer() { stop(); }

Endpoint LoopbackServer::endpoint() const {
    Endpoint e;
    e.kind = Endpoint::Kind::tcp;
    e.host = "127.0.0.1";
    e.port = port_;
    return e;
}

void LoopbackServer::accept_loop() {
    for (;;) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (stopping_) return;
            if (errno == EINTR || errno == ECONNABORTED) continue;
            return;
        }
        std::lock_guard lock(sessions_mutex_);
        if (stopping_) {
            ::close(fd);
            return;
        }
        session_fds_.push_back(fd);
        sessions_.emplace_back([this, fd] {
            {
                wire::FdStream stream(fd, fd, false);
                serve_session(stream, *backend_);
            }
            std::lock_guard inner(sessions_mutex_);
            std::erase(session_fds_, fd);
            ::close(fd);
        });
    }
}

void LoopbackServer::stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    if (acceptor_.joinable()) acceptor_.join();
    ::close(listen_fd_);
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(sessions_mutex_);
        for (int fd : session_fds_) ::shutdown(fd, SHUT_RDWR);
        threads.swap(sessions_);
    }
    for (auto& t : threads) t.join();
}

}  // namespace spherediff
