#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "dfrd/error.hpp"
#include "dfrd/kt.hpp"
#include "dfrd/mlp.hpp"
#include "dfrd/wire.hpp"

// Transport: runs the wire protocol over a reliable ordered byte stream so a
// TeacherHandle can live in another process or on another host. The server
// speaks first: it announces its dimensions in a HELLO, the client accepts by
// echoing them back with its preferred k, and from then on the session is a
// synchronous QUERY/ANSWER loop until BYE or stream end.

namespace dfrd {

// A duplex byte stream. recv_some returns an empty string on orderly EOF.
class LineChannel {
public:
    virtual ~LineChannel() = default;
    virtual void send_bytes(std::string_view bytes) = 0;
    virtual std::string recv_some() = 0;
    virtual void close() = 0;
};

class SocketChannel final : public LineChannel {
public:
    explicit SocketChannel(int fd) : fd_(fd) {
        if (fd_ < 0) throw IoError("socket channel: bad descriptor");
    }
    SocketChannel(const SocketChannel&) = delete;
    SocketChannel& operator=(const SocketChannel&) = delete;
    ~SocketChannel() override {
        try {
            close();
        } catch (...) {
        }
    }

    void send_bytes(std::string_view bytes) override {
        const char* p = bytes.data();
        std::size_t left = bytes.size();
        while (left > 0) {
            const ssize_t n = ::send(fd_, p, left, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError(std::string("socket send: ") + std::strerror(errno));
            }
            p += n;
            left -= static_cast<std::size_t>(n);
        }
    }

    std::string recv_some() override {
        char buf[65536];
        for (;;) {
            const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
            if (n > 0) return std::string(buf, static_cast<std::size_t>(n));
            if (n == 0) return {};
            if (errno == EINTR) continue;
            throw IoError(std::string("socket recv: ") + std::strerror(errno));
        }
    }

    void close() override {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

    int fd() const { return fd_; }

private:
    int fd_;
};

// Connected in-process channel pair, for tests and same-host sessions.
inline std::pair<std::unique_ptr<SocketChannel>, std::unique_ptr<SocketChannel>> make_local_pair() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
        throw IoError(std::string("socketpair: ") + std::strerror(errno));
    }
    return {std::make_unique<SocketChannel>(fds[0]), std::make_unique<SocketChannel>(fds[1])};
}

// Wrapper recording every byte in both directions; used to audit what a
// session actually puts on the wire.
class CaptureChannel final : public LineChannel {
public:
    explicit CaptureChannel(std::shared_ptr<LineChannel> inner) : inner_(std::move(inner)) {
        if (!inner_) throw InvalidInput("capture channel: null inner channel");
    }

    void send_bytes(std::string_view bytes) override {
        sent_.append(bytes);
        inner_->send_bytes(bytes);
    }

    std::string recv_some() override {
        std::string bytes = inner_->recv_some();
        received_.append(bytes);
        return bytes;
    }

    void close() override { inner_->close(); }

    const std::string& sent() const { return sent_; }
    const std::string& received() const { return received_; }

private:
    std::shared_ptr<LineChannel> inner_;
    std::string sent_;
    std::string received_;
};

struct Endpoint {
    std::string host;
    std::string port;
};

inline Endpoint parse_endpoint(std::string_view s) {
    const auto pos = s.rfind(':');
    if (pos == std::string_view::npos || pos + 1 == s.size()) {
        throw InvalidInput("endpoint must look like host:port, got '" + std::string(s) + "'");
    }
    Endpoint ep;
    ep.host = std::string(s.substr(0, pos));
    ep.port = std::string(s.substr(pos + 1));
    if (ep.host.empty()) ep.host = "127.0.0.1";
    return ep;
}

namespace detail {

inline void enable_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace detail

// Bound + listening TCP socket; returns the descriptor. Port 0 picks a free
// port (recover it with bound_port).
inline int tcp_listen(const std::string& endpoint, int backlog = 16) {
    const Endpoint ep = parse_endpoint(endpoint);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(ep.host.c_str(), ep.port.c_str(), &hints, &res);
    if (rc != 0) throw IoError("resolve " + endpoint + ": " + ::gai_strerror(rc));
    int fd = -1;
    std::string err = "no usable address";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            err = std::strerror(errno);
            continue;
        }
        int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, backlog) == 0) break;
        err = std::strerror(errno);
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw IoError("listen " + endpoint + ": " + err);
    return fd;
}

inline std::uint16_t bound_port(int listen_fd) {
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    if (::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
        throw IoError(std::string("getsockname: ") + std::strerror(errno));
    }
    if (addr.ss_family == AF_INET) {
        return ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    }
    if (addr.ss_family == AF_INET6) {
        return ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
    }
    throw IoError("getsockname: unexpected address family");
}

inline std::unique_ptr<SocketChannel> tcp_accept(int listen_fd) {
    for (;;) {
        const int fd = ::accept(listen_fd, nullptr, nullptr);
        if (fd >= 0) {
            detail::enable_nodelay(fd);
            return std::make_unique<SocketChannel>(fd);
        }
        if (errno == EINTR) continue;
        throw IoError(std::string("accept: ") + std::strerror(errno));
    }
}

inline std::unique_ptr<SocketChannel> tcp_connect(const std::string& endpoint) {
    const Endpoint ep = parse_endpoint(endpoint);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(ep.host.c_str(), ep.port.c_str(), &hints, &res);
    if (rc != 0) throw IoError("resolve " + endpoint + ": " + ::gai_strerror(rc));
    int fd = -1;
    std::string err = "no usable address";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            err = std::strerror(errno);
            continue;
        }
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        err = std::strerror(errno);
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw IoError("connect " + endpoint + ": " + err);
    detail::enable_nodelay(fd);
    return std::make_unique<SocketChannel>(fd);
}

namespace detail {

// Next complete frame, or nullopt on orderly EOF. Bytes after the last
// newline with no terminator are a protocol error once the stream ends.
inline std::optional<Frame> read_frame(LineChannel& ch, LineBuffer& buf) {
    for (;;) {
        if (auto line = buf.next_line()) return decode_frame(*line);
        const std::string bytes = ch.recv_some();
        if (bytes.empty()) {
            if (buf.has_partial()) throw ProtocolError("incomplete-frame", "stream ended mid-frame");
            return std::nullopt;
        }
        buf.feed(bytes);
    }
}

}  // namespace detail

struct ServeSummary {
    std::uint64_t queries_answered = 0;
    bool clean_bye = false;
    std::string error_code;  // empty on a clean session
};

// Answer one student session over a channel. Speaks HELLO first, then
// answers each QUERY with blackbox_answer on the model; runs until BYE or
// stream end. Peer protocol violations are answered with an ERROR frame and
// recorded in the summary rather than thrown; the channel is closed either
// way. The model is only read.
inline ServeSummary serve_teacher(const MlpModel& model, LineChannel& ch,
                                  std::uint32_t announce_k = default_k) {
    const std::uint32_t n_dim = model.config.in_dim;
    const std::uint32_t n_classes = model.config.out_dim;
    ServeSummary summary;
    LineBuffer buf;
    SessionState session;
    session.role = PeerRole::teacher;

    auto fail = [&](const ProtocolError& e, std::uint64_t seq) {
        try {
            ch.send_bytes(encode_frame(ErrorFrame{seq, e.code(), e.what()}));
        } catch (const IoError&) {
        }
        summary.error_code = e.code();
        ch.close();
    };

    try {
        HelloFrame offer;
        offer.n_dim = n_dim;
        offer.k = std::min(announce_k == 0 ? default_k : announce_k, n_dim);
        offer.n_classes = n_classes;
        ch.send_bytes(encode_frame(offer));

        const auto reply = detail::read_frame(ch, buf);
        if (!reply) {
            summary.error_code = "eof";
            ch.close();
            return summary;
        }
        const auto* accept = std::get_if<HelloFrame>(&*reply);
        if (!accept) throw ProtocolError("no-hello", "expected HELLO to open the session");
        if (accept->n_dim != n_dim || accept->n_classes != n_classes) {
            throw ProtocolError("dim-mismatch", "peer wants " + std::to_string(accept->n_dim) + "/" +
                                                    std::to_string(accept->n_classes) + ", model is " +
                                                    std::to_string(n_dim) + "/" +
                                                    std::to_string(n_classes));
        }
        if (accept->k == 0 || accept->k > n_dim) {
            throw ProtocolError("dim-mismatch", "peer k " + std::to_string(accept->k) +
                                                    " outside [1, " + std::to_string(n_dim) + "]");
        }
        session.open(*accept);  // session k is the client's k

        for (;;) {
            const auto frame = detail::read_frame(ch, buf);
            if (!frame) break;
            if (std::holds_alternative<ByeFrame>(*frame)) {
                summary.clean_bye = true;
                break;
            }
            if (const auto* q = std::get_if<QueryFrame>(&*frame)) {
                session.accept_query(*q);
                RrfVector x;
                x.dim = n_dim;
                x.k = session.k;
                x.entries = q->x;
                const TeacherAnswer ans = blackbox_answer(model, x, session.k);
                AnswerFrame out;
                out.seq = q->seq;
                out.y = ans.y.class_id;
                if (ans.soft) out.soft = ans.soft->entries;
                ch.send_bytes(encode_frame(out));
                ++summary.queries_answered;
                continue;
            }
            if (const auto* e = std::get_if<ErrorFrame>(&*frame)) {
                summary.error_code = e->code;
                break;
            }
            throw ProtocolError("unexpected-frame", "teacher session accepts QUERY or BYE");
        }
        ch.close();
    } catch (const ProtocolError& e) {
        fail(e, session.last_seq);
    } catch (const IoError&) {
        summary.error_code = "io";
        ch.close();
    }
    return summary;
}

// Client side of one session. Opens by reading the server's HELLO and
// echoing its dimensions back with the requested k; answer() then runs one
// synchronous QUERY/ANSWER exchange per call.
class RemoteTeacher {
public:
    RemoteTeacher(std::shared_ptr<LineChannel> ch, std::uint32_t want_k = default_k)
        : ch_(std::move(ch)) {
        if (!ch_) throw InvalidInput("remote teacher: null channel");
        const auto frame = detail::read_frame(*ch_, buf_);
        if (!frame) throw TransferError("remote teacher: stream closed before HELLO");
        const auto* hello = std::get_if<HelloFrame>(&*frame);
        if (!hello) throw ProtocolError("no-hello", "expected server HELLO");
        HelloFrame accept = *hello;
        accept.k = std::min(want_k == 0 ? default_k : want_k, hello->n_dim);
        session_.role = PeerRole::student;
        session_.open(accept);
        ch_->send_bytes(encode_frame(accept));
    }

    RemoteTeacher(const RemoteTeacher&) = delete;
    RemoteTeacher& operator=(const RemoteTeacher&) = delete;

    ~RemoteTeacher() {
        try {
            close();
        } catch (...) {
        }
    }

    std::uint32_t n_dim() const { return session_.n_dim; }
    std::uint32_t n_classes() const { return session_.n_classes; }
    std::uint32_t k() const { return session_.k; }

    TeacherAnswer answer(const Query& query) {
        std::lock_guard lock(mu_);
        if (closed_) throw TransferError("remote teacher: session closed");
        if (!query.raw.empty()) {
            throw TransferError("remote teacher: dense bypass queries cannot cross the wire");
        }
        if (query.x.dim != session_.n_dim) {
            throw TransferError("remote teacher: query dimension " + std::to_string(query.x.dim) +
                                ", session " + std::to_string(session_.n_dim));
        }
        QueryFrame out;
        out.seq = ++next_seq_;
        out.x = query.x.entries;
        try {
            session_.sent_query(out.seq);
            ch_->send_bytes(encode_frame(out));
            const auto frame = detail::read_frame(*ch_, buf_);
            if (!frame) throw TransferError("remote teacher: stream closed awaiting answer");
            if (const auto* e = std::get_if<ErrorFrame>(&*frame)) {
                closed_ = true;
                throw TransferError("remote teacher error [" + e->code + "]: " + e->msg);
            }
            const auto* ans = std::get_if<AnswerFrame>(&*frame);
            if (!ans) throw ProtocolError("unexpected-frame", "wanted ANSWER");
            session_.accept_answer(*ans);
            TeacherAnswer result;
            result.y = OneHotLabel{ans->y};
            if (ans->soft) {
                for (auto idx : *ans->soft) {
                    if (idx >= session_.n_classes) {
                        throw ProtocolError("bad-answer", "soft index out of range");
                    }
                }
                result.soft = RrfVector{session_.n_classes, session_.k, *ans->soft};
            }
            return result;
        } catch (const ProtocolError& e) {
            closed_ = true;
            ch_->close();
            throw TransferError(std::string("remote teacher protocol failure: ") + e.what());
        } catch (const IoError& e) {
            closed_ = true;
            throw TransferError(std::string("remote teacher stream failure: ") + e.what());
        }
    }

    void close() {
        std::lock_guard lock(mu_);
        if (closed_) return;
        closed_ = true;
        try {
            ch_->send_bytes(encode_frame(ByeFrame{}));
        } catch (const IoError&) {
        }
        ch_->close();
    }

private:
    std::shared_ptr<LineChannel> ch_;
    LineBuffer buf_;
    SessionState session_;
    std::mutex mu_;
    std::uint64_t next_seq_ = 0;
    bool closed_ = false;
};

// A TeacherHandle backed by a live session. Copies of the handle share the
// session; the session closes when the last copy is dropped.
inline TeacherHandle make_remote_teacher(std::shared_ptr<RemoteTeacher> session,
                                         std::string teacher_id) {
    if (!session) throw InvalidInput("make_remote_teacher: null session");
    return TeacherHandle(std::move(teacher_id),
                         [session](const Query& q) { return session->answer(q); });
}

inline TeacherHandle make_remote_teacher(std::shared_ptr<LineChannel> ch, std::string teacher_id,
                                         std::uint32_t want_k = default_k) {
    return make_remote_teacher(std::make_shared<RemoteTeacher>(std::move(ch), want_k),
                               std::move(teacher_id));
}

}  // namespace dfrd
