#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dfrd/error.hpp"

// Wire protocol: newline-delimited UTF-8 JSON, one frame per line.
//
//   hello:  {"t":"hello","proto":"dfrd/1","n_dim":N,"k":K,"n_classes":C}
//   query:  {"t":"query","seq":S,"x":[indices best-rank-first]}
//   answer: {"t":"answer","seq":S,"y":CLASS[,"soft":[indices]]}
//   error:  {"t":"error","seq":S,"code":CODE,"msg":MSG}
//   bye:    {"t":"bye"}
//
// Field order is fixed, there is no extra whitespace, and every frame ends
// with a single 0x0A byte, so encoding is byte-stable. Decoding accepts any
// JSON spelling of a valid frame.

namespace dfrd {

inline constexpr std::string_view wire_proto = "dfrd/1";

struct HelloFrame {
    std::string proto = std::string(wire_proto);
    std::uint32_t n_dim = 0;
    std::uint32_t k = 0;
    std::uint32_t n_classes = 0;
    bool operator==(const HelloFrame&) const = default;
};

struct QueryFrame {
    std::uint64_t seq = 0;
    std::vector<std::uint32_t> x;  // distinct indices, best rank first
    bool operator==(const QueryFrame&) const = default;
};

struct AnswerFrame {
    std::uint64_t seq = 0;
    std::uint32_t y = 0;
    std::optional<std::vector<std::uint32_t>> soft;
    bool operator==(const AnswerFrame&) const = default;
};

struct ErrorFrame {
    std::uint64_t seq = 0;
    std::string code;
    std::string msg;
    bool operator==(const ErrorFrame&) const = default;
};

struct ByeFrame {
    bool operator==(const ByeFrame&) const = default;
};

using Frame = std::variant<HelloFrame, QueryFrame, AnswerFrame, ErrorFrame, ByeFrame>;

namespace detail {

inline void json_escape_into(std::string& out, std::string_view s) {
    static constexpr char hex[] = "0123456789abcdef";
    for (unsigned char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (c < 0x20) {
                    out += "\\u00";
                    out += hex[(c >> 4) & 0xf];
                    out += hex[c & 0xf];
                } else {
                    out += static_cast<char>(c);
                }
        }
    }
}

inline void append_index_array(std::string& out, const std::vector<std::uint32_t>& xs) {
    out += '[';
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    out += ']';
}

}  // namespace detail

inline std::string encode_frame(const Frame& frame) {
    std::string out;
    if (const auto* h = std::get_if<HelloFrame>(&frame)) {
        out += "{\"t\":\"hello\",\"proto\":\"";
        detail::json_escape_into(out, h->proto);
        out += "\",\"n_dim\":" + std::to_string(h->n_dim);
        out += ",\"k\":" + std::to_string(h->k);
        out += ",\"n_classes\":" + std::to_string(h->n_classes);
        out += '}';
    } else if (const auto* q = std::get_if<QueryFrame>(&frame)) {
        out += "{\"t\":\"query\",\"seq\":" + std::to_string(q->seq) + ",\"x\":";
        detail::append_index_array(out, q->x);
        out += '}';
    } else if (const auto* a = std::get_if<AnswerFrame>(&frame)) {
        out += "{\"t\":\"answer\",\"seq\":" + std::to_string(a->seq) +
               ",\"y\":" + std::to_string(a->y);
        if (a->soft) {
            out += ",\"soft\":";
            detail::append_index_array(out, *a->soft);
        }
        out += '}';
    } else if (const auto* e = std::get_if<ErrorFrame>(&frame)) {
        out += "{\"t\":\"error\",\"seq\":" + std::to_string(e->seq) + ",\"code\":\"";
        detail::json_escape_into(out, e->code);
        out += "\",\"msg\":\"";
        detail::json_escape_into(out, e->msg);
        out += "\"}";
    } else {
        out += "{\"t\":\"bye\"}";
    }
    out += '\n';
    return out;
}

namespace detail {

inline std::uint64_t get_u64(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw ProtocolError("missing-field", std::string("no '") + key + "'");
    if (!it->is_number_unsigned()) {
        throw ProtocolError("bad-field", std::string("'") + key + "' must be a nonnegative integer");
    }
    return it->get<std::uint64_t>();
}

inline std::uint32_t get_u32(const nlohmann::json& j, const char* key) {
    const std::uint64_t v = get_u64(j, key);
    if (v > UINT32_MAX) throw ProtocolError("bad-field", std::string("'") + key + "' out of range");
    return static_cast<std::uint32_t>(v);
}

inline std::string get_str(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw ProtocolError("missing-field", std::string("no '") + key + "'");
    if (!it->is_string()) throw ProtocolError("bad-field", std::string("'") + key + "' must be a string");
    return it->get<std::string>();
}

inline std::vector<std::uint32_t> get_index_array(const nlohmann::json& j, const char* key,
                                                  bool required) {
    auto it = j.find(key);
    if (it == j.end()) {
        if (required) throw ProtocolError("missing-field", std::string("no '") + key + "'");
        return {};
    }
    if (!it->is_array()) throw ProtocolError("bad-field", std::string("'") + key + "' must be an array");
    std::vector<std::uint32_t> out;
    out.reserve(it->size());
    std::unordered_set<std::uint32_t> seen;
    for (const auto& v : *it) {
        if (!v.is_number_unsigned() || v.get<std::uint64_t>() > UINT32_MAX) {
            throw ProtocolError("bad-field", std::string("'") + key + "' holds a bad index");
        }
        const auto idx = v.get<std::uint32_t>();
        if (!seen.insert(idx).second) {
            throw ProtocolError("duplicate-index", std::string("'") + key + "' repeats index " +
                                                       std::to_string(idx));
        }
        out.push_back(idx);
    }
    return out;
}

}  // namespace detail

// Decode one complete line (the trailing newline may be present or already
// stripped). Malformed JSON, unknown frame types, missing fields and
// invariant violations all raise ProtocolError with a code.
inline Frame decode_frame(std::string_view line) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ProtocolError("bad-json", "unparseable frame");
    const std::string t = detail::get_str(j, "t");
    if (t == "hello") {
        HelloFrame f;
        f.proto = detail::get_str(j, "proto");
        f.n_dim = detail::get_u32(j, "n_dim");
        f.k = detail::get_u32(j, "k");
        f.n_classes = detail::get_u32(j, "n_classes");
        if (f.n_dim == 0 || f.k == 0 || f.n_classes == 0) {
            throw ProtocolError("bad-field", "hello dimensions must be positive");
        }
        return f;
    }
    if (t == "query") {
        QueryFrame f;
        f.seq = detail::get_u64(j, "seq");
        f.x = detail::get_index_array(j, "x", true);
        if (f.x.empty()) throw ProtocolError("bad-field", "query 'x' must be nonempty");
        return f;
    }
    if (t == "answer") {
        AnswerFrame f;
        f.seq = detail::get_u64(j, "seq");
        f.y = detail::get_u32(j, "y");
        if (j.contains("soft")) f.soft = detail::get_index_array(j, "soft", true);
        return f;
    }
    if (t == "error") {
        ErrorFrame f;
        f.seq = detail::get_u64(j, "seq");
        f.code = detail::get_str(j, "code");
        f.msg = detail::get_str(j, "msg");
        return f;
    }
    if (t == "bye") return ByeFrame{};
    throw ProtocolError("unknown-type", "frame type '" + t + "'");
}

// Splits a byte stream into frames. feed() buffers bytes; next_line() hands
// back one complete line at a time and leaves partial tails buffered until
// more bytes arrive.
class LineBuffer {
public:
    void feed(std::string_view bytes) { buf_.append(bytes); }

    std::optional<std::string> next_line() {
        const auto pos = buf_.find('\n');
        if (pos == std::string::npos) return std::nullopt;
        std::string line = buf_.substr(0, pos + 1);
        buf_.erase(0, pos + 1);
        return line;
    }

    bool has_partial() const { return !buf_.empty(); }

private:
    std::string buf_;
};

enum class PeerRole { teacher, student };

// Per-connection protocol state. Frames are rejected until the HELLO
// exchange completes; QUERY seq numbers must be strictly increasing and
// ANSWER frames must echo them; nothing is valid after BYE.
struct SessionState {
    PeerRole role = PeerRole::teacher;
    std::uint32_t n_dim = 0;
    std::uint32_t k = 0;
    std::uint32_t n_classes = 0;
    bool hello_done = false;
    bool closed = false;
    std::uint64_t last_seq = 0;
    std::uint64_t pending_seq = 0;
    bool awaiting_answer = false;

    void open(const HelloFrame& hello) {
        if (hello.proto != wire_proto) throw ProtocolError("proto", "unsupported protocol " + hello.proto);
        n_dim = hello.n_dim;
        k = hello.k;
        n_classes = hello.n_classes;
        hello_done = true;
    }

    void require_open() const {
        if (!hello_done) throw ProtocolError("no-hello", "frame before HELLO exchange");
        if (closed) throw ProtocolError("closed", "frame after BYE");
    }

    // Teacher side: validate an incoming QUERY against the negotiated shape.
    void accept_query(const QueryFrame& q) {
        require_open();
        if (!first_ && q.seq <= last_seq) {
            throw ProtocolError("bad-seq", "query seq must be strictly increasing");
        }
        const std::uint32_t expect = std::min(k, n_dim);
        if (q.x.size() != expect) {
            throw ProtocolError("bad-query", "query must carry exactly min(k, n_dim) indices");
        }
        for (auto idx : q.x) {
            if (idx >= n_dim) throw ProtocolError("bad-query", "query index out of range");
        }
        last_seq = q.seq;
        first_ = false;
    }

    // Student side: register an outgoing QUERY.
    void sent_query(std::uint64_t seq) {
        require_open();
        pending_seq = seq;
        awaiting_answer = true;
    }

    // Student side: validate an incoming ANSWER.
    void accept_answer(const AnswerFrame& a) {
        require_open();
        if (!awaiting_answer) throw ProtocolError("unexpected-answer", "answer with no query in flight");
        if (a.seq != pending_seq) {
            throw ProtocolError("bad-seq", "answer seq " + std::to_string(a.seq) +
                                               " does not match query seq " + std::to_string(pending_seq));
        }
        if (a.y >= n_classes) throw ProtocolError("bad-answer", "class id out of range");
        awaiting_answer = false;
    }

    void close() { closed = true; }

private:
    bool first_ = true;
};

}  // namespace dfrd
