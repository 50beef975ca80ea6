#include <memory>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "dfrd/kt.hpp"
#include "dfrd/net.hpp"
#include "dfrd/rng.hpp"
#include "dfrd/wire.hpp"

using namespace dfrd;

namespace {

Frame random_frame(Rng& rng) {
    switch (rng.next_below(5)) {
        case 0: {
            HelloFrame h;
            h.n_dim = 1 + static_cast<std::uint32_t>(rng.next_below(1000));
            h.k = 1 + static_cast<std::uint32_t>(rng.next_below(10));
            h.n_classes = 1 + static_cast<std::uint32_t>(rng.next_below(1000));
            return h;
        }
        case 1: {
            QueryFrame q;
            q.seq = rng.next_u64() >> 1;
            const RrfVector v = sample_random_rrf(64, 1 + static_cast<std::uint32_t>(rng.next_below(10)), rng);
            q.x = v.entries;
            return q;
        }
        case 2: {
            AnswerFrame a;
            a.seq = rng.next_u64() >> 1;
            a.y = static_cast<std::uint32_t>(rng.next_below(100));
            if (rng.next_below(2) == 0) {
                const RrfVector v = sample_random_rrf(100, 10, rng);
                a.soft = v.entries;
            }
            return a;
        }
        case 3: {
            ErrorFrame e;
            e.seq = rng.next_below(1000);
            e.code = "code-" + std::to_string(rng.next_below(10));
            e.msg = "line with \"quotes\" and\nnewline " + std::to_string(rng.next_u64());
            return e;
        }
        default:
            return ByeFrame{};
    }
}

// Collect each newline-terminated line of a raw byte capture.
std::vector<std::string> capture_lines(const std::string& bytes) {
    std::vector<std::string> lines;
    LineBuffer buf;
    buf.feed(bytes);
    while (auto line = buf.next_line()) lines.push_back(*line);
    REQUIRE_FALSE(buf.has_partial());
    return lines;
}

}  // namespace

TEST_CASE("encode_frame emits fixed field orders, one line per frame") {
    HelloFrame hello;
    hello.n_dim = 100;
    hello.k = 10;
    hello.n_classes = 100;
    CHECK(encode_frame(hello) ==
          "{\"t\":\"hello\",\"proto\":\"dfrd/1\",\"n_dim\":100,\"k\":10,\"n_classes\":100}\n");

    CHECK(encode_frame(QueryFrame{1, {4, 2, 9}}) == "{\"t\":\"query\",\"seq\":1,\"x\":[4,2,9]}\n");
    CHECK(encode_frame(AnswerFrame{1, 7, std::nullopt}) == "{\"t\":\"answer\",\"seq\":1,\"y\":7}\n");
    CHECK(encode_frame(AnswerFrame{2, 7, std::vector<std::uint32_t>{7, 3, 0}}) ==
          "{\"t\":\"answer\",\"seq\":2,\"y\":7,\"soft\":[7,3,0]}\n");
    CHECK(encode_frame(ErrorFrame{3, "dim-mismatch", "nope"}) ==
          "{\"t\":\"error\",\"seq\":3,\"code\":\"dim-mismatch\",\"msg\":\"nope\"}\n");
    CHECK(encode_frame(ByeFrame{}) == "{\"t\":\"bye\"}\n");
}

TEST_CASE("encode_frame escapes control characters in messages") {
    const std::string bytes = encode_frame(ErrorFrame{0, "c", "a\"b\nc"});
    CHECK(bytes == "{\"t\":\"error\",\"seq\":0,\"code\":\"c\",\"msg\":\"a\\\"b\\nc\"}\n");
    CHECK(std::get<ErrorFrame>(decode_frame(bytes)).msg == "a\"b\nc");
}

TEST_CASE("decode inverts encode on fuzzed frames") {
    Rng rng(4242);
    for (int i = 0; i < 1000; ++i) {
        const Frame f = random_frame(rng);
        const std::string bytes = encode_frame(f);
        CHECK(bytes.back() == '\n');
        CHECK(bytes.find('\n') == bytes.size() - 1);
        const Frame back = decode_frame(bytes);
        REQUIRE(back.index() == f.index());
        CHECK(back == f);
        // Byte-stable: re-encoding reproduces the same line.
        CHECK(encode_frame(back) == bytes);
    }
}

TEST_CASE("decode_frame rejects malformed input with typed codes") {
    auto code_of = [](const std::string& line) {
        try {
            decode_frame(line);
        } catch (const ProtocolError& e) {
            return std::string(e.code());
        }
        return std::string("no-error");
    };
    CHECK(code_of("{nope") == "bad-json");
    CHECK(code_of("{\"t\":\"query\",\"seq\":0}\n") == "missing-field");
    CHECK(code_of("{\"t\":\"query\",\"seq\":\"zero\",\"x\":[1]}\n") == "bad-field");
    CHECK(code_of("{\"t\":\"query\",\"seq\":0,\"x\":[0,0]}\n") == "duplicate-index");
    CHECK(code_of("{\"t\":\"warp\"}\n") == "unknown-type");
    CHECK(code_of("{\"t\":\"hello\",\"proto\":\"dfrd/1\",\"n_dim\":0,\"k\":1,\"n_classes\":3}\n") ==
          "bad-field");
}

TEST_CASE("line buffer reassembles frames from arbitrary chunking") {
    const std::string stream = encode_frame(QueryFrame{1, {5, 3}}) +
                               encode_frame(AnswerFrame{1, 5, std::nullopt}) +
                               encode_frame(ByeFrame{});
    for (std::size_t chunk = 1; chunk <= 7; ++chunk) {
        LineBuffer buf;
        std::vector<std::string> lines;
        for (std::size_t pos = 0; pos < stream.size(); pos += chunk) {
            buf.feed(stream.substr(pos, chunk));
            while (auto line = buf.next_line()) lines.push_back(*line);
        }
        REQUIRE(lines.size() == 3);
        CHECK(std::holds_alternative<QueryFrame>(decode_frame(lines[0])));
        CHECK(std::holds_alternative<AnswerFrame>(decode_frame(lines[1])));
        CHECK(std::holds_alternative<ByeFrame>(decode_frame(lines[2])));
        CHECK_FALSE(buf.has_partial());
    }
    LineBuffer buf;
    buf.feed("{\"t\":\"bye\"");
    CHECK_FALSE(buf.next_line().has_value());
    CHECK(buf.has_partial());
}

TEST_CASE("session state enforces the handshake and ordering rules") {
    HelloFrame hello;
    hello.n_dim = 20;
    hello.k = 10;
    hello.n_classes = 8;

    SessionState teacher;
    teacher.role = PeerRole::teacher;
    CHECK_THROWS_AS(teacher.accept_query(QueryFrame{1, {0}}), ProtocolError);

    HelloFrame bad_proto = hello;
    bad_proto.proto = "dfrd/2";
    CHECK_THROWS_AS(teacher.open(bad_proto), ProtocolError);

    teacher.open(hello);
    QueryFrame q;
    q.seq = 5;
    q.x = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    CHECK_NOTHROW(teacher.accept_query(q));
    CHECK_THROWS_AS(teacher.accept_query(q), ProtocolError);  // seq must increase
    q.seq = 6;
    q.x = {0, 1, 2};
    CHECK_THROWS_AS(teacher.accept_query(q), ProtocolError);  // wrong index count
    q.x = {0, 1, 2, 3, 4, 5, 6, 7, 8, 25};
    CHECK_THROWS_AS(teacher.accept_query(q), ProtocolError);  // index out of range

    SessionState student;
    student.role = PeerRole::student;
    student.open(hello);
    student.sent_query(1);
    CHECK_THROWS_AS(student.accept_answer(AnswerFrame{2, 3, std::nullopt}), ProtocolError);
    CHECK_THROWS_AS(student.accept_answer(AnswerFrame{1, 8, std::nullopt}), ProtocolError);
    CHECK_NOTHROW(student.accept_answer(AnswerFrame{1, 7, std::nullopt}));
    CHECK_THROWS_AS(student.accept_answer(AnswerFrame{1, 7, std::nullopt}), ProtocolError);

    student.close();
    CHECK_THROWS_AS(student.sent_query(2), ProtocolError);
}

TEST_CASE("served answers equal local blackbox answers bit for bit") {
    const MlpModel model = init_mlp(MlpConfig{30, {24}, 12, 71});
    auto [server_ch, client_ch] = make_local_pair();

    ServeSummary summary;
    std::thread server([&, ch = std::move(server_ch)]() mutable { summary = serve_teacher(model, *ch); });

    {
        auto session = std::make_shared<RemoteTeacher>(
            std::shared_ptr<LineChannel>(std::move(client_ch)));
        CHECK(session->n_dim() == 30);
        CHECK(session->n_classes() == 12);
        Rng rng(1001);
        for (int i = 0; i < 100; ++i) {
            const Query q{sample_random_rrf(30, 10, rng), {}, QueryTag::random};
            const TeacherAnswer remote = session->answer(q);
            const TeacherAnswer local = blackbox_answer(model, q, 10);
            CHECK(remote.y == local.y);
            REQUIRE(remote.soft.has_value());
            REQUIRE(local.soft.has_value());
            CHECK(remote.soft->entries == local.soft->entries);
        }
        session->close();
    }
    server.join();
    CHECK(summary.queries_answered == 100);
    CHECK(summary.clean_bye);
    CHECK(summary.error_code.empty());
}

TEST_CASE("immediate BYE yields an empty clean summary") {
    const MlpModel model = init_mlp(MlpConfig{10, {}, 4, 3});
    auto [server_ch, client_ch] = make_local_pair();
    ServeSummary summary;
    std::thread server([&, ch = std::move(server_ch)]() mutable { summary = serve_teacher(model, *ch); });
    {
        RemoteTeacher session(std::shared_ptr<LineChannel>(std::move(client_ch)));
        session.close();
    }
    server.join();
    CHECK(summary.queries_answered == 0);
    CHECK(summary.clean_bye);
}

TEST_CASE("dimension disagreement at HELLO produces a typed error") {
    const MlpModel model = init_mlp(MlpConfig{10, {}, 4, 3});
    auto [server_ch, client_ch] = make_local_pair();
    ServeSummary summary;
    std::thread server([&, ch = std::move(server_ch)]() mutable { summary = serve_teacher(model, *ch); });

    // Handcrafted client that echoes HELLO with the wrong dimension.
    LineBuffer buf;
    std::string pending;
    while (true) {
        const std::string chunk = client_ch->recv_some();
        REQUIRE_FALSE(chunk.empty());
        buf.feed(chunk);
        if (auto line = buf.next_line()) {
            pending = *line;
            break;
        }
    }
    HelloFrame echo = std::get<HelloFrame>(decode_frame(pending));
    echo.n_dim = 99;
    client_ch->send_bytes(encode_frame(echo));
    const std::string reply = client_ch->recv_some();
    server.join();
    CHECK(summary.error_code == "dim-mismatch");
    const Frame f = decode_frame(capture_lines(reply)[0]);
    CHECK(std::get<ErrorFrame>(f).code == "dim-mismatch");
}

TEST_CASE("mid-frame stream loss is reported, not crashed") {
    const MlpModel model = init_mlp(MlpConfig{10, {}, 4, 3});
    auto [server_ch, client_ch] = make_local_pair();
    ServeSummary summary;
    std::thread server([&, ch = std::move(server_ch)]() mutable { summary = serve_teacher(model, *ch); });

    LineBuffer buf;
    while (true) {
        const std::string chunk = client_ch->recv_some();
        REQUIRE_FALSE(chunk.empty());
        buf.feed(chunk);
        if (buf.next_line()) break;
    }
    HelloFrame echo;
    echo.n_dim = 10;
    echo.k = 10;
    echo.n_classes = 4;
    client_ch->send_bytes(encode_frame(echo));
    client_ch->send_bytes("{\"t\":\"query\",\"seq\":1,");  // cut mid-frame
    client_ch->close();
    server.join();
    CHECK(summary.error_code == "incomplete-frame");
}

TEST_CASE("the wire carries only protocol frames, never model internals") {
    const MlpModel model = init_mlp(MlpConfig{25, {16}, 9, 55});
    auto [server_raw, client_ch] = make_local_pair();
    auto capture = std::make_shared<CaptureChannel>(
        std::shared_ptr<LineChannel>(std::move(server_raw)));

    ServeSummary summary;
    std::thread server([&] { summary = serve_teacher(model, *capture); });
    {
        RemoteTeacher session(std::shared_ptr<LineChannel>(std::move(client_ch)));
        Rng rng(8);
        for (int i = 0; i < 25; ++i) {
            session.answer(Query{sample_random_rrf(25, 10, rng), {}, QueryTag::random});
        }
        session.close();
    }
    server.join();
    REQUIRE(summary.clean_bye);

    // Teacher-originated bytes: HELLO then ANSWERs only.
    const std::vector<std::string> sent = capture_lines(capture->sent());
    REQUIRE(sent.size() == 26);
    CHECK(std::holds_alternative<HelloFrame>(decode_frame(sent[0])));
    for (std::size_t i = 1; i < sent.size(); ++i) {
        CHECK(std::holds_alternative<AnswerFrame>(decode_frame(sent[i])));
    }
    // Student-originated bytes: HELLO echo, QUERYs, BYE.
    const std::vector<std::string> received = capture_lines(capture->received());
    REQUIRE(received.size() == 27);
    CHECK(std::holds_alternative<HelloFrame>(decode_frame(received[0])));
    for (std::size_t i = 1; i + 1 < received.size(); ++i) {
        CHECK(std::holds_alternative<QueryFrame>(decode_frame(received[i])));
    }
    CHECK(std::holds_alternative<ByeFrame>(decode_frame(received.back())));
}

TEST_CASE("remote teachers reject dense bypass queries") {
    const MlpModel model = init_mlp(MlpConfig{10, {}, 4, 5});
    auto [server_ch, client_ch] = make_local_pair();
    std::thread server([&, ch = std::move(server_ch)]() mutable { serve_teacher(model, *ch); });
    {
        RemoteTeacher session(std::shared_ptr<LineChannel>(std::move(client_ch)));
        Query bypass;
        bypass.x = RrfVector{10, 10, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
        bypass.raw = ScoreVector(10, 0.5);
        CHECK_THROWS_AS(session.answer(bypass), TransferError);
        session.close();
    }
    server.join();
}

TEST_CASE("a protocol violation surfaces as a transfer error on the student") {
    // Fake teacher answers with a mismatched seq.
    auto [server_ch, client_ch] = make_local_pair();
    std::thread fake([ch = std::move(server_ch)]() mutable {
        HelloFrame offer;
        offer.n_dim = 10;
        offer.k = 10;
        offer.n_classes = 4;
        ch->send_bytes(encode_frame(offer));
        LineBuffer buf;
        int lines = 0;
        while (lines < 2) {
            const std::string chunk = ch->recv_some();
            if (chunk.empty()) break;
            buf.feed(chunk);
            while (buf.next_line()) ++lines;
        }
        ch->send_bytes(encode_frame(AnswerFrame{999, 1, std::nullopt}));
        ch->close();
    });
    {
        RemoteTeacher session(std::shared_ptr<LineChannel>(std::move(client_ch)));
        CHECK_THROWS_AS(
            session.answer(Query{RrfVector{10, 10, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}}, {}, QueryTag::random}),
            TransferError);
    }
    fake.join();
}

TEST_CASE("kt_session through a remote teacher equals the local session") {
    const MlpModel teacher_model = init_mlp(MlpConfig{20, {16}, 8, 81});
    const MlpModel student0 = init_mlp(MlpConfig{20, {16}, 8, 82});
    std::vector<RrfVector> pool;
    Rng rng(61);
    for (int i = 0; i < 40; ++i) pool.push_back(sample_random_rrf(20, 10, rng));

    SamplerSpec spec;
    spec.kind = SamplerKind::mixed;
    spec.r = 20;
    spec.random_kind = RandomKind::regularized;
    spec.seed = 5;
    KtOptions options;
    options.base_count = 200;
    const TrainConfig tc{8, 16, 0.2, 7};

    const TeacherHandle local = make_local_teacher(teacher_model, "t:wire");
    const std::vector<RrfVector> pools[] = {pool};
    const KtResult local_result =
        kt_session(student0, std::span<const TeacherHandle>(&local, 1), pools, spec, tc, options);

    auto [server_ch, client_ch] = make_local_pair();
    std::thread server(
        [&, ch = std::move(server_ch)]() mutable { serve_teacher(teacher_model, *ch); });
    KtResult remote_result;
    {
        auto session = std::make_shared<RemoteTeacher>(
            std::shared_ptr<LineChannel>(std::move(client_ch)));
        const TeacherHandle remote = make_remote_teacher(session, "t:wire");
        remote_result = kt_session(student0, std::span<const TeacherHandle>(&remote, 1), pools,
                                   spec, tc, options);
        session->close();
    }
    server.join();

    CHECK(remote_result.teacher_queries == local_result.teacher_queries);
    CHECK(checksum_mlp(remote_result.model) == checksum_mlp(local_result.model));
}
