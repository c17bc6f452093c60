#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include <boost/asio/connect.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "../support/fd.hpp"
#include "cvxrom/bench.hpp"
#include "cvxrom/errors.hpp"
#include "cvxrom/simserver.hpp"

using namespace cvxrom;
using namespace cvxrom::testing;
using nlohmann::json;

namespace {

struct Column {
    BenchFixture fixture;
    std::shared_ptr<const TetMesh> mesh;
    LumpedMass mass;
    PcaBasis basis;
    std::shared_ptr<const ReducedModel> linear;
    std::shared_ptr<const ReducedModel> convex;
    int top = 0;

    Column() {
        fixture.nx = 1;
        fixture.ny = 3;
        fixture.nz = 1;
        fixture.dims = Vec3(0.25, 0.75, 0.25);
        mesh = std::make_shared<const TetMesh>(fixture.mesh());
        mass = lump_mass(*mesh);
        const ForceScenario sc = fixture.scenario(Vec3(2.0, -20.0, 0.0));
        const SnapshotSet snaps = generate_snapshots(*mesh, fixture.material(), sc, sc.boundary(*mesh), 0.01, 20, 2);
        basis = compute_pca(snaps, mass, 6);
        linear = std::make_shared<const LinearModel>(basis.truncated(4), mass);
        ModelSpec s;
        s.k = 3;
        s.r = 6;
        s.hidden = {8, 8};
        s.encoder_hidden = 8;
        s.seed = 2;
        convex = std::shared_ptr<const ReducedModel>(make_model(s, mesh->dofs(), &basis, mass));
        for (int v = 0; v < mesh->num_vertices(); ++v)
            if (mesh->rest_vertex(v).y() > mesh->rest_vertex(top).y()) top = v;
    }
};

const Column& column() {
    static const Column c;
    return c;
}

SimSession session(const std::shared_ptr<const ReducedModel>& model, SessionConfig cfg = {}) {
    return SimSession(column().mesh, column().fixture.material(), model, cfg);
}

json drag_start(int vertex, const Vec3& pos, const std::string& pointer = "0") {
    return {{"type", "drag_start"}, {"pointer", pointer}, {"vertex", vertex}, {"pos", {pos.x(), pos.y(), pos.z()}}};
}

std::string pulled(int vertex, const Vec3& offset, const std::string& pointer = "0") {
    return drag_start(vertex, column().mesh->rest_vertex(vertex) + offset, pointer).dump();
}

json only_reply(const std::vector<Outgoing>& out) {
    EXPECT_EQ(out.size(), 1u);
    return out.empty() ? json() : json::parse(out[0].data);
}

double mass_norm(const Vec& u) { return std::sqrt(u.dot(column().mass.diag.asDiagonal() * u)); }

} // namespace

TEST(SimSession, HelloRepliesWithMesh) {
    SimSession s = session(column().linear);
    const json m = only_reply(s.handle(R"({"type":"hello"})"));
    EXPECT_EQ(m["type"], "mesh");
    EXPECT_EQ(m["vertex_count"], column().mesh->num_vertices());
    EXPECT_EQ(m["positions"].size(), static_cast<std::size_t>(column().mesh->dofs()));
    EXPECT_EQ(m["faces"].size(), 3 * boundary_faces(*column().mesh).size());
    EXPECT_FALSE(s.closed());
}

TEST(SimSession, HelloWithWrongDofsCloses) {
    SimSession s = session(column().linear);
    const json e = only_reply(s.handle(json{{"type", "hello"}, {"dofs", column().mesh->dofs() + 3}}.dump()));
    EXPECT_EQ(e["type"], "error");
    EXPECT_TRUE(s.closed());
}

TEST(SimSession, CheckpointMismatchIsRefused) {
    const TetMesh other = make_bar_mesh(1, 1, 1, Vec3(1, 1, 1));
    EXPECT_THROW(SimSession(std::make_shared<const TetMesh>(other), column().fixture.material(), column().linear), DimensionError);
    auto tagged = std::make_shared<LinearModel>(column().basis, column().mass);
    tagged->metadata["mesh_hash"] = column().mesh->hash() + 1;
    EXPECT_THROW(session(tagged), InvalidArgument);
    tagged->metadata["mesh_hash"] = column().mesh->hash();
    EXPECT_NO_THROW(session(tagged));
}

TEST(SimSession, FrameFields) {
    SimSession s = session(column().convex);
    const Outgoing out = s.step();
    ASSERT_FALSE(out.binary);
    const json f = json::parse(out.data);
    EXPECT_EQ(f["type"], "frame");
    EXPECT_EQ(f["seq"], 1);
    EXPECT_NEAR(f["t"].get<double>(), 1.0 / 60.0, 1e-15);
    EXPECT_EQ(f["q"].size(), 3u);
    EXPECT_TRUE(f["sim_ms"].is_number());
    const auto pos = f["positions"].get<std::vector<double>>();
    const Vec& x0 = column().mesh->rest_positions();
    ASSERT_EQ(pos.size(), static_cast<std::size_t>(x0.size()));
    for (Index i = 0; i < x0.size(); ++i) EXPECT_NEAR(pos[static_cast<std::size_t>(i)], x0[i], 1e-12);
}

TEST(SimSession, InvalidVertexLeavesStateUnchanged) {
    SimSession s = session(column().linear);
    s.handle(pulled(column().top, Vec3(0.05, 0, 0)));
    for (int i = 0; i < 3; ++i) s.step();
    const Vec q = s.state().q;
    const auto drags = s.drags().size();
    for (const int v : {-1, column().mesh->num_vertices(), 1 << 30}) {
        const json e = only_reply(s.handle(drag_start(v, Vec3::Zero(), "7").dump()));
        EXPECT_EQ(e["type"], "error");
    }
    EXPECT_EQ(s.drags().size(), drags);
    EXPECT_EQ(s.state().q, q);
}

TEST(SimSession, MalformedMessagesGetErrorFrames) {
    SimSession s = session(column().linear);
    for (const char* bad : {"", "{", "[]", "42", R"({"type":3})", R"({"type":"warp"})", R"({"type":"hello","binary":1})",
                            R"({"type":"drag_start","vertex":0,"pos":[0,0]})", R"({"type":"drag_start","vertex":0.5})",
                            R"({"type":"drag_start","vertex":0,"pos":[0,"a",0]})", R"({"type":"drag_move","pos":null})",
                            R"({"type":"drag_end","pointer":{}})"}) {
        const json e = only_reply(s.handle(bad));
        EXPECT_EQ(e["type"], "error") << bad;
        EXPECT_FALSE(e["msg"].get<std::string>().empty());
    }
    EXPECT_FALSE(s.closed());
    SessionConfig cfg;
    cfg.max_message_bytes = 16;
    SimSession small = session(column().linear, cfg);
    EXPECT_EQ(only_reply(small.handle(std::string(17, ' ')))["type"], "error");
}

TEST(SimSession, UnknownPointerIsAWarning) {
    SimSession s = session(column().linear);
    EXPECT_TRUE(s.handle(R"({"type":"drag_move","pointer":"ghost","pos":[0,0,0]})").empty());
    EXPECT_TRUE(s.handle(R"({"type":"drag_end","pointer":"ghost"})").empty());
    EXPECT_EQ(s.warnings(), 2);
    EXPECT_TRUE(s.drags().empty());
}

TEST(SimSession, DragDeformsAndReleaseReturnsToRest) {
    for (const auto& model : {column().linear, column().convex}) {
        SessionConfig cfg;
        cfg.drag_stiffness = 2e3;
        SimSession s = session(model, cfg);
        s.handle(pulled(column().top, Vec3(0.1, 0, 0)));
        for (int i = 0; i < 30; ++i) s.step();
        const double held = mass_norm(s.displacement());
        EXPECT_GT(held, 1e-3);
        EXPECT_GT(s.displacement()[3 * column().top], 0.0);
        s.handle(R"({"type":"drag_end","pointer":"0"})");
        EXPECT_TRUE(s.drags().empty());
        std::vector<double> norms;
        for (int i = 0; i < 240; ++i) {
            s.step();
            norms.push_back(mass_norm(s.displacement()));
        }
        // Envelope decays: each later window peaks below the previous one.
        double previous = held * 1.5;
        for (std::size_t w = 0; w + 40 <= norms.size(); w += 40) {
            const double peak = *std::max_element(norms.begin() + static_cast<long>(w), norms.begin() + static_cast<long>(w + 40));
            EXPECT_LE(peak, previous);
            previous = peak;
        }
        EXPECT_LT(norms.back(), 0.1 * held);
    }
}

TEST(SimSession, NoDragsStaysAtRest) {
    SimSession s = session(column().convex);
    for (int i = 0; i < 10; ++i) s.step();
    EXPECT_LT(s.state().q.norm(), 1e-12);
    EXPECT_EQ(s.sequence(), 10u);
}

TEST(SimSession, ZeroStiffnessDragHasNoEffect) {
    SessionConfig cfg;
    cfg.drag_stiffness = 0.0;
    SimSession s = session(column().linear, cfg);
    s.handle(pulled(column().top, Vec3(0.3, 0.1, 0)));
    EXPECT_EQ(s.drags().size(), 1u);
    for (int i = 0; i < 10; ++i) s.step();
    EXPECT_LT(s.displacement().norm(), 1e-12);
}

TEST(SimSession, SimultaneousDragsSuperpose) {
    const int a = column().top;
    const int b = column().top == 0 ? 1 : column().top - 1;
    SimSession s = session(column().convex);
    s.handle(pulled(a, Vec3(0.05, 0, 0), "a"));
    s.handle(pulled(b, Vec3(0, -0.02, 0.03), "b"));
    ASSERT_EQ(s.drags().size(), 2u);
    const ReducedModel& model = *column().convex;
    ReducedObjective obj(*column().mesh, column().fixture.material(), model);
    Rng rng(5);
    const Vec q = random_vec(model.latent_dim(), rng, 0.05);
    auto grad_with = [&](const std::vector<std::string>& ids) {
        std::vector<DragSpring> springs;
        for (const auto& id : ids) {
            const Drag& d = s.drags().at(id);
            springs.push_back({d.vertex, d.target, d.stiffness});
        }
        obj.set_springs(springs);
        Vec g;
        obj.evaluate(q, &g);
        return g;
    };
    const Vec g0 = grad_with({}), ga = grad_with({"a"}), gb = grad_with({"b"}), gab = grad_with({"a", "b"});
    EXPECT_GT((ga - g0).norm(), 1e-3);
    EXPECT_GT((gb - g0).norm(), 1e-3);
    EXPECT_LT(((gab - g0) - (ga - g0) - (gb - g0)).norm(), 1e-10 * (gab - g0).norm());

    // Pulling both ways moves the tip further than either pull alone.
    auto tip_after = [&](bool use_a, bool use_b) {
        SimSession t = session(column().linear);
        if (use_a) t.handle(pulled(a, Vec3(0.05, 0, 0), "a"));
        if (use_b) t.handle(pulled(b, Vec3(0.05, 0, 0), "b"));
        for (int i = 0; i < 20; ++i) t.step();
        return t.displacement()[3 * a];
    };
    EXPECT_GT(tip_after(true, true), tip_after(true, false));
}

TEST(SimSession, ResetClearsStateAndDrags) {
    SimSession s = session(column().linear);
    s.handle(pulled(column().top, Vec3(0.05, 0, 0)));
    for (int i = 0; i < 5; ++i) s.step();
    EXPECT_TRUE(s.handle(R"({"type":"reset"})").empty());
    EXPECT_TRUE(s.drags().empty());
    EXPECT_EQ(s.state().q.norm(), 0.0);
    const auto seq = s.sequence();
    s.step();
    EXPECT_GT(s.sequence(), seq);
}

TEST(SimSession, BinaryFrameLayout) {
    SimSession s = session(column().linear);
    s.handle(R"({"type":"hello","binary":true})");
    s.handle(pulled(column().top, Vec3(0.05, 0, 0)));
    s.step();
    const Outgoing out = s.step();
    ASSERT_TRUE(out.binary);
    const int nv = column().mesh->num_vertices();
    ASSERT_EQ(out.data.size(), 8u + 12u * static_cast<std::size_t>(nv));
    auto u32 = [&](std::size_t at) {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(out.data[at + b])) << (8 * b);
        return v;
    };
    EXPECT_EQ(u32(0), 2u);
    EXPECT_EQ(u32(4), static_cast<std::uint32_t>(nv));
    const Vec x = column().mesh->rest_positions() + s.displacement();
    for (Index i = 0; i < x.size(); ++i) {
        const std::uint32_t bits = u32(8 + 4 * static_cast<std::size_t>(i));
        float f;
        std::memcpy(&f, &bits, 4);
        EXPECT_EQ(f, static_cast<float>(x[i]));
    }
}

TEST(Replay, ScriptIsDeterministic) {
    const Vec3 p = column().mesh->rest_vertex(column().top);
    std::ostringstream script;
    script << "# drag the tip and let go\n"
           << R"({"type":"hello"})" << "\n"
           << drag_start(column().top, p + Vec3(0.05, 0, 0), "m").dump() << "\n"
           << R"({"type":"step","count":10})" << "\n"
           << json{{"type", "drag_move"}, {"pointer", "m"}, {"pos", {p.x(), p.y() - 0.05, p.z() + 0.02}}}.dump() << "\n"
           << R"({"type":"step","count":10})" << "\n"
           << R"({"type":"bogus"})" << "\n"
           << R"({"type":"drag_end","pointer":"m"})" << "\n"
           << R"({"type":"step","count":15})" << "\n";
    SessionConfig cfg;
    cfg.cubature = 4;
    cfg.seed = 9;
    auto replay = [&] {
        SimSession s = session(column().convex, cfg);
        std::istringstream in(script.str());
        return replay_script(s, in);
    };
    const auto a = replay(), b = replay();
    ASSERT_EQ(a.size(), 36u);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a[20]["type"], "error");
    std::uint64_t last = 0;
    for (const auto& f : a) {
        if (f["type"] != "frame") continue;
        EXPECT_FALSE(f.contains("sim_ms"));
        EXPECT_GT(f["seq"].get<std::uint64_t>(), last);
        last = f["seq"].get<std::uint64_t>();
    }
    std::istringstream negative(R"({"type":"step","count":-1})");
    SimSession s = session(column().convex, cfg);
    EXPECT_THROW(replay_script(s, negative), ParseError);
}

TEST(SimSession, FuzzTenThousandMessages) {
    Rng rng(123);
    std::uniform_int_distribution<int> pick(0, 9), byte(0, 255), len(0, 40);
    std::normal_distribution<double> coord(0.0, 0.5);
    const std::vector<std::string> types{"hello", "drag_start", "drag_move", "drag_end", "reset", "frame", ""};
    SimSession s = session(column().convex);
    for (int i = 0; i < 10000; ++i) {
        std::string msg;
        const int kind = pick(rng);
        if (kind < 3) {
            const int n = len(rng);
            for (int c = 0; c < n; ++c) msg.push_back(static_cast<char>(byte(rng)));
        } else {
            json j = {{"type", types[static_cast<std::size_t>(byte(rng)) % types.size()]}};
            if (pick(rng) < 7) j["pointer"] = pick(rng) < 8 ? json(std::to_string(pick(rng) % 3)) : json(coord(rng));
            if (pick(rng) < 7) j["vertex"] = pick(rng) < 8 ? json(byte(rng) % (column().mesh->num_vertices() + 4) - 2) : json("v");
            if (pick(rng) < 8) {
                const double scale = pick(rng) == 0 ? 1e6 : 1.0;
                j["pos"] = {scale * coord(rng), scale * coord(rng), scale * coord(rng)};
            }
            if (pick(rng) == 0) j["binary"] = pick(rng) < 5;
            if (pick(rng) == 0) j["dofs"] = byte(rng);
            msg = j.dump();
            if (kind == 9 && !msg.empty()) msg.resize(static_cast<std::size_t>(byte(rng)) % msg.size());
        }
        std::vector<Outgoing> replies;
        ASSERT_NO_THROW(replies = s.handle(msg));
        for (const auto& r : replies) ASSERT_NO_THROW((void)json::parse(r.data));
        if (i % 50 == 0) {
            const Outgoing f = s.step();
            ASSERT_TRUE(s.state().q.allFinite());
            ASSERT_TRUE(s.displacement().allFinite());
            if (!f.binary) ASSERT_NO_THROW((void)json::parse(f.data));
        }
    }
    for (const auto& [id, d] : s.drags()) {
        EXPECT_GE(d.vertex, 0);
        EXPECT_LT(d.vertex, column().mesh->num_vertices());
    }
}

namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct Client {
    net::io_context io;
    websocket::stream<tcp::socket> ws{io};

    Client(std::uint16_t port, const std::string& path) {
        tcp::resolver resolver(io);
        net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
        ws.handshake("127.0.0.1", path);
    }

    json read_json() {
        beast::flat_buffer buf;
        ws.read(buf);
        return json::parse(beast::buffers_to_string(buf.data()));
    }

    json read_until(const std::string& type) {
        for (int i = 0; i < 1000; ++i) {
            json j = read_json();
            if (j["type"] == type) return j;
        }
        return {};
    }

    void send(const std::string& text) { ws.write(net::buffer(text)); }
};

} // namespace

TEST(SimServer, WebSocketRoundTrip) {
    ServerConfig cfg;
    cfg.port = 0;
    cfg.session.dt = 1.0 / 120.0;
    SimServer server(column().mesh, column().fixture.material(), column().convex, cfg);
    const std::uint16_t port = server.start();
    ASSERT_GT(port, 0);

    Client c(port, "/sim");
    EXPECT_EQ(c.read_json()["type"], "mesh");
    c.send("not json");
    EXPECT_FALSE(c.read_until("error").is_null());
    c.send(pulled(column().top, Vec3(0.1, 0, 0)));
    std::uint64_t last = 0;
    double tip = 0.0;
    for (int i = 0; i < 20; ++i) {
        const json f = c.read_until("frame");
        ASSERT_FALSE(f.is_null());
        EXPECT_GT(f["seq"].get<std::uint64_t>(), last);
        last = f["seq"].get<std::uint64_t>();
        tip = f["positions"][static_cast<std::size_t>(3 * column().top)].get<double>() - column().mesh->rest_vertex(column().top).x();
    }
    EXPECT_GT(tip, 0.0);

    EXPECT_THROW(Client(port, "/elsewhere"), beast::system_error);
    server.stop();
    server.wait();
}

TEST(SimServer, MismatchedCheckpointRefused) {
    auto tagged = std::make_shared<LinearModel>(column().basis, column().mass);
    tagged->metadata["mesh_hash"] = column().mesh->hash() ^ 1u;
    ServerConfig cfg;
    cfg.port = 0;
    EXPECT_THROW(SimServer(column().mesh, column().fixture.material(), tagged, cfg), InvalidArgument);
}
