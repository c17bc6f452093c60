#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvxrom/reducedsim.hpp"

namespace cvxrom {

struct SessionConfig {
    double dt = 1.0 / 60.0;
    /// Number of random cubature elements; 0 uses every element.
    int cubature = 0;
    std::uint64_t seed = 0;
    double drag_stiffness = 1e3; ///< N/m
    /// Largest accepted client message; longer ones get an error frame.
    std::size_t max_message_bytes = 1 << 16;
    ReducedSolverConfig solver;
};

struct Drag {
    int vertex = 0;
    Vec3 target = Vec3::Zero();
    double stiffness = 0.0;
};

/// Server -> client message, text (JSON) or binary.
struct Outgoing {
    bool binary = false;
    std::string data;
};

/// One interactive simulation: owns the reduced state and the active drags.
/// Pure logic with no networking, so it can be driven directly by tests and
/// by the replay harness.
class SimSession {
public:
    /// Throws DimensionError when the model does not fit the mesh and
    /// InvalidArgument when its metadata names a different mesh.
    SimSession(std::shared_ptr<const TetMesh> mesh, Material material, std::shared_ptr<const ReducedModel> model,
               SessionConfig config = {});

    /// Parses and applies one client message; returns the replies (mesh, error).
    /// Never throws on malformed input.
    std::vector<Outgoing> handle(std::string_view message);
    /// Advances one time step and returns the frame to broadcast.
    Outgoing step();

    Outgoing mesh_message() const;
    nlohmann::json frame_json(bool with_timing = true) const;
    /// Little-endian: u32 sequence number, u32 vertex count, then 3 f32 per vertex.
    std::string binary_frame() const;

    void reset();
    bool binary() const noexcept { return binary_; }
    bool closed() const noexcept { return closed_; }
    std::uint64_t sequence() const noexcept { return sequence_; }
    const ReducedState& state() const noexcept { return state_; }
    const std::map<std::string, Drag>& drags() const noexcept { return drags_; }
    const TetMesh& mesh() const noexcept { return *mesh_; }
    Vec displacement() const;
    /// Messages ignored with a warning (e.g. unknown pointer ids).
    int warnings() const noexcept { return warnings_; }
    double last_step_ms() const noexcept { return last_step_ms_; }

private:
    Outgoing error(const std::string& msg) const;
    void sync_springs();

    std::shared_ptr<const TetMesh> mesh_;
    Material material_;
    std::shared_ptr<const ReducedModel> model_;
    SessionConfig config_;
    std::unique_ptr<ReducedObjective> objective_;
    std::vector<Face> faces_;
    ReducedState state_;
    std::map<std::string, Drag> drags_;
    std::uint64_t sequence_ = 0;
    bool binary_ = false;
    bool closed_ = false;
    int warnings_ = 0;
    double last_step_ms_ = 0.0;
};

/// Replays a script of JSON lines against a session. Each line is either a
/// client message or {"type": "step", "count": n}. Returns every frame
/// produced, without wall-clock fields, so runs can be compared exactly.
std::vector<nlohmann::json> replay_script(SimSession& session, std::istream& script);

struct ServerConfig {
    std::string address = "127.0.0.1";
    std::uint16_t port = 8765;
    SessionConfig session;
    /// Upper bound on frames sent per second.
    double max_frame_rate = 60.0;
};

/// WebSocket endpoint at ws://address:port/sim, one SimSession per connection.
class SimServer {
public:
    SimServer(std::shared_ptr<const TetMesh> mesh, Material material, std::shared_ptr<const ReducedModel> model,
              ServerConfig config);
    ~SimServer();
    SimServer(const SimServer&) = delete;
    SimServer& operator=(const SimServer&) = delete;

    /// Binds and starts serving on a background thread; returns the bound port
    /// (useful with port 0).
    std::uint16_t start();
    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace cvxrom
