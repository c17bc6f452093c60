#include <chrono>
#include <cmath>
#include <cstring>
#include <istream>

#include "cvxrom/errors.hpp"
#include "cvxrom/simserver.hpp"

namespace cvxrom {

namespace {

std::string pointer_id(const nlohmann::json& j) {
    if (!j.contains("pointer")) return "0";
    const auto& p = j.at("pointer");
    if (p.is_string()) return p.get<std::string>();
    if (p.is_number_integer()) return std::to_string(p.get<long long>());
    throw ParseError("pointer must be a string or an integer");
}

Vec3 position(const nlohmann::json& j) {
    if (!j.contains("pos") || !j.at("pos").is_array() || j.at("pos").size() != 3) throw ParseError("pos must be [x, y, z]");
    Vec3 p;
    for (int i = 0; i < 3; ++i) {
        const auto& v = j.at("pos")[static_cast<std::size_t>(i)];
        if (!v.is_number()) throw ParseError("pos entries must be numbers");
        p[i] = v.get<double>();
    }
    if (!p.allFinite()) throw ParseError("pos must be finite");
    return p;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
}

} // namespace

SimSession::SimSession(std::shared_ptr<const TetMesh> mesh, Material material, std::shared_ptr<const ReducedModel> model,
                       SessionConfig config)
    : mesh_(std::move(mesh)), material_(material), model_(std::move(model)), config_(config) {
    if (!mesh_ || !model_) throw InvalidArgument("session needs a mesh and a model");
    if (!(config_.dt > 0.0)) throw InvalidArgument("session time step must be positive");
    if (!(config_.drag_stiffness >= 0.0)) throw InvalidArgument("drag stiffness must be non-negative");
    require_dims(model_->dofs() == mesh_->dofs(), "checkpoint has " + std::to_string(model_->dofs()) + " dofs but the mesh has " +
                                                      std::to_string(mesh_->dofs()));
    if (model_->metadata.contains("mesh_hash")) {
        const auto& h = model_->metadata.at("mesh_hash");
        const bool same = h.is_number_unsigned() ? h.get<std::uint64_t>() == mesh_->hash()
                                                 : h.is_string() && h.get<std::string>() == std::to_string(mesh_->hash());
        if (!same) throw InvalidArgument("checkpoint was trained on a different mesh");
    }
    std::optional<CubatureSet> cub;
    if (config_.cubature > 0) cub = select_random_cubature(*mesh_, config_.cubature, config_.seed);
    objective_ = std::make_unique<ReducedObjective>(*mesh_, material_, *model_, std::move(cub));
    faces_ = boundary_faces(*mesh_);
    state_ = ReducedState::rest(model_->latent_dim());
}

Outgoing SimSession::error(const std::string& msg) const {
    return {false, nlohmann::json{{"type", "error"}, {"msg", msg}}.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)};
}

void SimSession::sync_springs() {
    std::vector<DragSpring> springs;
    for (const auto& [id, d] : drags_) springs.push_back({d.vertex, d.target, d.stiffness});
    objective_->set_springs(std::move(springs));
}

void SimSession::reset() {
    state_ = ReducedState::rest(model_->latent_dim());
    drags_.clear();
    sync_springs();
}

std::vector<Outgoing> SimSession::handle(std::string_view message) {
    if (message.size() > config_.max_message_bytes) return {error("message exceeds " + std::to_string(config_.max_message_bytes) + " bytes")};
    try {
        const nlohmann::json j = nlohmann::json::parse(message.begin(), message.end());
        if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) return {error("message needs a string 'type'")};
        const std::string type = j.at("type").get<std::string>();
        if (type == "hello") {
            if (j.contains("binary")) {
                if (!j.at("binary").is_boolean()) return {error("binary must be a boolean")};
                binary_ = j.at("binary").get<bool>();
            }
            if (j.contains("dofs") && (!j.at("dofs").is_number_integer() || j.at("dofs").get<long long>() != mesh_->dofs())) {
                closed_ = true;
                return {error("client expects a different mesh (server has " + std::to_string(mesh_->dofs()) + " dofs)")};
            }
            return {mesh_message()};
        }
        if (type == "drag_start") {
            const std::string id = pointer_id(j);
            if (!j.contains("vertex") || !j.at("vertex").is_number_integer()) return {error("drag_start needs an integer vertex")};
            const long long v = j.at("vertex").get<long long>();
            if (v < 0 || v >= mesh_->num_vertices()) return {error("vertex " + std::to_string(v) + " out of range")};
            const Vec3 target = j.contains("pos") ? position(j) : mesh_->rest_vertex(static_cast<int>(v)) + displacement().segment<3>(3 * v);
            drags_[id] = {static_cast<int>(v), target, config_.drag_stiffness};
            sync_springs();
            return {};
        }
        if (type == "drag_move") {
            const std::string id = pointer_id(j);
            const Vec3 target = position(j);
            const auto it = drags_.find(id);
            if (it == drags_.end()) {
                ++warnings_;
                return {};
            }
            it->second.target = target;
            sync_springs();
            return {};
        }
        if (type == "drag_end") {
            if (drags_.erase(pointer_id(j)) == 0) {
                ++warnings_;
                return {};
            }
            sync_springs();
            return {};
        }
        if (type == "reset") {
            reset();
            return {};
        }
        return {error("unknown message type '" + type + "'")};
    } catch (const nlohmann::json::exception& e) {
        return {error(std::string("malformed message: ") + e.what())};
    } catch (const Error& e) {
        return {error(e.what())};
    }
}

Outgoing SimSession::step() {
    const auto t0 = std::chrono::steady_clock::now();
    const Vec q_pred = state_.q + config_.dt * state_.q_dot;
    ReducedReport rep;
    Vec q;
    try {
        objective_->set_inertia(config_.dt, model_->decode(q_pred));
        q = minimize_reduced(*objective_, q_pred, config_.solver, &rep);
    } catch (const Error&) {
        q.resize(0);
    }
    Outgoing diag;
    if (q.size() == 0 || !q.allFinite() || !model_->decode(q).allFinite()) {
        state_ = ReducedState::rest(model_->latent_dim());
        diag = error("simulation state became invalid; reset to rest");
    } else {
        if (!rep.converged) ++warnings_;
        state_.q_dot = (q - state_.q) / config_.dt;
        state_.q = q;
        state_.time += config_.dt;
    }
    ++sequence_;
    last_step_ms_ = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!diag.data.empty()) return diag;
    if (binary_) return {true, binary_frame()};
    return {false, frame_json().dump()};
}

Vec SimSession::displacement() const { return model_->decode(state_.q); }

Outgoing SimSession::mesh_message() const {
    std::vector<int> flat;
    flat.reserve(3 * faces_.size());
    for (const auto& f : faces_) flat.insert(flat.end(), f.begin(), f.end());
    const Vec& x = mesh_->rest_positions();
    const nlohmann::json j = {{"type", "mesh"},
                              {"vertex_count", mesh_->num_vertices()},
                              {"positions", std::vector<double>(x.data(), x.data() + x.size())},
                              {"faces", flat},
                              {"latent_dim", model_->latent_dim()},
                              {"dt", config_.dt}};
    return {false, j.dump()};
}

nlohmann::json SimSession::frame_json(bool with_timing) const {
    const Vec x = mesh_->rest_positions() + displacement();
    nlohmann::json j = {{"type", "frame"},
                        {"seq", sequence_},
                        {"t", state_.time},
                        {"positions", std::vector<double>(x.data(), x.data() + x.size())},
                        {"q", std::vector<double>(state_.q.data(), state_.q.data() + state_.q.size())}};
    if (with_timing) j["sim_ms"] = last_step_ms_;
    return j;
}

std::string SimSession::binary_frame() const {
    const Vec x = mesh_->rest_positions() + displacement();
    std::string out;
    out.reserve(8 + 4 * static_cast<std::size_t>(x.size()));
    put_u32(out, static_cast<std::uint32_t>(sequence_));
    put_u32(out, static_cast<std::uint32_t>(mesh_->num_vertices()));
    for (Index i = 0; i < x.size(); ++i) put_f32(out, static_cast<float>(x[i]));
    return out;
}

std::vector<nlohmann::json> replay_script(SimSession& session, std::istream& script) {
    std::vector<nlohmann::json> frames;
    std::string line;
    int line_no = 0;
    while (std::getline(script, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t\r")] == '#') continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            j = nullptr;
        }
        if (j.is_object() && j.value("type", "") == "step") {
            const int count = j.value("count", 1);
            if (count < 0) throw ParseError("replay line " + std::to_string(line_no) + ": negative step count");
            for (int i = 0; i < count; ++i) {
                const Outgoing out = session.step();
                frames.push_back(out.binary ? session.frame_json(false) : nlohmann::json::parse(out.data));
                frames.back().erase("sim_ms");
            }
            continue;
        }
        for (const Outgoing& reply : session.handle(line))
            if (!reply.binary) {
                nlohmann::json r = nlohmann::json::parse(reply.data);
                if (r["type"] == "error") frames.push_back(std::move(r));
            }
    }
    return frames;
}

} // namespace cvxrom
