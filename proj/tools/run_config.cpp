#include "run_config.hpp"

#include <fstream>
#include <set>

#include "cvxrom/errors.hpp"

namespace cvxrom::cli {

namespace {

using nlohmann::json;

class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ParseError("config section '" + where_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ParseError("config key '" + where_ + key + "': " + e.what());
        }
    }

    const json* section(const char* key) {
        if (!j_.contains(key)) return nullptr;
        seen_.insert(key);
        return &j_.at(key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ParseError("unknown config key '" + where_ + key + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

} // namespace

RunConfig::RunConfig() {
    training.epochs = 5000;
    training.learning_rate = 1e-3;
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    Section top(j, "");
    top.get("seed", c.seed);
    if (const json* m = top.section("material")) {
        Section s(*m, "material.");
        s.get("youngs_modulus", c.youngs_modulus);
        s.get("poisson_ratio", c.poisson_ratio);
        s.get("density", c.density);
        s.finish();
    }
    if (const json* d = top.section("data")) {
        Section s(*d, "data.");
        s.get("dt", c.data_dt);
        s.get("steps", c.data_steps);
        s.get("stride", c.data_stride);
        s.finish();
    }
    if (const json* m = top.section("model")) {
        Section s(*m, "model.");
        s.get("kind", c.model_kind);
        s.get("k", c.k);
        s.get("r", c.r);
        s.get("hidden", c.hidden);
        s.get("encoder_hidden", c.encoder_hidden);
        s.get("pca_init", c.pca_init);
        s.finish();
    }
    if (const json* t = top.section("training")) {
        Section s(*t, "training.");
        s.get("epochs", c.training.epochs);
        s.get("learning_rate", c.training.learning_rate);
        s.get("batch_size", c.training.batch_size);
        s.get("beta1", c.training.beta1);
        s.get("beta2", c.training.beta2);
        s.get("epsilon", c.training.epsilon);
        s.get("checkpoint_every", c.training.checkpoint_every);
        s.finish();
    }
    if (const json* m = top.section("simulation")) {
        Section s(*m, "simulation.");
        s.get("dt", c.sim_dt);
        s.get("steps", c.sim_steps);
        s.get("cubature", c.cubature);
        s.get("relax_iterations", c.relax_iterations);
        s.finish();
    }
    if (const json* m = top.section("solver")) {
        Section s(*m, "solver.");
        s.get("max_iterations", c.solver.max_iterations);
        s.get("rel_tolerance", c.solver.rel_tolerance);
        s.get("abs_tolerance", c.solver.abs_tolerance);
        s.get("decrement_tolerance", c.solver.decrement_tolerance);
        s.get("armijo", c.solver.armijo);
        s.get("max_line_search", c.solver.max_line_search);
        s.finish();
    }
    if (const json* m = top.section("serve")) {
        Section s(*m, "serve.");
        s.get("address", c.address);
        s.get("port", c.port);
        s.get("max_frame_rate", c.max_frame_rate);
        s.get("drag_stiffness", c.drag_stiffness);
        s.finish();
    }
    if (const json* b = top.section("bench")) c.bench = BenchFixture::from_json(*b);
    top.finish();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ParseError("config '" + path + "': " + e.what());
    }
    return from_json(j);
}

json RunConfig::to_json() const {
    return {{"seed", seed},
            {"material", {{"youngs_modulus", youngs_modulus}, {"poisson_ratio", poisson_ratio}, {"density", density}}},
            {"data", {{"dt", data_dt}, {"steps", data_steps}, {"stride", data_stride}}},
            {"model",
             {{"kind", model_kind}, {"k", k}, {"r", r}, {"hidden", hidden}, {"encoder_hidden", encoder_hidden}, {"pca_init", pca_init}}},
            {"training",
             {{"epochs", training.epochs},
              {"learning_rate", training.learning_rate},
              {"batch_size", training.batch_size},
              {"beta1", training.beta1},
              {"beta2", training.beta2},
              {"epsilon", training.epsilon},
              {"checkpoint_every", training.checkpoint_every}}},
            {"simulation", {{"dt", sim_dt}, {"steps", sim_steps}, {"cubature", cubature}, {"relax_iterations", relax_iterations}}},
            {"solver",
             {{"max_iterations", solver.max_iterations},
              {"rel_tolerance", solver.rel_tolerance},
              {"abs_tolerance", solver.abs_tolerance},
              {"decrement_tolerance", solver.decrement_tolerance},
              {"armijo", solver.armijo},
              {"max_line_search", solver.max_line_search}}},
            {"serve", {{"address", address}, {"port", port}, {"max_frame_rate", max_frame_rate}, {"drag_stiffness", drag_stiffness}}},
            {"bench", bench.to_json()}};
}

Material RunConfig::material() const { return Material::from_young_poisson(youngs_modulus, poisson_ratio); }

ModelSpec RunConfig::model_spec() const {
    ModelSpec s;
    s.kind = parse_model_kind(model_kind);
    s.k = k;
    s.r = r;
    s.hidden = hidden;
    s.encoder_hidden = encoder_hidden;
    s.pca_init = pca_init;
    s.seed = seed;
    return s;
}

} // namespace cvxrom::cli
