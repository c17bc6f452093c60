#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "cvxrom/bench.hpp"
#include "cvxrom/reducedsim.hpp"
#include "cvxrom/trainer.hpp"

namespace cvxrom::cli {

/// Settings shared by every subcommand. Loaded from a JSON file (--config),
/// then overridden by command-line flags.
struct RunConfig {
    std::uint64_t seed = 0;

    double youngs_modulus = 1e5;
    double poisson_ratio = 0.45;
    double density = 1000.0;

    // gen-data
    double data_dt = 0.01;
    int data_steps = 60;
    int data_stride = 2;

    // pca / train
    std::string model_kind = "convex_symmetric";
    Index k = 4;
    Index r = 0;
    std::vector<Index> hidden{64, 64};
    Index encoder_hidden = 128;
    bool pca_init = true;
    TrainConfig training;

    // simulate / relax / serve
    double sim_dt = 1.0 / 60.0;
    int sim_steps = 120;
    int cubature = 0;
    int relax_iterations = 100;
    ReducedSolverConfig solver;

    std::string address = "127.0.0.1";
    int port = 8765;
    double max_frame_rate = 60.0;
    double drag_stiffness = 1e3;

    BenchFixture bench;

    RunConfig();
    /// Unknown keys and wrongly typed values throw ParseError.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    nlohmann::json to_json() const;
    Material material() const;
    ModelSpec model_spec() const;
};

} // namespace cvxrom::cli
