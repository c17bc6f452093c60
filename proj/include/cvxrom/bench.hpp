#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvxrom/elastic.hpp"
#include "cvxrom/fullsolver.hpp"
#include "cvxrom/reducedsim.hpp"
#include "cvxrom/trainer.hpp"

namespace cvxrom {

/// Procedural desk-scale setup shared by the experiments: a vertical column
/// with its base fixed, loaded on its top face.
struct BenchFixture {
    int nx = 2, ny = 8, nz = 2;
    Vec3 dims = Vec3(0.25, 1.0, 0.25);
    double density = 1000.0;
    double youngs_modulus = 1e5;
    double poisson_ratio = 0.45;

    double dt = 0.01;
    int steps = 60;
    int stride = 2;
    /// Per-vertex load on the top face (N).
    double load = 60.0;

    Index linear_k = 4;
    Index k = 4;
    Index r = 8;
    std::vector<Index> hidden{64, 64};
    Index encoder_hidden = 128;

    int epochs = 5000;
    double learning_rate = 1e-3;
    int batch_size = 16;

    int trials = 100;
    int relax_iterations = 100;
    std::uint64_t seed = 0;

    TetMesh mesh() const;
    Material material() const;
    /// "fix y <= 0" plus a constant top-face load.
    ForceScenario scenario(const Vec3& per_vertex_force) const;

    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys throw ParseError.
    static BenchFixture from_json(const nlohmann::json& j);
    void validate() const;
};

/// Per-method series plus scalar summaries for one experiment.
struct ExperimentReport {
    std::string id;
    nlohmann::json config = nlohmann::json::object();
    std::vector<std::uint64_t> seeds;
    /// method -> series name -> values
    std::map<std::string, std::map<std::string, std::vector<double>>> series;
    /// method -> scalar name -> value
    std::map<std::string, std::map<std::string, double>> scalars;
    /// Wall-clock measurements; excluded from the reproducibility contract.
    nlohmann::json timing = nlohmann::json::object();

    /// Throws Error if any series or scalar is non-finite.
    void validate() const;
    nlohmann::json to_json() const;
    /// Writes report.json and one <method>_<series>.csv per series into dir.
    void write(const std::string& dir) const;

    double scalar(const std::string& method, const std::string& name) const;
    const std::vector<double>& values(const std::string& method, const std::string& name) const;
};

/// Runs body(i) for i in [0, n) on up to hardware_concurrency threads.
/// The first exception thrown is rethrown after all workers finish.
void parallel_for(int n, const std::function<void(int)>& body);

/// Mean of |f(-q_i) + f(q_i)|_M over the given latent codes (columns).
double inversion_deviation(const ReducedModel& model, const Mat& codes, const LumpedMass& mass);

/// Latent codes of every snapshot column.
Mat encode_all(const ReducedModel& model, const Mat& U);

/// Experiment ids: direction, magnitude, cubature, keyframes, convergence, training, didactic2d, realtime.
std::vector<std::string> experiment_ids();
ExperimentReport run_experiment(const std::string& id, const BenchFixture& fixture);

ExperimentReport run_direction_generalization(const BenchFixture& fixture);
ExperimentReport run_magnitude_generalization(const BenchFixture& fixture);
ExperimentReport run_cubature_robustness(const BenchFixture& fixture);
ExperimentReport run_sparse_keyframes(const BenchFixture& fixture);
ExperimentReport run_convergence_profile(const BenchFixture& fixture);
/// Training-loss curves of the symmetric convex model and the full-space convex ablation.
ExperimentReport run_training_comparison(const BenchFixture& fixture);
ExperimentReport run_didactic2d(const BenchFixture& fixture);

struct RealtimeConfig {
    int nx = 3, ny = 12, nz = 3;
    Vec3 dims = Vec3(0.3, 1.2, 0.3);
    Index k = 10;
    Index r = 20;
    int cubature = 200;
    int steps = 60;
    double dt = 1.0 / 60.0;
};
/// Median wall time of step_reduced with a drag spring attached.
ExperimentReport run_realtime(const BenchFixture& fixture, const RealtimeConfig& config = {});

} // namespace cvxrom
