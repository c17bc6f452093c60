#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvxrom/elastic.hpp"
#include "cvxrom/mesh.hpp"
#include "cvxrom/scenario.hpp"

namespace cvxrom {

struct FullState {
    Vec u;
    Vec u_dot;
    double time = 0.0;

    static FullState rest(Index dofs) { return {Vec::Zero(dofs), Vec::Zero(dofs), 0.0}; }
};

struct NewtonConfig {
    int max_iterations = 50;
    /// Converged when |grad| < grad_tolerance * (N * mean lumped mass).
    double grad_tolerance = 1e-6;
    /// ... or when the relative objective decrease falls below this.
    double relative_decrease = 1e-10;
    double armijo = 1e-4;
    int max_line_search = 40;
    bool project_hessian = true;
};

struct NewtonReport {
    int iterations = 0;
    double residual = 0.0;
    double objective = 0.0;
    std::vector<double> objective_history; ///< one entry per accepted iterate, starting with the initial guess
};

/// Implicit Euler in full space. Each step minimizes
///   1/(2 dt^2) |u - u_bar|_M^2 + Psi(u) - <f_ext(t + dt), u>,  u_bar = u + dt u_dot,
/// with Newton + backtracking line search on the free dofs.
class FullSpaceSolver {
public:
    FullSpaceSolver(const TetMesh& mesh, const Material& material, ForceScenario scenario, BoundaryCondition bc,
                    NewtonConfig config = {});

    /// Throws SolverError (with residual) on non-convergence or line-search failure.
    FullState step(const FullState& state, double dt, NewtonReport* report = nullptr) const;

    const LumpedMass& mass() const noexcept { return mass_; }
    const BoundaryCondition& boundary() const noexcept { return bc_; }
    const ForceScenario& scenario() const noexcept { return scenario_; }

private:
    const TetMesh& mesh_;
    Material material_;
    ForceScenario scenario_;
    BoundaryCondition bc_;
    NewtonConfig config_;
    LumpedMass mass_;
    std::vector<bool> fixed_;
};

/// Static equilibrium: minimizes Psi(u) - <f_ext, u> subject to the Dirichlet
/// conditions, starting from u0 (rest when empty).
Vec solve_static(const TetMesh& mesh, const Material& material, const BoundaryCondition& bc, const Vec& f_ext,
                 const NewtonConfig& config = {}, const Vec& u0 = Vec(), NewtonReport* report = nullptr);

/// Column-major matrix of displacement snapshots plus provenance.
struct SnapshotSet {
    Mat U;                          ///< N x S
    std::vector<double> timestamps; ///< length S
    nlohmann::json metadata = nlohmann::json::object();

    Index dofs() const noexcept { return U.rows(); }
    Index count() const noexcept { return U.cols(); }
    void validate() const;
};

void write_snapshots(const SnapshotSet& snapshots, const std::string& path);
SnapshotSet read_snapshots(const std::string& path);

/// Runs `steps` implicit Euler steps from rest and records every stride-th state.
/// A solver failure is rethrown with the failing step index in the message.
SnapshotSet generate_snapshots(const TetMesh& mesh, const Material& material, const ForceScenario& scenario,
                               const BoundaryCondition& bc, double dt, int steps, int stride,
                               const NewtonConfig& config = {});

} // namespace cvxrom
