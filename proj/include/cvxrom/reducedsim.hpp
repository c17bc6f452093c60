#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cvxrom/collision.hpp"
#include "cvxrom/decoder.hpp"
#include "cvxrom/elastic.hpp"

namespace cvxrom {

struct ReducedState {
    Vec q;
    Vec q_dot;
    double time = 0.0;

    static ReducedState rest(Index k) { return {Vec::Zero(k), Vec::Zero(k), 0.0}; }
};

/// Weighted element subset approximating the elastic energy:
///   Psi_cub(u) = sum_c weights[c] * vol_e * psi(F_e(u)),  e = elements[c].
struct CubatureSet {
    std::vector<int> elements;
    std::vector<double> weights;

    std::size_t size() const noexcept { return elements.size(); }
    /// Throws InvalidArgument for out-of-range or repeated elements and non-positive weights.
    void validate(const TetMesh& mesh) const;
    /// Every element with weight 1 (the exact energy).
    static CubatureSet all(const TetMesh& mesh);
};

/// Uniform sample of `count` distinct elements; weight_e = Vol(mesh) / (count * vol_e).
CubatureSet select_random_cubature(const TetMesh& mesh, int count, std::uint64_t seed);

/// Spring pulling vertex `vertex` towards a world-space target: (stiffness/2) |x_v - target|^2.
struct DragSpring {
    int vertex = 0;
    Vec3 target = Vec3::Zero();
    double stiffness = 1e3;
};

/// Reduced incremental potential
///   1/(2 dt^2) |f(q) - u_bar|_M^2 + Psi_cub(f(q)) + E_collision(f(q)) + E_springs(f(q)) - <f_ext, f(q)>
/// with the inertia term omitted in quasi-static mode. When neither inertia nor a
/// collider is active, only the decoder rows touched by cubature elements,
/// loaded vertices and springs are evaluated.
class ReducedObjective {
public:
    ReducedObjective(const TetMesh& mesh, const Material& material, const ReducedModel& model,
                     std::optional<CubatureSet> cubature = std::nullopt, std::optional<SdfCollider> collider = std::nullopt);

    void set_inertia(double dt, Vec u_bar);
    void clear_inertia();
    bool has_inertia() const noexcept { return dt_ > 0.0; }
    /// Full-length external force; an empty vector means no load.
    void set_external_force(Vec f_ext);
    void set_springs(std::vector<DragSpring> springs);
    void set_project_hessian(bool on) noexcept { project_psd_ = on; }

    /// Objective value; optionally its gradient in q and the Gauss-Newton Hessian
    /// J^T (H_elastic + M/dt^2 + H_springs + H_collision) J.
    double evaluate(const Vec& q, Vec* grad = nullptr, Mat* gn_hessian = nullptr) const;
    /// Cubature elastic energy of f(q) alone.
    double elastic_energy(const Vec& q) const;

    const TetMesh& mesh() const noexcept { return mesh_; }
    const Material& material() const noexcept { return material_; }
    const ReducedModel& model() const noexcept { return model_; }
    const LumpedMass& mass() const noexcept { return mass_; }
    const CubatureSet& cubature() const noexcept { return cubature_; }
    bool evaluates_all_rows() const noexcept { return full_; }
    std::size_t active_vertex_count() const noexcept { return full_ ? static_cast<std::size_t>(mesh_.num_vertices()) : active_.size(); }

private:
    void rebuild_rows();
    Index base(int v) const { return full_ ? 3 * static_cast<Index>(v) : 3 * static_cast<Index>(local_[static_cast<std::size_t>(v)]); }

    const TetMesh& mesh_;
    Material material_;
    const ReducedModel& model_;
    LumpedMass mass_;
    CubatureSet cubature_;
    std::optional<SdfCollider> collider_;
    double dt_ = 0.0;
    Vec u_bar_;
    Vec f_ext_;
    std::vector<DragSpring> springs_;
    bool project_psd_ = true;

    bool full_ = true;
    std::vector<int> active_;
    std::vector<int> local_;
    RowSet rows_;
};

struct ReducedSolverConfig {
    int max_iterations = 50;
    /// Converged when |grad| <= max(abs_tolerance, rel_tolerance * |grad at start|).
    double rel_tolerance = 1e-8;
    double abs_tolerance = 1e-12;
    /// ... or when the Newton decrement falls below this fraction of |objective|.
    double decrement_tolerance = 1e-15;
    double armijo = 1e-4;
    int max_line_search = 40;
};

struct ReducedReport {
    int iterations = 0;
    double residual = 0.0;
    double objective = 0.0;
    bool converged = false;
    std::string stop_reason;
    std::vector<double> objective_history; ///< accepted iterates, starting with the initial guess
};

using IterateCallback = std::function<void(const Vec& q, double objective)>;

/// Gauss-Newton with Levenberg-Marquardt shifts and Armijo backtracking. Never
/// throws on stagnation; the report says why it stopped.
Vec minimize_reduced(const ReducedObjective& objective, Vec q0, const ReducedSolverConfig& config = {},
                     ReducedReport* report = nullptr, const IterateCallback& on_iterate = {});

/// One implicit Euler step in latent space: u_bar = f(q + dt q_dot), then minimize
/// from q + dt q_dot. The objective's external force/springs must already be set.
/// Throws SolverError when the minimization does not converge.
ReducedState step_reduced(const ReducedState& state, double dt, ReducedObjective& objective,
                          const ReducedSolverConfig& config = {}, ReducedReport* report = nullptr);

struct RelaxTrajectory {
    std::vector<Vec> q;
    std::vector<double> energy;
    ReducedReport report;
};

/// Quasi-static relaxation (inertia removed) from q0; records every accepted iterate.
RelaxTrajectory quasi_static_relax(ReducedObjective& objective, const Vec& q0, int max_iterations,
                                   const ReducedSolverConfig& config = {});

struct NullspaceSolveResult {
    Vec q;
    int rank = 0;          ///< rank of the linearized cubature stiffness in latent space
    int null_dim = 0;      ///< latent directions invisible to the cubature
    double residual = 0.0; ///< |K q| after the solve
};

/// Linear-baseline counterpart of cubature relaxation. With the small-strain
/// cubature stiffness K = sum_c w_c vol_e G_e^T C0 G_e (C0 the rest elasticity
/// tensor), takes the minimum-norm least-squares step of K q = 0 from q0 and
/// then removes the remaining null-space components of K.
NullspaceSolveResult linear_nullspace_solve(const LinearModel& model, const TetMesh& mesh, const Material& material,
                                            const CubatureSet& cubature, const Vec& q0);

/// Latent small-strain stiffness of a linear basis on the cubature elements.
Mat cubature_stiffness(const Mat& basis, const TetMesh& mesh, const Material& material, const CubatureSet& cubature);

/// Stacked per-element linear strain operator (9|C| x k) of a linear basis on the cubature elements.
Mat cubature_strain_operator(const Mat& basis, const TetMesh& mesh, const CubatureSet& cubature);

} // namespace cvxrom
