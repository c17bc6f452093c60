#include "cvxrom/fullsolver.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/SparseCholesky>

#include "cvxrom/binary_io.hpp"
#include "cvxrom/errors.hpp"

namespace cvxrom {

namespace {

struct FreeDofMap {
    std::vector<int> free;     // free dof -> global dof
    std::vector<int> position; // global dof -> free index or -1
};

FreeDofMap make_free_map(const std::vector<bool>& fixed) {
    FreeDofMap map;
    map.position.assign(fixed.size(), -1);
    for (std::size_t i = 0; i < fixed.size(); ++i)
        if (!fixed[i]) {
            map.position[i] = static_cast<int>(map.free.size());
            map.free.push_back(static_cast<int>(i));
        }
    return map;
}

SparseMat restrict_to_free(const SparseMat& h, const FreeDofMap& map) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(h.nonZeros()));
    for (int c = 0; c < h.outerSize(); ++c)
        for (SparseMat::InnerIterator it(h, c); it; ++it) {
            const int r = map.position[static_cast<std::size_t>(it.row())];
            const int cc = map.position[static_cast<std::size_t>(it.col())];
            if (r >= 0 && cc >= 0) trips.emplace_back(r, cc, it.value());
        }
    SparseMat out(static_cast<Index>(map.free.size()), static_cast<Index>(map.free.size()));
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

// Generic projected Newton on the free dofs of an objective of the form
//   inertia_weight/2 |u - target|_M^2 + Psi(u) - <f, u>.
// inertia_weight = 0 gives the static problem.
Vec minimize_incremental_potential(const TetMesh& mesh, const Material& mat, const Vec& mass_diag,
                                   double inertia_weight, const Vec& target, const Vec& f_ext,
                                   const std::vector<bool>& fixed, Vec u, const NewtonConfig& cfg,
                                   NewtonReport* report) {
    const FreeDofMap map = make_free_map(fixed);
    const Index nf = static_cast<Index>(map.free.size());

    auto objective = [&](const Vec& x) {
        double e = total_energy(mesh, x, mat) - f_ext.dot(x);
        if (inertia_weight > 0.0) e += 0.5 * inertia_weight * (x - target).dot(mass_diag.cwiseProduct(x - target));
        return e;
    };
    auto gradient = [&](const Vec& x) {
        Vec g = total_gradient(mesh, x, mat) - f_ext;
        if (inertia_weight > 0.0) g += inertia_weight * mass_diag.cwiseProduct(x - target);
        Vec gf(nf);
        for (Index i = 0; i < nf; ++i) gf[i] = g[map.free[static_cast<std::size_t>(i)]];
        return gf;
    };

    const double scale = static_cast<double>(mesh.dofs()) * mass_diag.mean();
    const double grad_tol = cfg.grad_tolerance * scale;

    NewtonReport local;
    NewtonReport& rep = report ? *report : local;
    rep = NewtonReport{};

    double e = objective(u);
    rep.objective_history.push_back(e);
    Vec g = gradient(u);
    double gnorm = g.norm();
    if (nf == 0) {
        rep.residual = 0.0;
        rep.objective = e;
        return u;
    }

    Eigen::SimplicialLDLT<SparseMat> ldlt;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        if (gnorm < grad_tol) {
            rep.iterations = it;
            rep.residual = gnorm;
            rep.objective = e;
            return u;
        }
        SparseMat h = restrict_to_free(total_hessian(mesh, u, mat, cfg.project_hessian), map);
        if (inertia_weight > 0.0)
            for (Index i = 0; i < nf; ++i) h.coeffRef(i, i) += inertia_weight * mass_diag[map.free[static_cast<std::size_t>(i)]];

        Vec dir;
        double shift = 0.0;
        for (int attempt = 0; attempt < 12; ++attempt) {
            SparseMat hs = h;
            if (shift > 0.0)
                for (Index i = 0; i < nf; ++i) hs.coeffRef(i, i) += shift;
            ldlt.compute(hs);
            if (ldlt.info() == Eigen::Success) {
                dir = ldlt.solve(-g);
                if (ldlt.info() == Eigen::Success && dir.allFinite() && dir.dot(g) < 0.0) break;
            }
            dir.resize(0);
            shift = shift == 0.0 ? 1e-8 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff()) : shift * 10.0;
        }
        if (dir.size() == 0) dir = -g;

        const double slope = g.dot(dir);
        double alpha = 1.0;
        Vec trial;
        double e_trial = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < cfg.max_line_search; ++ls) {
            trial = u;
            for (Index i = 0; i < nf; ++i) trial[map.free[static_cast<std::size_t>(i)]] += alpha * dir[i];
            e_trial = objective(trial);
            if (std::isfinite(e_trial) && e_trial <= e + cfg.armijo * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // At round-off level the line search cannot make progress; accept as converged
            // only if the gradient is already tiny relative to the tolerance scale.
            if (gnorm < 1e3 * grad_tol) {
                rep.iterations = it;
                rep.residual = gnorm;
                rep.objective = e;
                return u;
            }
            throw SolverError("line search failed (residual " + std::to_string(gnorm) + ")", gnorm, it);
        }
        const double decrease = e - e_trial;
        u = std::move(trial);
        e = e_trial;
        rep.objective_history.push_back(e);
        g = gradient(u);
        gnorm = g.norm();
        if (decrease <= cfg.relative_decrease * std::max(std::abs(e), 1e-300) && gnorm < 1e3 * grad_tol) {
            rep.iterations = it + 1;
            rep.residual = gnorm;
            rep.objective = e;
            return u;
        }
    }
    if (gnorm < grad_tol) {
        rep.iterations = cfg.max_iterations;
        rep.residual = gnorm;
        rep.objective = e;
        return u;
    }
    throw SolverError("Newton did not converge in " + std::to_string(cfg.max_iterations) + " iterations (residual " +
                          std::to_string(gnorm) + ")",
                      gnorm, cfg.max_iterations);
}

} // namespace

FullSpaceSolver::FullSpaceSolver(const TetMesh& mesh, const Material& material, ForceScenario scenario,
                                 BoundaryCondition bc, NewtonConfig config)
    : mesh_(mesh), material_(material), scenario_(std::move(scenario)), bc_(std::move(bc)), config_(config),
      mass_(lump_mass(mesh)) {
    bc_.validate(mesh_);
    scenario_.validate(mesh_);
    fixed_ = bc_.fixed_dof_mask(mesh_.dofs());
}

FullState FullSpaceSolver::step(const FullState& state, double dt, NewtonReport* report) const {
    if (!(dt > 0.0)) throw InvalidArgument("time step must be positive");
    require_dims(state.u.size() == mesh_.dofs() && state.u_dot.size() == mesh_.dofs(), "state size does not match mesh");
    const double t_next = state.time + dt;
    const Vec target = state.u + dt * state.u_dot;
    const Vec f = scenario_.external_force(mesh_, mass_.diag, t_next);

    Vec guess = target;
    const Vec prescribed = bc_.prescribed(mesh_.dofs());
    for (Index i = 0; i < guess.size(); ++i)
        if (fixed_[static_cast<std::size_t>(i)]) guess[i] = prescribed[i];

    FullState next;
    next.u = minimize_incremental_potential(mesh_, material_, mass_.diag, 1.0 / (dt * dt), target, f, fixed_,
                                            std::move(guess), config_, report);
    next.u_dot = (next.u - state.u) / dt;
    next.time = t_next;
    return next;
}

Vec solve_static(const TetMesh& mesh, const Material& material, const BoundaryCondition& bc, const Vec& f_ext,
                 const NewtonConfig& config, const Vec& u0, NewtonReport* report) {
    bc.validate(mesh);
    require_dims(f_ext.size() == mesh.dofs(), "external force has wrong length");
    const LumpedMass mass = lump_mass(mesh);
    Vec u = u0.size() == 0 ? Vec(Vec::Zero(mesh.dofs())) : u0;
    require_dims(u.size() == mesh.dofs(), "initial guess has wrong length");
    const auto fixed = bc.fixed_dof_mask(mesh.dofs());
    const Vec prescribed = bc.prescribed(mesh.dofs());
    for (Index i = 0; i < u.size(); ++i)
        if (fixed[static_cast<std::size_t>(i)]) u[i] = prescribed[i];
    return minimize_incremental_potential(mesh, material, mass.diag, 0.0, Vec::Zero(mesh.dofs()), f_ext, fixed,
                                          std::move(u), config, report);
}

void SnapshotSet::validate() const {
    if (U.cols() < 1) throw InvalidArgument("snapshot set is empty");
    if (static_cast<Index>(timestamps.size()) != U.cols()) throw InvalidArgument("timestamp count does not match snapshots");
    if (!U.allFinite()) throw InvalidArgument("non-finite snapshot entry");
}

void write_snapshots(const SnapshotSet& snapshots, const std::string& path) {
    snapshots.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    io::BinaryWriter w(out, "SNAP");
    w.json(snapshots.metadata);
    Vec t = Eigen::Map<const Vec>(snapshots.timestamps.data(), static_cast<Index>(snapshots.timestamps.size()));
    w.vector(t);
    w.matrix(snapshots.U);
}

SnapshotSet read_snapshots(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    io::BinaryReader r(in, "SNAP");
    SnapshotSet s;
    s.metadata = r.json();
    const Vec t = r.vector();
    s.timestamps.assign(t.data(), t.data() + t.size());
    s.U = r.matrix();
    s.validate();
    return s;
}

SnapshotSet generate_snapshots(const TetMesh& mesh, const Material& material, const ForceScenario& scenario,
                               const BoundaryCondition& bc, double dt, int steps, int stride,
                               const NewtonConfig& config) {
    if (steps < 1 || stride < 1) throw InvalidArgument("steps and stride must be >= 1");
    if (steps / stride < 1) throw InvalidArgument("stride larger than step count records nothing");
    FullSpaceSolver solver(mesh, material, scenario, bc, config);
    FullState state = FullState::rest(mesh.dofs());
    const Vec prescribed = bc.prescribed(mesh.dofs());
    const auto fixed = bc.fixed_dof_mask(mesh.dofs());
    for (Index i = 0; i < state.u.size(); ++i)
        if (fixed[static_cast<std::size_t>(i)]) state.u[i] = prescribed[i];

    SnapshotSet out;
    std::vector<Vec> cols;
    for (int s = 1; s <= steps; ++s) {
        try {
            state = solver.step(state, dt);
        } catch (const SolverError& e) {
            throw SolverError("step " + std::to_string(s) + ": " + e.what(), e.residual(), e.iterations());
        }
        if (s % stride == 0) {
            cols.push_back(state.u);
            out.timestamps.push_back(state.time);
        }
    }
    out.U.resize(mesh.dofs(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) out.U.col(static_cast<Index>(c)) = cols[c];
    out.metadata = {
        {"scenario", scenario.name},
        {"scenario_text", scenario.to_text()},
        {"material", {{"E", material.youngs_modulus}, {"nu", material.poisson_ratio}, {"density", mesh.density()}}},
        {"dt", dt},
        {"steps", steps},
        {"stride", stride},
        {"mesh_hash", std::to_string(mesh.hash())},
    };
    return out;
}

} // namespace cvxrom
