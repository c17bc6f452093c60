#include "cvxrom/reducedsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/QR>

#include "cvxrom/errors.hpp"

namespace cvxrom {

// ---------------------------------------------------------------- cubature

void CubatureSet::validate(const TetMesh& mesh) const {
    if (elements.size() != weights.size()) throw InvalidArgument("cubature elements and weights differ in length");
    if (elements.empty()) throw InvalidArgument("cubature set is empty");
    std::vector<char> seen(static_cast<std::size_t>(mesh.num_elements()), 0);
    for (std::size_t i = 0; i < elements.size(); ++i) {
        const int e = elements[i];
        if (e < 0 || e >= mesh.num_elements()) throw InvalidArgument("cubature element " + std::to_string(e) + " out of range");
        if (seen[static_cast<std::size_t>(e)]++) throw InvalidArgument("cubature element " + std::to_string(e) + " repeated");
        if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
            throw InvalidArgument("cubature weight for element " + std::to_string(e) + " must be positive");
    }
}

CubatureSet CubatureSet::all(const TetMesh& mesh) {
    CubatureSet c;
    c.elements.resize(static_cast<std::size_t>(mesh.num_elements()));
    std::iota(c.elements.begin(), c.elements.end(), 0);
    c.weights.assign(c.elements.size(), 1.0);
    return c;
}

CubatureSet select_random_cubature(const TetMesh& mesh, int count, std::uint64_t seed) {
    if (count < 1 || count > mesh.num_elements())
        throw InvalidArgument("cubature count " + std::to_string(count) + " outside [1, " + std::to_string(mesh.num_elements()) + "]");
    std::vector<int> idx(static_cast<std::size_t>(mesh.num_elements()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    // Partial Fisher-Yates: the first `count` entries are a uniform sample without replacement.
    for (int i = 0; i < count; ++i) {
        std::uniform_int_distribution<int> pick(i, mesh.num_elements() - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    CubatureSet c;
    const double vol = mesh.total_volume();
    for (int i = 0; i < count; ++i) {
        const int e = idx[static_cast<std::size_t>(i)];
        c.elements.push_back(e);
        c.weights.push_back(vol / (count * mesh.rest_volume(e)));
    }
    return c;
}

// ---------------------------------------------------------------- objective

ReducedObjective::ReducedObjective(const TetMesh& mesh, const Material& material, const ReducedModel& model,
                                   std::optional<CubatureSet> cubature, std::optional<SdfCollider> collider)
    : mesh_(mesh), material_(material), model_(model), mass_(lump_mass(mesh)),
      cubature_(cubature ? std::move(*cubature) : CubatureSet::all(mesh)), collider_(std::move(collider)) {
    require_dims(model.dofs() == mesh.dofs(), "model has " + std::to_string(model.dofs()) + " dofs, mesh has " +
                                                  std::to_string(mesh.dofs()));
    cubature_.validate(mesh);
    if (collider_ && !collider_->sdf) throw InvalidArgument("collider has no SDF");
    rebuild_rows();
}

void ReducedObjective::set_inertia(double dt, Vec u_bar) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("time step must be positive");
    require_dims(u_bar.size() == mesh_.dofs(), "predicted displacement has wrong length");
    dt_ = dt;
    u_bar_ = std::move(u_bar);
    rebuild_rows();
}

void ReducedObjective::clear_inertia() {
    dt_ = 0.0;
    u_bar_.resize(0);
    rebuild_rows();
}

void ReducedObjective::set_external_force(Vec f_ext) {
    require_dims(f_ext.size() == 0 || f_ext.size() == mesh_.dofs(), "external force has wrong length");
    f_ext_ = std::move(f_ext);
    rebuild_rows();
}

void ReducedObjective::set_springs(std::vector<DragSpring> springs) {
    for (const auto& s : springs) {
        if (s.vertex < 0 || s.vertex >= mesh_.num_vertices()) throw InvalidArgument("spring vertex " + std::to_string(s.vertex) + " out of range");
        if (!s.target.allFinite() || !std::isfinite(s.stiffness) || s.stiffness < 0.0) throw InvalidArgument("invalid spring");
    }
    springs_ = std::move(springs);
    rebuild_rows();
}

void ReducedObjective::rebuild_rows() {
    full_ = has_inertia() || collider_.has_value();
    active_.clear();
    rows_.clear();
    local_.assign(static_cast<std::size_t>(mesh_.num_vertices()), -1);
    if (full_) return;
    std::vector<char> mark(static_cast<std::size_t>(mesh_.num_vertices()), 0);
    for (int e : cubature_.elements)
        for (int v : mesh_.tet(e)) mark[static_cast<std::size_t>(v)] = 1;
    if (f_ext_.size() > 0)
        for (int v = 0; v < mesh_.num_vertices(); ++v)
            if (f_ext_.segment<3>(3 * v).squaredNorm() > 0.0) mark[static_cast<std::size_t>(v)] = 1;
    for (const auto& s : springs_) mark[static_cast<std::size_t>(s.vertex)] = 1;
    for (int v = 0; v < mesh_.num_vertices(); ++v)
        if (mark[static_cast<std::size_t>(v)]) {
            local_[static_cast<std::size_t>(v)] = static_cast<int>(active_.size());
            active_.push_back(v);
        }
    rows_ = vertex_rows(active_);
}

double ReducedObjective::evaluate(const Vec& q, Vec* grad, Mat* gn_hessian) const {
    const bool need_jac = grad || gn_hessian;
    Vec u;
    Mat J;
    model_.evaluate(q, full_ ? nullptr : &rows_, &u, need_jac ? &J : nullptr);
    const Index k = q.size();
    Vec gu;
    if (need_jac) gu = Vec::Zero(u.size());
    if (gn_hessian) *gn_hessian = Mat::Zero(k, k);

    double energy = 0.0;
    Vec12 ue, ge;
    Mat12 he;
    Mat Je(12, k);
    for (std::size_t c = 0; c < cubature_.size(); ++c) {
        const int e = cubature_.elements[c];
        const double w = cubature_.weights[c];
        const Tet& t = mesh_.tet(e);
        for (int a = 0; a < 4; ++a) ue.segment<3>(3 * a) = u.segment<3>(base(t[a]));
        energy += w * element_derivatives_local(mesh_, e, ue, material_, grad ? &ge : nullptr,
                                                gn_hessian ? &he : nullptr, project_psd_);
        if (grad)
            for (int a = 0; a < 4; ++a) gu.segment<3>(base(t[a])) += w * ge.segment<3>(3 * a);
        if (gn_hessian) {
            for (int a = 0; a < 4; ++a) Je.middleRows<3>(3 * a) = J.middleRows<3>(base(t[a]));
            gn_hessian->noalias() += w * (Je.transpose() * he * Je);
        }
    }

    if (has_inertia()) {
        const double inv = 1.0 / (dt_ * dt_);
        const Vec d = u - u_bar_;
        const Vec md = mass_.diag.cwiseProduct(d);
        energy += 0.5 * inv * d.dot(md);
        if (grad) gu += inv * md;
        if (gn_hessian) gn_hessian->noalias() += inv * (J.transpose() * mass_.diag.asDiagonal() * J);
    }

    if (f_ext_.size() > 0) {
        if (full_) {
            energy -= f_ext_.dot(u);
            if (grad) gu -= f_ext_;
        } else {
            for (std::size_t i = 0; i < active_.size(); ++i) {
                const Vec3 f = f_ext_.segment<3>(3 * active_[i]);
                energy -= f.dot(u.segment<3>(3 * static_cast<Index>(i)));
                if (grad) gu.segment<3>(3 * static_cast<Index>(i)) -= f;
            }
        }
    }

    const Vec& x0 = mesh_.rest_positions();
    for (const auto& s : springs_) {
        const Index b = base(s.vertex);
        const Vec3 d = x0.segment<3>(3 * s.vertex) + u.segment<3>(b) - s.target;
        energy += 0.5 * s.stiffness * d.squaredNorm();
        if (grad) gu.segment<3>(b) += s.stiffness * d;
        if (gn_hessian) gn_hessian->noalias() += s.stiffness * (J.middleRows<3>(b).transpose() * J.middleRows<3>(b));
    }

    if (collider_) {
        const Sdf& sdf = *collider_->sdf;
        const double ks = collider_->stiffness;
        for (int v = 0; v < mesh_.num_vertices(); ++v) {
            const Vec3 x = x0.segment<3>(3 * v) + u.segment<3>(3 * v);
            const double phi = sdf.distance(x);
            if (!std::isfinite(phi)) throw Error("SDF returned a non-finite distance at vertex " + std::to_string(v));
            if (phi >= 0.0) continue;
            energy += 0.5 * ks * phi * phi;
            if (need_jac) {
                const Vec3 n = sdf.gradient(x);
                if (grad) gu.segment<3>(3 * v) += ks * phi * n;
                if (gn_hessian) {
                    const Eigen::RowVectorXd nj = n.transpose() * J.middleRows<3>(3 * v);
                    gn_hessian->noalias() += ks * (nj.transpose() * nj);
                }
            }
        }
    }

    if (grad) *grad = J.transpose() * gu;
    return energy;
}

double ReducedObjective::elastic_energy(const Vec& q) const {
    Vec u;
    model_.evaluate(q, full_ ? nullptr : &rows_, &u, nullptr);
    double energy = 0.0;
    Vec12 ue;
    for (std::size_t c = 0; c < cubature_.size(); ++c) {
        const int e = cubature_.elements[c];
        const Tet& t = mesh_.tet(e);
        for (int a = 0; a < 4; ++a) ue.segment<3>(3 * a) = u.segment<3>(base(t[a]));
        energy += cubature_.weights[c] * element_energy_local(mesh_, e, ue, material_);
    }
    return energy;
}

// ---------------------------------------------------------------- solver

Vec minimize_reduced(const ReducedObjective& objective, Vec q, const ReducedSolverConfig& cfg, ReducedReport* report,
                     const IterateCallback& on_iterate) {
    ReducedReport local;
    ReducedReport& rep = report ? *report : local;
    rep = ReducedReport{};
    const Index k = q.size();
    if (!q.allFinite()) throw InvalidArgument("initial latent state is not finite");

    Vec g;
    Mat H;
    double e = objective.evaluate(q, &g, &H);
    if (!std::isfinite(e)) throw SolverError("objective is not finite at the initial guess", INFINITY, 0);
    rep.objective_history.push_back(e);
    if (on_iterate) on_iterate(q, e);
    double gnorm = g.norm();
    const double tol = std::max(cfg.abs_tolerance, cfg.rel_tolerance * gnorm);

    const auto finish = [&](int it, bool converged, const char* why) {
        rep.iterations = it;
        rep.residual = gnorm;
        rep.objective = e;
        rep.converged = converged;
        rep.stop_reason = why;
    };

    Eigen::LLT<Mat> llt;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        if (gnorm <= tol) {
            finish(it, true, "gradient tolerance");
            return q;
        }
        Vec dir;
        double shift = 0.0;
        const double diag_scale = std::max(H.diagonal().cwiseAbs().maxCoeff(), 1e-300);
        for (int attempt = 0; attempt < 20; ++attempt) {
            Mat Hs = H;
            if (shift > 0.0) Hs.diagonal().array() += shift;
            llt.compute(Hs);
            if (llt.info() == Eigen::Success) {
                dir = llt.solve(-g);
                if (dir.allFinite() && dir.dot(g) < 0.0) break;
            }
            dir.resize(0);
            shift = shift == 0.0 ? 1e-10 * diag_scale : shift * 10.0;
        }
        if (dir.size() == 0) dir = -g;
        const double slope = g.dot(dir);
        if (-0.5 * slope <= cfg.decrement_tolerance * std::max(std::abs(e), 1e-300)) {
            finish(it, true, "newton decrement");
            return q;
        }

        double alpha = 1.0;
        Vec trial(k);
        double e_trial = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < cfg.max_line_search; ++ls) {
            trial = q + alpha * dir;
            e_trial = objective.evaluate(trial);
            if (std::isfinite(e_trial) && e_trial <= e + cfg.armijo * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            const bool small = gnorm <= 1e3 * tol;
            finish(it, small, small ? "line search at round-off" : "line search failure");
            return q;
        }
        q = std::move(trial);
        e = objective.evaluate(q, &g, &H);
        gnorm = g.norm();
        rep.objective_history.push_back(e);
        if (on_iterate) on_iterate(q, e);
    }
    finish(cfg.max_iterations, gnorm <= tol, gnorm <= tol ? "gradient tolerance" : "iteration limit");
    return q;
}

ReducedState step_reduced(const ReducedState& state, double dt, ReducedObjective& objective,
                          const ReducedSolverConfig& config, ReducedReport* report) {
    if (!(dt > 0.0)) throw InvalidArgument("time step must be positive");
    require_dims(state.q.size() == objective.model().latent_dim() && state.q_dot.size() == state.q.size(),
                 "reduced state does not match the model");
    const Vec q_pred = state.q + dt * state.q_dot;
    objective.set_inertia(dt, objective.model().decode(q_pred));
    ReducedReport local;
    ReducedReport& rep = report ? *report : local;
    const Vec q = minimize_reduced(objective, q_pred, config, &rep);
    if (!rep.converged)
        throw SolverError("reduced step did not converge: " + rep.stop_reason + " (residual " + std::to_string(rep.residual) + ")",
                          rep.residual, rep.iterations);
    ReducedState next;
    next.q = q;
    next.q_dot = (q - state.q) / dt;
    next.time = state.time + dt;
    return next;
}

RelaxTrajectory quasi_static_relax(ReducedObjective& objective, const Vec& q0, int max_iterations,
                                   const ReducedSolverConfig& config) {
    require_dims(q0.size() == objective.model().latent_dim(), "initial latent state does not match the model");
    objective.clear_inertia();
    RelaxTrajectory traj;
    ReducedSolverConfig cfg = config;
    cfg.max_iterations = max_iterations;
    minimize_reduced(objective, q0, cfg, &traj.report, [&](const Vec& q, double e) {
        traj.q.push_back(q);
        traj.energy.push_back(e);
    });
    return traj;
}

// ---------------------------------------------------------------- linear baseline

Mat cubature_strain_operator(const Mat& basis, const TetMesh& mesh, const CubatureSet& cubature) {
    require_dims(basis.rows() == mesh.dofs(), "basis does not match mesh");
    Mat G(9 * static_cast<Index>(cubature.size()), basis.cols());
    Mat Be(12, basis.cols());
    for (std::size_t c = 0; c < cubature.size(); ++c) {
        const int e = cubature.elements[c];
        const Tet& t = mesh.tet(e);
        for (int a = 0; a < 4; ++a) Be.middleRows<3>(3 * a) = basis.middleRows<3>(3 * static_cast<Index>(t[a]));
        G.middleRows<9>(9 * static_cast<Index>(c)) = deformation_gradient_jacobian(mesh.rest_shape_inverse(e)) * Be;
    }
    return G;
}

Mat cubature_stiffness(const Mat& basis, const TetMesh& mesh, const Material& material, const CubatureSet& cubature) {
    const Mat G = cubature_strain_operator(basis, mesh, cubature);
    const Mat9 C0 = pk1_derivative(Mat3::Identity(), material, true);
    Mat K = Mat::Zero(basis.cols(), basis.cols());
    for (std::size_t c = 0; c < cubature.size(); ++c) {
        const auto Ge = G.middleRows<9>(9 * static_cast<Index>(c));
        K.noalias() += cubature.weights[c] * mesh.rest_volume(cubature.elements[c]) * (Ge.transpose() * C0 * Ge);
    }
    return 0.5 * (K + K.transpose());
}

NullspaceSolveResult linear_nullspace_solve(const LinearModel& model, const TetMesh& mesh, const Material& material,
                                            const CubatureSet& cubature, const Vec& q0) {
    require_dims(q0.size() == model.latent_dim(), "initial latent state does not match the model");
    cubature.validate(mesh);
    const Mat K = cubature_stiffness(model.basis(), mesh, material, cubature);
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(K);
    cod.setThreshold(1e-10);
    NullspaceSolveResult res;
    res.rank = static_cast<int>(cod.rank());
    res.null_dim = static_cast<int>(model.latent_dim()) - res.rank;
    // Least-squares step, then drop what K cannot see.
    const Vec q1 = q0 - cod.solve(K * q0);
    const Vec null_part = q1 - cod.solve(K * q1);
    res.q = q1 - null_part;
    res.residual = (K * res.q).norm();
    return res;
}

} // namespace cvxrom
