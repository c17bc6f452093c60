// Acceptance suite: one PASS/FAIL line per headline criterion.
#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "../support/fd.hpp"
#include "cvxrom/bench.hpp"
#include "cvxrom/convexnet.hpp"
#include "cvxrom/fullsolver.hpp"
#include "cvxrom/reducedsim.hpp"
#include "cvxrom/trainer.hpp"

using namespace cvxrom;
using namespace cvxrom::testing;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    json values = json::object();
};

struct Criterion {
    std::string id;
    std::string claim;
    std::function<Outcome()> run;
    /// Failures are reported as performance regressions and do not fail the suite.
    bool performance = false;
};

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(4) << v;
    return s.str();
}

bool within_slack(double ours, double theirs, double slack = 0.10) { return ours <= theirs * (1.0 + slack); }

const Material kMat = Material::from_young_poisson(1e5, 0.45);

struct BarData {
    TetMesh mesh = make_bar_mesh(4, 1, 1, Vec3(1.0, 0.25, 0.25));
    LumpedMass mass = lump_mass(mesh);
    SnapshotSet snaps;
    PcaBasis basis;

    BarData() {
        const ForceScenario sc = parse_scenario("fix x <= 0\nforce 0 inf x >= 1 0 -3 0\n");
        snaps = generate_snapshots(mesh, kMat, sc, sc.boundary(mesh), 0.01, 30, 3);
        basis = compute_pca(snaps, mass, 8);
    }
};

const BarData& bar() {
    static const BarData b;
    return b;
}

std::unique_ptr<TrainableModel> perturbed_model(ModelKind kind, Index dofs, const PcaBasis& basis, const LumpedMass& mass,
                                                Index k, Index r, std::uint64_t seed) {
    ModelSpec spec;
    spec.kind = kind;
    spec.k = k;
    spec.r = r;
    spec.hidden = {10, 10};
    spec.encoder_hidden = 12;
    spec.seed = seed;
    auto m = make_model(spec, dofs, &basis, mass);
    Rng rng(seed + 977);
    std::normal_distribution<double> nd(0.0, 0.05);
    for (auto t : m->tensors())
        for (double& v : t) v += nd(rng);
    m->project_constraints();
    return m;
}

const ModelKind kNonlinear[] = {ModelKind::convex_symmetric, ModelKind::vanilla, ModelKind::convex_fullspace_ablation};

// ---------------------------------------------------------------- structural properties

Outcome convexity() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = -1e300;
    int violations = 0;
    for (int n = 0; n < 50; ++n) {
        Rng rng(1000 + static_cast<std::uint64_t>(n));
        std::uniform_int_distribution<int> dim(1, 8), width(2, 24), depth(1, 3);
        const Index k = dim(rng);
        std::vector<Index> widths;
        for (int l = depth(rng); l > 0; --l) widths.push_back(width(rng));
        widths.push_back(dim(rng));
        IcnnInit init;
        init.wz_scale = 1.0 + 4.0 * std::uniform_real_distribution<double>(0, 1)(rng);
        init.beta = n % 2 ? 10.0 : 1.0;
        IcnnParams p = make_icnn(k, widths, rng, init);
        for (auto& layer : p.layers) layer.b = random_vec(layer.b.size(), rng, 1.0);
        p.validate();
        std::uniform_real_distribution<double> lam(0.0, 1.0);
        for (int t = 0; t < 1000; ++t) {
            const Vec a = uniform_vec(k, rng, -10, 10), b = uniform_vec(k, rng, -10, 10);
            const double l = lam(rng);
            const Vec lhs = icnn_forward(p, l * a + (1 - l) * b);
            const Vec rhs = l * icnn_forward(p, a) + (1 - l) * icnn_forward(p, b);
            for (Index i = 0; i < lhs.size(); ++i) {
                const double gap = (lhs[i] - rhs[i]) / std::max(1.0, std::abs(rhs[i]));
                worst = std::max(worst, gap);
                if (gap > 1e-9) ++violations;
            }
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {violations == 0 && secs < 60.0,
            "50 ICNNs x 1000 triples: " + std::to_string(violations) + " violations, worst scaled gap " + fmt(worst) +
                " (tol 1e-9), " + fmt(secs) + " s (limit 60)",
            {{"violations", violations}, {"worst_gap", worst}, {"seconds", secs}}};
}

Outcome odd_symmetry() {
    const BarData& d = bar();
    int bad = 0;
    for (int n = 0; n < 50; ++n) {
        const ModelKind kind = n % 2 ? ModelKind::convex_fullspace_ablation : ModelKind::convex_symmetric;
        const Index k = 1 + n % 4;
        const auto m = perturbed_model(kind, d.mesh.dofs(), d.basis, d.mass, k, 2 * k, 50 + static_cast<std::uint64_t>(n));
        if (m->decode(Vec::Zero(k)) != Vec::Zero(m->dofs())) ++bad;
        Rng rng(static_cast<std::uint64_t>(n));
        for (int s = 0; s < 100; ++s) {
            const Vec q = random_vec(k, rng, 5.0);
            if (m->decode(-q) + m->decode(q) != Vec::Zero(m->dofs())) ++bad;
        }
    }
    return {bad == 0, "50 decoders x 100 codes: " + std::to_string(bad) + " nonzero f(-q)+f(q) or f(0) (exact)", {{"failures", bad}}};
}

Outcome gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double elastic_g = 0, elastic_h = 0, jac = 0, training = 0, reduced = 0;

    const TetMesh cube = make_bar_mesh(1, 1, 1, Vec3(1, 1, 1));
    for (int c = 0; c < 20; ++c) {
        Rng rng(7000 + static_cast<std::uint64_t>(c));
        Vec u = random_vec(cube.dofs(), rng, 0.1);
        const Vec g = total_gradient(cube, u, kMat);
        const Vec fd = fd_gradient([&] { return total_energy(cube, u, kMat); }, as_span(u), 1e-6);
        elastic_g = std::max(elastic_g, relative_error(g, fd, 1e-6));
        const Mat H = Mat(total_hessian(cube, u, kMat, false));
        const Mat fdH = fd_jacobian([&](const Vec& x) { return total_gradient(cube, x, kMat); }, u, 1e-6);
        elastic_h = std::max(elastic_h, relative_error(H, fdH, 1e-6));
    }

    const BarData& d = bar();
    for (int c = 0; c < 20; ++c) {
        const auto m = perturbed_model(kNonlinear[c % 3], d.mesh.dofs(), d.basis, d.mass, 3, 6, 100 + static_cast<std::uint64_t>(c));
        Rng rng(200 + static_cast<std::uint64_t>(c));
        const Vec q = random_vec(3, rng);
        const Mat fd = fd_jacobian([&](const Vec& x) { return m->decode(x); }, q, 1e-6);
        jac = std::max(jac, relative_error(m->jacobian(q), fd, 1e-6));
    }

    const TetMesh tet = make_single_tet();
    const LumpedMass tmass = lump_mass(tet);
    for (int c = 0; c < 20; ++c) {
        Rng rng(300 + static_cast<std::uint64_t>(c));
        Mat U(12, 6);
        for (Index j = 0; j < 6; ++j) U.col(j) = random_vec(12, rng, 0.05);
        const PcaBasis basis = compute_pca(U, tmass, 4);
        ModelSpec spec;
        spec.kind = kNonlinear[c % 3];
        spec.k = 2;
        spec.r = 4;
        spec.hidden = {6, 6};
        spec.encoder_hidden = 6;
        spec.seed = static_cast<std::uint64_t>(c);
        auto m = make_model(spec, 12, &basis, tmass);
        std::normal_distribution<double> nd(0.0, 0.05);
        for (auto t : m->tensors())
            for (double& v : t) v += nd(rng);
        m->project_constraints();
        auto g = m->zeros_like();
        recon_loss_gradient(*m, U, tmass, *g);
        TensorList params = m->tensors(), grads = g->tensors();
        for (std::size_t t = 0; t < params.size(); ++t) {
            if (params[t].empty()) continue;
            const Vec fd = fd_gradient([&] { return recon_loss(*m, U, tmass); }, params[t], 1e-6);
            const Eigen::Map<const Vec> an(grads[t].data(), static_cast<Index>(grads[t].size()));
            training = std::max(training, relative_error(an, fd, 1e-6));
        }
    }

    const Vec f_ext = parse_scenario("fix x <= 0\nforce 0 inf x >= 1 0 -3 0\n").external_force(d.mesh, d.mass.diag, 0.0);
    for (int c = 0; c < 20; ++c) {
        std::unique_ptr<ReducedModel> m;
        if (c % 4 == 3)
            m = std::make_unique<LinearModel>(d.basis.truncated(3), d.mass);
        else
            m = perturbed_model(kNonlinear[c % 4], d.mesh.dofs(), d.basis, d.mass, 3, 6, 400 + static_cast<std::uint64_t>(c));
        std::optional<CubatureSet> cub;
        std::optional<SdfCollider> col;
        if (c % 2) cub = select_random_cubature(d.mesh, 5, static_cast<std::uint64_t>(c));
        if (c % 5 < 2) col = SdfCollider{std::make_shared<PlaneSdf>(Vec3(0, 0.02, 0), Vec3(0, 1, 0)), 5e3};
        ReducedObjective obj(d.mesh, kMat, *m, cub, col);
        obj.set_external_force(f_ext);
        Rng rng(500 + static_cast<std::uint64_t>(c));
        if (c % 3 == 0) obj.set_inertia(0.01, random_vec(d.mesh.dofs(), rng, 0.01));
        Vec q = random_vec(m->latent_dim(), rng, 0.02);
        Vec g;
        obj.evaluate(q, &g);
        const Vec fd = fd_gradient([&] { return obj.evaluate(q); }, as_span(q), 1e-7);
        reduced = std::max(reduced, relative_error(g, fd, 1e-6));
    }

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double worst = std::max({elastic_g, elastic_h, jac, training, reduced});
    return {worst < 1e-4 && secs < 300.0,
            "max rel. error: elastic grad " + fmt(elastic_g) + ", elastic Hessian " + fmt(elastic_h) + ", decoder Jacobian " + fmt(jac) +
                ", training " + fmt(training) + ", reduced objective " + fmt(reduced) + " (tol 1e-4, 20 cases each), " + fmt(secs) + " s",
            {{"elastic_gradient", elastic_g},
             {"elastic_hessian", elastic_h},
             {"decoder_jacobian", jac},
             {"training_gradient", training},
             {"reduced_objective", reduced},
             {"seconds", secs}}};
}

Outcome full_reduced_consistency() {
    const TetMesh mesh = make_bar_mesh(1, 1, 1, Vec3(0.2, 0.2, 0.2));
    const LumpedMass mass = lump_mass(mesh);
    const ForceScenario sc = parse_scenario("fix x <= 0\nforce 0 inf x >= 0.2 0 -40 10\n");
    const BoundaryCondition bc = sc.boundary(mesh);
    const auto fixed = bc.fixed_dof_mask(mesh.dofs());
    std::vector<Index> free;
    for (Index i = 0; i < mesh.dofs(); ++i)
        if (!fixed[static_cast<std::size_t>(i)]) free.push_back(i);
    Mat B = Mat::Zero(mesh.dofs(), static_cast<Index>(free.size()));
    for (std::size_t c = 0; c < free.size(); ++c) B(free[c], static_cast<Index>(c)) = 1.0;
    const LinearModel lin(B, B.transpose());
    NewtonConfig ncfg;
    ncfg.grad_tolerance = 1e-9;
    const FullSpaceSolver full(mesh, kMat, sc, bc, ncfg);
    ReducedObjective obj(mesh, kMat, lin);
    FullState fs = FullState::rest(mesh.dofs());
    ReducedState rs = ReducedState::rest(lin.latent_dim());
    const double dt = 0.005;
    double worst = 0.0;
    for (int step = 0; step < 20; ++step) {
        obj.set_external_force(sc.external_force(mesh, mass.diag, fs.time + dt));
        fs = full.step(fs, dt);
        rs = step_reduced(rs, dt, obj);
        worst = std::max(worst, (lin.decode(rs.q) - fs.u).norm() / std::max(1.0, fs.u.norm()));
    }
    return {worst < 1e-8 && fs.u.norm() > 1e-3,
            std::to_string(mesh.num_elements()) + "-tet bar, 20 steps: max per-step difference " + fmt(worst) + " (tol 1e-8)",
            {{"max_difference", worst}}};
}

// ---------------------------------------------------------------- experiments

BenchFixture g_fixture;

Outcome didactic() {
    const ExperimentReport r = run_didactic2d(g_fixture);
    const double ia = r.scalar("icnn", "rmse_annulus"), ma = r.scalar("mlp", "rmse_annulus");
    const double id = r.scalar("icnn", "rmse_disk"), md = r.scalar("mlp", "rmse_disk");
    const double viol = r.scalar("icnn", "convexity_violations");
    return {ia < ma && viol == 0 && id < 0.05 && md < 0.05,
            "annulus RMSE icnn " + fmt(ia) + " < mlp " + fmt(ma) + "; icnn convexity violations " + fmt(viol) + "; disk RMSE icnn " +
                fmt(id) + ", mlp " + fmt(md) + " (< 0.05)",
            r.to_json()["scalars"]};
}

Outcome training() {
    const ExperimentReport r = run_training_comparison(g_fixture);
    const double ours = r.scalar("convex_symmetric", "final_loss"), ablation = r.scalar("convex_fullspace_ablation", "final_loss");
    return {ours < ablation, "final loss reduced-space " + fmt(ours) + " < full-space ablation " + fmt(ablation) + " (" +
                                 std::to_string(g_fixture.epochs) + " epochs)",
            r.to_json()["scalars"]};
}

Outcome direction() {
    const ExperimentReport r = run_direction_generalization(g_fixture);
    const double c = r.scalar("convex_symmetric", "inversion_deviation"), l = r.scalar("linear", "inversion_deviation"),
                 v = r.scalar("vanilla", "inversion_deviation");
    return {c == 0.0 && l == 0.0 && v > 0.0, "D convex " + fmt(c) + ", linear " + fmt(l) + " (exactly 0); vanilla " + fmt(v) + " (> 0)",
            r.to_json()["scalars"]};
}

Outcome magnitude() {
    const ExperimentReport r = run_magnitude_generalization(g_fixture);
    const double c = r.scalar("convex_symmetric", "plateau"), v = r.scalar("vanilla", "plateau");
    const bool mono = r.scalar("convex_symmetric", "monotone") == 1.0 && r.scalar("vanilla", "monotone") == 1.0;
    return {within_slack(c, v) && mono,
            "3x load plateau convex " + fmt(c) + " vs vanilla " + fmt(v) + " (need convex <= vanilla +10%); both monotone: " + (mono ? "yes" : "no"),
            r.to_json()["scalars"]};
}

Outcome cubature() {
    const ExperimentReport r = run_cubature_robustness(g_fixture);
    double lin_max = 0.0;
    for (int c = 1; c <= 5; ++c)
        for (double v : r.values("linear", "final_norm_count" + std::to_string(c))) lin_max = std::max(lin_max, v);
    const auto& cm = r.values("convex_symmetric", "mean_norm");
    const auto& vm = r.values("vanilla", "mean_norm");
    const auto& cv = r.values("convex_symmetric", "variance_norm");
    const auto& vv = r.values("vanilla", "variance_norm");
    bool ok = lin_max < 1e-6;
    std::string failures;
    for (std::size_t i = 0; i < cm.size(); ++i) {
        if (!within_slack(cm[i], vm[i])) {
            ok = false;
            failures += " mean@" + std::to_string(i + 1) + " " + fmt(cm[i]) + ">" + fmt(vm[i]);
        }
        if (!within_slack(cv[i], vv[i])) {
            ok = false;
            failures += " var@" + std::to_string(i + 1) + " " + fmt(cv[i]) + ">" + fmt(vv[i]);
        }
    }
    return {ok,
            std::to_string(g_fixture.trials) + " trials x counts 1-5: linear max norm " + fmt(lin_max) +
                " (< 1e-6); convex mean/variance <= vanilla (+10%) at every count" + (failures.empty() ? "" : "; violated:" + failures),
            r.to_json()["series"]};
}

Outcome keyframes() {
    const ExperimentReport r = run_sparse_keyframes(g_fixture);
    const double c = r.scalar("convex_symmetric", "median_perturbed_energy"), v = r.scalar("vanilla", "median_perturbed_energy");
    return {within_slack(c, v), "median energy under N(0, 15^2) latent noise: convex " + fmt(c) + " vs vanilla " + fmt(v) + " (need convex <= vanilla +10%)",
            r.to_json()["scalars"]};
}

Outcome realtime() {
    const ExperimentReport r = run_realtime(g_fixture);
    const double ms = r.scalar("convex_symmetric", "median_step_ms");
    return {ms < 16.0,
            "median step " + fmt(ms) + " ms (< 16) with k=10, r=20, 200 cubature elements on a " +
                fmt(r.scalar("convex_symmetric", "elements")) + "-tet mesh",
            r.to_json()["scalars"]};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    std::vector<std::string> only;
    std::string report;
    std::string fixture_path;
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--report", report, "Write results as JSON");
    app.add_option("--fixture", fixture_path, "Bench fixture JSON, bare or under a \"bench\" key (default: built-in desk-scale column)");
    CLI11_PARSE(app, argc, argv);

    if (!fixture_path.empty()) {
        std::ifstream in(fixture_path);
        if (!in) {
            std::cerr << "cannot open " << fixture_path << "\n";
            return 2;
        }
        const json j = json::parse(in);
        g_fixture = BenchFixture::from_json(j.contains("bench") ? j.at("bench") : j);
    }

    const std::vector<Criterion> criteria{
        {"convexity", "ICNN outputs are convex in the input", convexity},
        {"odd_symmetry", "symmetric decoders are odd and pin the origin", odd_symmetry},
        {"gradients", "analytic derivatives match finite differences", gradients},
        {"full_reduced", "identity-basis reduced stepping matches the full solver", full_reduced_consistency},
        {"didactic2d", "convex fit extrapolates better than an MLP", didactic},
        {"training", "reduced-space convex training beats the full-space ablation", training},
        {"direction", "latent inversion deviation", direction},
        {"magnitude", "out-of-range load plateau", magnitude},
        {"cubature", "robustness to sparse cubature", cubature},
        {"keyframes", "plausibility under latent noise after 5 keyframes", keyframes},
        {"realtime", "interactive step time", realtime, true},
    };

    int failures = 0;
    json results = json::array();
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what(), json::object()};
        }
        const std::string tag = o.pass ? "PASS" : (c.performance ? "FAIL (performance regression)" : "FAIL");
        std::cout << tag << " " << c.id << ": " << c.claim << " -- " << o.detail << std::endl;
        if (!o.pass && !c.performance) ++failures;
        results.push_back({{"id", c.id}, {"pass", o.pass}, {"performance", c.performance}, {"detail", o.detail}, {"values", o.values}});
    }
    if (!report.empty()) std::ofstream(report) << std::setw(2) << results << "\n";
    std::cout << (failures == 0 ? "acceptance: all correctness criteria pass" : "acceptance: " + std::to_string(failures) + " criteria fail")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
