#include <gtest/gtest.h>

#include <filesystem>

#include "../support/fd.hpp"
#include "cvxrom/decoder.hpp"
#include "cvxrom/errors.hpp"
#include "cvxrom/fullsolver.hpp"

using namespace cvxrom;
using namespace cvxrom::testing;

namespace {

struct Data {
    TetMesh mesh = make_bar_mesh(4, 1, 1, Vec3(1.0, 0.25, 0.25));
    LumpedMass mass = lump_mass(mesh);
    SnapshotSet snaps;
    PcaBasis basis;

    Data() {
        const ForceScenario sc = parse_scenario("fix x <= 0\nforce 0 inf x >= 1 0 -3 0\n");
        snaps = generate_snapshots(mesh, Material::from_young_poisson(1e5, 0.45), sc, sc.boundary(mesh), 0.01, 30, 3);
        basis = compute_pca(snaps, mass, 8);
    }
};

const Data& data() {
    static const Data d;
    return d;
}

std::unique_ptr<TrainableModel> random_model(ModelKind kind, Index k, Index r, unsigned seed, bool pca = true) {
    const Data& d = data();
    ModelSpec spec;
    spec.kind = kind;
    spec.k = k;
    spec.r = r;
    spec.hidden = {10, 10};
    spec.encoder_hidden = 12;
    spec.seed = seed;
    spec.pca_init = pca;
    auto m = make_model(spec, d.mesh.dofs(), &d.basis, d.mass);
    // Perturb every tensor so the test does not only see the structured start.
    Rng rng(seed + 1000);
    std::normal_distribution<double> nd(0.0, 0.05);
    for (auto t : m->tensors())
        for (double& v : t) v += nd(rng);
    m->project_constraints();
    return m;
}

double m_norm(const Vec& u, const LumpedMass& m) { return std::sqrt(u.dot(m.diag.cwiseProduct(u))); }

} // namespace

TEST(Decoder, OddSymmetryAndOriginPinning) {
    for (ModelKind kind : {ModelKind::convex_symmetric, ModelKind::convex_fullspace_ablation}) {
        for (unsigned seed = 0; seed < 5; ++seed) {
            const auto m = random_model(kind, 3, 6, seed);
            EXPECT_EQ(m->decode(Vec::Zero(3)), Vec::Zero(m->dofs()));
            Rng rng(seed);
            for (int i = 0; i < 20; ++i) {
                const Vec q = random_vec(3, rng, 5.0);
                const Vec plus = m->decode(q);
                const Vec minus = m->decode(-q);
                EXPECT_EQ(plus + minus, Vec::Zero(m->dofs()));
                EXPECT_EQ(m->jacobian(q), m->jacobian(-q));
            }
        }
    }
    const LinearModel lin(data().basis, data().mass);
    const Vec q = Vec::LinSpaced(8, -1, 1);
    EXPECT_EQ(lin.decode(q) + lin.decode(-q), Vec::Zero(lin.dofs()));
}

TEST(Decoder, MatchesCompositionalOracle) {
    const auto model = random_model(ModelKind::convex_symmetric, 3, 6, 7);
    const auto& m = static_cast<const ConvexSymmetricModel&>(*model);
    Rng rng(3);
    for (int i = 0; i < 10; ++i) {
        const Vec q = random_vec(3, rng);
        const Vec a = icnn_forward(m.decoder.convex, q);
        const Vec b = icnn_forward(m.decoder.convex, Vec(-q));
        const Vec oracle = m.decoder.W * a - m.decoder.W * b;
        EXPECT_LT((m.decode(q) - oracle).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + oracle.cwiseAbs().maxCoeff()));
        EXPECT_EQ(decode(m.decoder, q), m.decode(q));
        EXPECT_EQ(decode_jacobian(m.decoder, q), m.jacobian(q));
    }
}

TEST(Decoder, JacobianFiniteDifferencesAndRows) {
    for (ModelKind kind : {ModelKind::convex_symmetric, ModelKind::vanilla, ModelKind::convex_fullspace_ablation}) {
        for (unsigned seed = 0; seed < 4; ++seed) {
            const auto m = random_model(kind, 3, 6, seed);
            Rng rng(seed + 5);
            const Vec q = random_vec(3, rng);
            const Mat J = m->jacobian(q);
            const Mat fd = fd_jacobian([&](const Vec& x) { return m->decode(x); }, q, 1e-6);
            EXPECT_LT(relative_error(J, fd, 1e-3), 1e-5) << to_string(kind);

            const RowSet rows = vertex_rows({7, 0, 3});
            const Mat Jr = m->jacobian_rows(q, rows);
            const Vec ur = m->decode_rows(q, rows);
            const Vec u = m->decode(q);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                EXPECT_EQ(Jr.row(static_cast<Index>(i)), J.row(rows[i]));
                EXPECT_EQ(ur[static_cast<Index>(i)], u[rows[i]]);
            }
            EXPECT_THROW(m->decode_rows(q, {m->dofs()}), InvalidArgument);
            EXPECT_THROW(m->decode(Vec::Zero(4)), DimensionError);
        }
    }
}

TEST(Decoder, BackpropMatchesFiniteDifferences) {
    for (ModelKind kind : {ModelKind::convex_symmetric, ModelKind::vanilla, ModelKind::convex_fullspace_ablation}) {
        auto m = random_model(kind, 2, 4, 11);
        Rng rng(12);
        Mat Q(2, 3);
        for (Index c = 0; c < 3; ++c) Q.col(c) = random_vec(2, rng);
        Mat up(m->dofs(), 3);
        for (Index c = 0; c < 3; ++c) up.col(c) = random_vec(m->dofs(), rng);

        auto grad = m->zeros_like();
        DecodeCache cache;
        const Mat U = m->decode_batch(Q, &cache);
        for (Index c = 0; c < 3; ++c) EXPECT_LT((U.col(c) - m->decode(Vec(Q.col(c)))).norm(), 1e-12 * (1 + U.norm()));
        const Mat dQ = m->decode_backward(cache, up, *grad);
        for (Index c = 0; c < 3; ++c)
            EXPECT_LT(relative_error(dQ.col(c), m->jacobian(Vec(Q.col(c))).transpose() * up.col(c)), 1e-10);

        const auto objective = [&] { return (up.array() * m->decode_batch(Q).array()).sum(); };
        TensorList params = m->tensors(), grads = grad->tensors();
        const std::size_t encoder_tensors = m->encoder.tensors().size();
        for (std::size_t t = encoder_tensors; t < params.size(); ++t) {
            if (params[t].empty()) continue;
            const Vec fd = fd_gradient(objective, params[t], 1e-6);
            const Eigen::Map<const Vec> an(grads[t].data(), static_cast<Index>(grads[t].size()));
            EXPECT_LT(relative_error(an, fd), 1e-5) << to_string(kind) << " tensor " << t;
        }
    }
}

TEST(Decoder, PcaInitLinearLimit) {
    const Data& d = data();
    // r = k: the model starts close to the rank-k linear model.
    const auto [enc, dec] = init_from_pca(d.basis, d.mass, 4, 4, {16, 16}, 1);
    EXPECT_EQ(decode(dec, Vec::Zero(4)), Vec::Zero(d.mesh.dofs()));
    EXPECT_EQ(dec.W, 0.5 * d.basis.B.leftCols(4));
    const PcaBasis b4 = d.basis.truncated(4);
    for (Index s = 0; s < d.snaps.count(); ++s) {
        const Vec u = linear_reconstruct(b4, linear_project(b4, d.mass, d.snaps.U.col(s)));
        if (m_norm(u, d.mass) == 0.0) continue;
        const Vec rec = decode(dec, encode(enc, u));
        EXPECT_LT(m_norm(rec - u, d.mass) / m_norm(u, d.mass), 0.5);
    }
}

TEST(Decoder, PcaInitSanityBand) {
    const Data& d = data();
    for (ModelKind kind : {ModelKind::convex_symmetric, ModelKind::vanilla}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.k = 3;
        spec.r = 6;
        const auto m = make_model(spec, d.mesh.dofs(), &d.basis, d.mass);
        double err = 0.0;
        for (Index s = 0; s < d.snaps.count(); ++s) {
            const Vec u = d.snaps.U.col(s);
            err += std::pow(m_norm(m->decode(m->encode(u)) - u, d.mass), 2);
        }
        const double linear_err = projection_error(d.basis.truncated(3), d.mass, d.snaps.U);
        EXPECT_LE(err, 5.0 * linear_err + 1e-12) << to_string(kind);
    }
}

TEST(Decoder, StandardInitPath) {
    const Data& d = data();
    ModelSpec spec;
    spec.k = 3;
    spec.pca_init = false;
    const auto m = make_model(spec, d.mesh.dofs(), nullptr, d.mass);
    EXPECT_EQ(m->decode(Vec::Zero(3)), Vec::Zero(d.mesh.dofs()));
    EXPECT_TRUE(m->constraints_hold());
    const auto& c = static_cast<const ConvexSymmetricModel&>(*m);
    EXPECT_NE(c.decoder.W, 0.5 * d.basis.B.leftCols(6));
    spec.pca_init = true;
    EXPECT_THROW(make_model(spec, d.mesh.dofs(), nullptr, d.mass), InvalidArgument);
}

TEST(Decoder, RankInsufficient) {
    const Data& d = data();
    ModelSpec spec;
    spec.k = 5;
    spec.r = 10;
    EXPECT_THROW(make_model(spec, d.mesh.dofs(), &d.basis, d.mass), RankDeficiencyError);
}

TEST(Vanilla, NoStructuralZero) {
    const auto m = random_model(ModelKind::vanilla, 3, 6, 4);
    EXPECT_GT(m->decode(Vec::Zero(3)).norm(), 0.0);
    const Vec q = Vec::Constant(3, 0.7);
    EXPECT_GT((m->decode(q) + m->decode(-q)).norm(), 0.0);
    const auto& v = static_cast<const VanillaModel&>(*m);
    EXPECT_EQ(decode_vanilla(v.decoder, q), m->decode(q));
}

TEST(Checkpoint, RoundTripAllKinds) {
    const Data& d = data();
    const auto path = (std::filesystem::temp_directory_path() / "cvxrom_ckpt_test.bin").string();
    const Vec q = Vec::LinSpaced(3, -0.4, 0.9);
    for (ModelKind kind : {ModelKind::convex_symmetric, ModelKind::vanilla, ModelKind::convex_fullspace_ablation}) {
        auto m = random_model(kind, 3, 6, 2);
        m->metadata["mesh_hash"] = d.mesh.hash();
        write_model(*m, path);
        const auto back = read_model(path);
        EXPECT_EQ(back->kind(), kind);
        EXPECT_EQ(back->decode(q), m->decode(q));
        EXPECT_EQ(back->encode(d.snaps.U.col(3)), m->encode(d.snaps.U.col(3)));
        EXPECT_EQ(back->metadata["mesh_hash"].get<std::uint64_t>(), d.mesh.hash());
        EXPECT_EQ(back->metadata["k"], 3);
    }
    const LinearModel lin(d.basis.truncated(3), d.mass);
    write_model(lin, path);
    const auto back = read_model(path);
    EXPECT_EQ(back->kind(), ModelKind::linear);
    EXPECT_EQ(back->decode(q), lin.decode(q));
    EXPECT_THROW(read_trainable(path), InvalidArgument);
    write_basis(d.basis, path);
    EXPECT_THROW(read_model(path), ParseError);
    std::filesystem::remove(path);
}

TEST(ModelKindNames, ParseAndPrint) {
    for (ModelKind k : {ModelKind::linear, ModelKind::convex_symmetric, ModelKind::vanilla, ModelKind::convex_fullspace_ablation})
        EXPECT_EQ(parse_model_kind(to_string(k)), k);
    EXPECT_THROW(parse_model_kind("mlp"), InvalidArgument);
}
