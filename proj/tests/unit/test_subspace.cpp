#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cvxrom/errors.hpp"
#include "cvxrom/subspace.hpp"

using namespace cvxrom;

namespace {

struct Fixture {
    TetMesh mesh = make_bar_mesh(3, 1, 1, Vec3(3, 1, 1));
    LumpedMass mass = lump_mass(mesh);
};

Mat random_matrix(Index rows, Index cols, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m;
}

} // namespace

TEST(Pca, SingleSnapshotRankOne) {
    Fixture f;
    const Mat u = random_matrix(f.mesh.dofs(), 1, 1);
    const PcaBasis b = compute_pca(u, f.mass, 1);
    EXPECT_NEAR((b.B.transpose() * f.mass.diag.asDiagonal() * b.B)(0, 0), 1.0, 1e-8);
    const Vec rec = linear_reconstruct(b, linear_project(b, f.mass, u.col(0)));
    EXPECT_LT((rec - u.col(0)).norm(), 1e-8 * u.norm());
    // Column proportional to u.
    EXPECT_NEAR(std::abs(b.B.col(0).normalized().dot(u.col(0).normalized())), 1.0, 1e-12);
}

TEST(Pca, ExactRankThreeSubspace) {
    Fixture f;
    const Mat span = random_matrix(f.mesh.dofs(), 3, 2);
    const Mat u = span * random_matrix(3, 12, 3);
    const PcaBasis b = compute_pca(u, f.mass, 3);
    const Mat gram = b.B.transpose() * f.mass.diag.asDiagonal() * b.B;
    EXPECT_LT((gram - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
    for (Index j = 0; j < u.cols(); ++j) {
        const Vec rec = linear_reconstruct(b, linear_project(b, f.mass, u.col(j)));
        EXPECT_LT((rec - u.col(j)).norm(), 1e-8 * u.col(j).norm());
    }
    for (Index c = 1; c < 3; ++c) EXPECT_GE(b.singular_values[c - 1], b.singular_values[c]);
}

TEST(Pca, Errors) {
    Fixture f;
    const Mat u = random_matrix(f.mesh.dofs(), 4, 4);
    EXPECT_THROW(compute_pca(u, f.mass, 5), InvalidArgument);
    EXPECT_THROW(compute_pca(u, f.mass, 0), InvalidArgument);
    const Mat deficient = random_matrix(f.mesh.dofs(), 2, 5) * random_matrix(2, 4, 6);
    try {
        compute_pca(deficient, f.mass, 3);
        FAIL() << "expected RankDeficiencyError";
    } catch (const RankDeficiencyError& e) {
        EXPECT_EQ(e.achieved_rank(), 2);
    }
    const PcaBasis b = compute_pca(u, f.mass, 2);
    EXPECT_THROW(linear_reconstruct(b, Vec::Zero(3)), DimensionError);
    EXPECT_THROW(linear_project(b, f.mass, Vec::Zero(5)), DimensionError);
}

TEST(LinearModel, ReconstructProjectIdentities) {
    Fixture f;
    const Mat u = random_matrix(f.mesh.dofs(), 6, 7);
    const PcaBasis b = compute_pca(u, f.mass, 4);
    EXPECT_EQ(linear_reconstruct(b, Vec::Zero(4)), Vec::Zero(f.mesh.dofs()));
    EXPECT_EQ(linear_project(b, f.mass, Vec::Zero(f.mesh.dofs())), Vec::Zero(4));

    const Vec q = random_matrix(4, 1, 8).col(0);
    EXPECT_EQ(linear_reconstruct(b, -q), -linear_reconstruct(b, q));
    EXPECT_LT((linear_project(b, f.mass, linear_reconstruct(b, q)) - q).norm(), 1e-10);

    // Random u splits into an in-span part and an M-orthogonal residual.
    const Vec w = random_matrix(f.mesh.dofs(), 1, 9).col(0);
    const Vec in_span = linear_reconstruct(b, linear_project(b, f.mass, w));
    const Vec residual = w - in_span;
    const Vec mb = b.B.transpose() * f.mass.diag.cwiseProduct(residual);
    EXPECT_LT(mb.norm(), 1e-10 * w.norm());
    EXPECT_LT((linear_project(b, f.mass, in_span) - linear_project(b, f.mass, w)).norm(), 1e-10 * w.norm());
}

TEST(Pca, BeatsRandomOrthonormalBases) {
    Fixture f;
    const Mat u = random_matrix(f.mesh.dofs(), 10, 10) * random_matrix(10, 10, 11).asDiagonal().toDenseMatrix();
    const Vec sqrt_m = f.mass.diag.cwiseSqrt();
    for (Index k = 1; k <= 5; ++k) {
        const double pca_err = projection_error(compute_pca(u, f.mass, k), f.mass, u);
        for (unsigned trial = 0; trial < 20; ++trial) {
            Eigen::HouseholderQR<Mat> qr(random_matrix(f.mesh.dofs(), k, 100 + trial));
            const Mat q = qr.householderQ() * Mat::Identity(f.mesh.dofs(), k);
            PcaBasis random_basis{sqrt_m.cwiseInverse().asDiagonal() * q, Vec::Ones(k)};
            EXPECT_LE(pca_err, projection_error(random_basis, f.mass, u) * (1 + 1e-12));
        }
    }
}

TEST(Pca, BasisRoundTrip) {
    Fixture f;
    const PcaBasis b = compute_pca(random_matrix(f.mesh.dofs(), 5, 12), f.mass, 3);
    const auto path = (std::filesystem::temp_directory_path() / "cvxrom_basis_test.bin").string();
    write_basis(b, path);
    const PcaBasis back = read_basis(path);
    EXPECT_EQ(back.B, b.B);
    EXPECT_EQ(back.singular_values, b.singular_values);
    EXPECT_THROW(read_snapshots(path), ParseError);
    std::filesystem::remove(path);
}
