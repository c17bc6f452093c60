#include "cvxrom/subspace.hpp"

#include <fstream>

#include <Eigen/SVD>

#include "cvxrom/binary_io.hpp"
#include "cvxrom/errors.hpp"

namespace cvxrom {

PcaBasis PcaBasis::truncated(Index r) const {
    if (r < 1 || r > rank()) throw InvalidArgument("cannot truncate a rank-" + std::to_string(rank()) + " basis to " + std::to_string(r));
    return {B.leftCols(r), singular_values.head(r)};
}

PcaBasis compute_pca(const Mat& snapshots, const LumpedMass& mass, Index k) {
    const Index n = snapshots.rows();
    const Index s = snapshots.cols();
    require_dims(mass.diag.size() == n, "mass and snapshot dimensions differ");
    if (k < 1 || k > std::min(n, s))
        throw InvalidArgument("k = " + std::to_string(k) + " exceeds min(N, S) = " + std::to_string(std::min(n, s)));

    const Vec sqrt_m = mass.diag.cwiseSqrt();
    const Mat weighted = sqrt_m.asDiagonal() * snapshots;
    Eigen::BDCSVD<Mat> svd(weighted, Eigen::ComputeThinU);
    const Vec& sv = svd.singularValues();

    const double tol = std::max(n, s) * std::numeric_limits<double>::epsilon() * (sv.size() ? sv[0] : 0.0);
    Index achieved = 0;
    while (achieved < sv.size() && sv[achieved] > tol) ++achieved;
    if (achieved < k)
        throw RankDeficiencyError("snapshot data has rank " + std::to_string(achieved) + " < requested k = " + std::to_string(k),
                                  static_cast<int>(achieved));

    PcaBasis basis;
    basis.singular_values = sv.head(k);
    basis.B = sqrt_m.cwiseInverse().asDiagonal() * svd.matrixU().leftCols(k);
    // Deterministic sign: the largest-magnitude entry of each mode is positive.
    for (Index c = 0; c < k; ++c) {
        Index i = 0;
        basis.B.col(c).cwiseAbs().maxCoeff(&i);
        if (basis.B(i, c) < 0.0) basis.B.col(c) *= -1.0;
    }
    return basis;
}

Vec linear_reconstruct(const PcaBasis& basis, const Vec& q) {
    require_dims(q.size() == basis.rank(), "latent vector length does not match basis rank");
    return basis.B * q;
}

Vec linear_project(const PcaBasis& basis, const LumpedMass& mass, const Vec& u) {
    require_dims(u.size() == basis.dofs() && mass.diag.size() == basis.dofs(), "displacement length does not match basis");
    return basis.B.transpose() * mass.diag.cwiseProduct(u);
}

double projection_error(const PcaBasis& basis, const LumpedMass& mass, const Mat& snapshots) {
    require_dims(snapshots.rows() == basis.dofs(), "snapshot length does not match basis");
    const Mat coeffs = basis.B.transpose() * mass.diag.asDiagonal() * snapshots;
    const Mat residual = snapshots - basis.B * coeffs;
    return (residual.array().square().colwise() * mass.diag.array()).sum();
}

void write_basis(const PcaBasis& basis, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    io::BinaryWriter w(out, "BASE");
    w.u64(static_cast<std::uint64_t>(basis.dofs()));
    w.u64(static_cast<std::uint64_t>(basis.rank()));
    w.vector(basis.singular_values);
    w.matrix(basis.B);
}

PcaBasis read_basis(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    io::BinaryReader r(in, "BASE");
    const auto n = static_cast<Index>(r.u64());
    const auto k = static_cast<Index>(r.u64());
    PcaBasis b;
    b.singular_values = r.vector();
    b.B = r.matrix();
    if (b.B.rows() != n || b.B.cols() != k || b.singular_values.size() != k) throw ParseError("basis header does not match data");
    return b;
}

} // namespace cvxrom
