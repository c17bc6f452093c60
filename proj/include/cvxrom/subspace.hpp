#pragma once

#include <string>

#include "cvxrom/fullsolver.hpp"
#include "cvxrom/mesh.hpp"

namespace cvxrom {

/// Mass-orthonormal linear basis, B^T M B = I, columns by descending singular value.
/// Displacements are taken about the rest state (no mean is subtracted).
struct PcaBasis {
    Mat B;                 ///< N x k
    Vec singular_values;   ///< length k, of M^{1/2} U

    Index dofs() const noexcept { return B.rows(); }
    Index rank() const noexcept { return B.cols(); }
    /// First r columns as a new basis.
    PcaBasis truncated(Index r) const;
};

/// B = M^{-1/2} Uhat_k from the thin SVD of M^{1/2} U.
/// Throws InvalidArgument if k > min(N, S), RankDeficiencyError if the data has rank < k.
PcaBasis compute_pca(const Mat& snapshots, const LumpedMass& mass, Index k);
inline PcaBasis compute_pca(const SnapshotSet& snapshots, const LumpedMass& mass, Index k) {
    return compute_pca(snapshots.U, mass, k);
}

/// u = B q
Vec linear_reconstruct(const PcaBasis& basis, const Vec& q);
/// q = B^T M u
Vec linear_project(const PcaBasis& basis, const LumpedMass& mass, const Vec& u);

/// Sum over snapshot columns of |u - B B^T M u|_M^2.
double projection_error(const PcaBasis& basis, const LumpedMass& mass, const Mat& snapshots);

void write_basis(const PcaBasis& basis, const std::string& path);
PcaBasis read_basis(const std::string& path);

} // namespace cvxrom
