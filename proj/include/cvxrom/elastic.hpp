#pragma once

#include <string>

#include <Eigen/Sparse>

#include "cvxrom/mesh.hpp"
#include "cvxrom/types.hpp"

namespace cvxrom {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat12 = Eigen::Matrix<double, 12, 12>;
using Mat9x12 = Eigen::Matrix<double, 9, 12>;
using SparseMat = Eigen::SparseMatrix<double>;

/// Isotropic material constants. Lamé parameters are derived from (E, nu).
struct Material {
    double youngs_modulus = 1e5;
    double poisson_ratio = 0.45;
    double mu = 0.0;
    double lambda = 0.0;
    std::string model = "stable_neohookean";

    /// Throws InvalidArgument unless E > 0 and 0 <= nu < 0.5.
    static Material from_young_poisson(double youngs_modulus, double poisson_ratio);
    /// Direct Lamé construction (mu > 0, lambda > 0); E and nu are back-computed.
    static Material from_lame(double mu, double lambda);

    /// J at which the volumetric term vanishes; makes F = I stress free.
    double alpha() const { return 1.0 + mu / lambda; }
    /// Energy density of the undeformed state, mu^2 / (2 lambda).
    double rest_energy_density() const { return mu * mu / (2.0 * lambda); }
};

// Stable Neo-Hookean:
//   psi(F) = mu/2 (tr(F^T F) - 3) + lambda/2 (det F - alpha)^2,  alpha = 1 + mu/lambda.
double energy_density(const Mat3& F, const Material& mat);
/// First Piola-Kirchhoff stress dpsi/dF.
Mat3 pk1_stress(const Mat3& F, const Material& mat);
/// d vec(P) / d vec(F), column-major vec. Optionally clamped to PSD.
Mat9 pk1_derivative(const Mat3& F, const Material& mat, bool project_psd);

/// d vec(F) / d x_e for the 12 vertex coordinates of one element.
Mat9x12 deformation_gradient_jacobian(const Mat3& rest_shape_inverse);

Mat3 deformation_gradient(const TetMesh& mesh, const Vec& u, int e);

/// Element energy vol_e * psi(F_e) and its derivatives with respect to the
/// element's 12 displacement dofs (vertex-major, xyz-minor).
double element_energy(const TetMesh& mesh, const Vec& u, int e, const Material& mat);
Vec12 element_gradient(const TetMesh& mesh, const Vec& u, int e, const Material& mat);
Mat12 element_hessian(const TetMesh& mesh, const Vec& u, int e, const Material& mat, bool project_psd);

/// Element energy and derivatives from the element's own 12 displacement dofs
/// (used when only a subset of the displacement field is available).
Mat3 deformation_gradient_local(const TetMesh& mesh, int e, const Vec12& ue);
double element_energy_local(const TetMesh& mesh, int e, const Vec12& ue, const Material& mat);
/// Energy, gradient and (optionally PSD-projected) Hessian in one pass; pointers may be null.
double element_derivatives_local(const TetMesh& mesh, int e, const Vec12& ue, const Material& mat, Vec12* grad,
                                 Mat12* hess, bool project_psd);

/// Sum over elements in index order of vol_e * psi(F_e(u)).
double total_energy(const TetMesh& mesh, const Vec& u, const Material& mat);
Vec total_gradient(const TetMesh& mesh, const Vec& u, const Material& mat);
/// Assembled N x N Hessian. project_psd clamps each element's dP/dF spectrum at 0.
SparseMat total_hessian(const TetMesh& mesh, const Vec& u, const Material& mat, bool project_psd = true);

/// Energy of the undeformed mesh (sum of vol_e * mu^2/(2 lambda)).
double rest_energy(const TetMesh& mesh, const Material& mat);

} // namespace cvxrom
