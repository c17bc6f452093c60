#include "cvxrom/elastic.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "cvxrom/errors.hpp"

namespace cvxrom {

namespace {

Mat3 hat(const Vec3& a) {
    Mat3 m;
    m << 0.0, -a.z(), a.y(),
         a.z(), 0.0, -a.x(),
        -a.y(), a.x(), 0.0;
    return m;
}

// dJ/dF as a column-major 9-vector (cofactor matrix).
Vec9 det_gradient(const Mat3& F) {
    Vec9 g;
    g.segment<3>(0) = F.col(1).cross(F.col(2));
    g.segment<3>(3) = F.col(2).cross(F.col(0));
    g.segment<3>(6) = F.col(0).cross(F.col(1));
    return g;
}

Mat9 det_hessian(const Mat3& F) {
    Mat9 h = Mat9::Zero();
    const Mat3 f0 = hat(F.col(0)), f1 = hat(F.col(1)), f2 = hat(F.col(2));
    h.block<3, 3>(0, 3) = -f2;
    h.block<3, 3>(0, 6) = f1;
    h.block<3, 3>(3, 0) = f2;
    h.block<3, 3>(3, 6) = -f0;
    h.block<3, 3>(6, 0) = -f1;
    h.block<3, 3>(6, 3) = f0;
    return h;
}

void check_displacement(const TetMesh& mesh, const Vec& u) {
    require_dims(u.size() == mesh.dofs(),
                 "displacement has length " + std::to_string(u.size()) + ", mesh has " + std::to_string(mesh.dofs()) + " dofs");
}

} // namespace

Material Material::from_young_poisson(double youngs_modulus, double poisson_ratio) {
    if (!(youngs_modulus > 0.0) || !std::isfinite(youngs_modulus)) throw InvalidArgument("Young's modulus must be positive");
    if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5)) throw InvalidArgument("Poisson ratio must lie in [0, 0.5)");
    Material m;
    m.youngs_modulus = youngs_modulus;
    m.poisson_ratio = poisson_ratio;
    m.mu = youngs_modulus / (2.0 * (1.0 + poisson_ratio));
    m.lambda = youngs_modulus * poisson_ratio / ((1.0 + poisson_ratio) * (1.0 - 2.0 * poisson_ratio));
    if (!(m.lambda > 0.0)) throw InvalidArgument("stable Neo-Hookean needs lambda > 0 (nu > 0)");
    return m;
}

Material Material::from_lame(double mu, double lambda) {
    if (!(mu > 0.0) || !(lambda > 0.0)) throw InvalidArgument("Lame parameters must be positive");
    Material m;
    m.mu = mu;
    m.lambda = lambda;
    m.youngs_modulus = mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu);
    m.poisson_ratio = lambda / (2.0 * (lambda + mu));
    return m;
}

double energy_density(const Mat3& F, const Material& mat) {
    const double ic = F.squaredNorm();
    const double j = F.determinant();
    const double d = j - mat.alpha();
    return 0.5 * mat.mu * (ic - 3.0) + 0.5 * mat.lambda * d * d;
}

Mat3 pk1_stress(const Mat3& F, const Material& mat) {
    const Vec9 gj = det_gradient(F);
    const double j = F.determinant();
    Mat3 p = mat.mu * F;
    p += mat.lambda * (j - mat.alpha()) * Eigen::Map<const Mat3>(gj.data());
    return p;
}

Mat9 pk1_derivative(const Mat3& F, const Material& mat, bool project_psd) {
    const Vec9 gj = det_gradient(F);
    const double j = F.determinant();
    Mat9 h = mat.mu * Mat9::Identity() + mat.lambda * gj * gj.transpose() +
             mat.lambda * (j - mat.alpha()) * det_hessian(F);
    if (project_psd) {
        Eigen::SelfAdjointEigenSolver<Mat9> eig(0.5 * (h + h.transpose()));
        Vec9 lam = eig.eigenvalues();
        if (lam.minCoeff() < 0.0) {
            lam = lam.cwiseMax(0.0);
            h = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
        }
    }
    return h;
}

Mat9x12 deformation_gradient_jacobian(const Mat3& dm_inv) {
    // F_ij = sum_k (x_{k+1,i} - x_{0,i}) Dinv_kj ; vec index i + 3j ; dof index 3a + i.
    Mat9x12 d = Mat9x12::Zero();
    for (int j = 0; j < 3; ++j) {
        const double s = dm_inv(0, j) + dm_inv(1, j) + dm_inv(2, j);
        for (int i = 0; i < 3; ++i) {
            d(i + 3 * j, i) = -s;
            for (int a = 1; a < 4; ++a) d(i + 3 * j, 3 * a + i) = dm_inv(a - 1, j);
        }
    }
    return d;
}

Mat3 deformation_gradient(const TetMesh& mesh, const Vec& u, int e) {
    const Tet& t = mesh.tet(e);
    const Vec& x0 = mesh.rest_positions();
    Mat3 ds;
    const Vec3 p0 = x0.segment<3>(3 * t[0]) + u.segment<3>(3 * t[0]);
    for (int a = 1; a < 4; ++a) ds.col(a - 1) = x0.segment<3>(3 * t[a]) + u.segment<3>(3 * t[a]) - p0;
    return ds * mesh.rest_shape_inverse(e);
}

double element_energy(const TetMesh& mesh, const Vec& u, int e, const Material& mat) {
    return mesh.rest_volume(e) * energy_density(deformation_gradient(mesh, u, e), mat);
}

Vec12 element_gradient(const TetMesh& mesh, const Vec& u, int e, const Material& mat) {
    const Mat3 p = pk1_stress(deformation_gradient(mesh, u, e), mat);
    const Mat9x12 dfdx = deformation_gradient_jacobian(mesh.rest_shape_inverse(e));
    return mesh.rest_volume(e) * dfdx.transpose() * Eigen::Map<const Vec9>(p.data());
}

Mat12 element_hessian(const TetMesh& mesh, const Vec& u, int e, const Material& mat, bool project_psd) {
    const Mat9 dpdf = pk1_derivative(deformation_gradient(mesh, u, e), mat, project_psd);
    const Mat9x12 dfdx = deformation_gradient_jacobian(mesh.rest_shape_inverse(e));
    return mesh.rest_volume(e) * dfdx.transpose() * dpdf * dfdx;
}

Mat3 deformation_gradient_local(const TetMesh& mesh, int e, const Vec12& ue) {
    const Tet& t = mesh.tet(e);
    const Vec& x0 = mesh.rest_positions();
    Mat3 ds;
    const Vec3 p0 = x0.segment<3>(3 * t[0]) + ue.segment<3>(0);
    for (int a = 1; a < 4; ++a) ds.col(a - 1) = x0.segment<3>(3 * t[a]) + ue.segment<3>(3 * a) - p0;
    return ds * mesh.rest_shape_inverse(e);
}

double element_energy_local(const TetMesh& mesh, int e, const Vec12& ue, const Material& mat) {
    return mesh.rest_volume(e) * energy_density(deformation_gradient_local(mesh, e, ue), mat);
}

double element_derivatives_local(const TetMesh& mesh, int e, const Vec12& ue, const Material& mat, Vec12* grad,
                                 Mat12* hess, bool project_psd) {
    const Mat3 F = deformation_gradient_local(mesh, e, ue);
    const double vol = mesh.rest_volume(e);
    if (grad || hess) {
        const Mat9x12 dfdx = deformation_gradient_jacobian(mesh.rest_shape_inverse(e));
        if (grad) {
            const Mat3 P = pk1_stress(F, mat);
            *grad = vol * dfdx.transpose() * Eigen::Map<const Vec9>(P.data());
        }
        if (hess) *hess = vol * dfdx.transpose() * pk1_derivative(F, mat, project_psd) * dfdx;
    }
    return vol * energy_density(F, mat);
}

double total_energy(const TetMesh& mesh, const Vec& u, const Material& mat) {
    check_displacement(mesh, u);
    double sum = 0.0;
    for (int e = 0; e < mesh.num_elements(); ++e) sum += element_energy(mesh, u, e, mat);
    return sum;
}

Vec total_gradient(const TetMesh& mesh, const Vec& u, const Material& mat) {
    check_displacement(mesh, u);
    Vec g = Vec::Zero(mesh.dofs());
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const Vec12 ge = element_gradient(mesh, u, e, mat);
        const Tet& t = mesh.tet(e);
        for (int a = 0; a < 4; ++a) g.segment<3>(3 * t[a]) += ge.segment<3>(3 * a);
    }
    return g;
}

SparseMat total_hessian(const TetMesh& mesh, const Vec& u, const Material& mat, bool project_psd) {
    check_displacement(mesh, u);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(mesh.num_elements()) * 144);
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const Mat12 he = element_hessian(mesh, u, e, mat, project_psd);
        const Tet& t = mesh.tet(e);
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j)
                        trips.emplace_back(3 * t[a] + i, 3 * t[b] + j, he(3 * a + i, 3 * b + j));
    }
    SparseMat h(mesh.dofs(), mesh.dofs());
    h.setFromTriplets(trips.begin(), trips.end());
    return h;
}

double rest_energy(const TetMesh& mesh, const Material& mat) {
    return mesh.total_volume() * mat.rest_energy_density();
}

} // namespace cvxrom
