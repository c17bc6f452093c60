#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvxrom/mesh.hpp"

namespace cvxrom {

/// Signed distance: negative inside the obstacle.
class Sdf {
public:
    virtual ~Sdf() = default;
    virtual double distance(const Vec3& x) const = 0;
    /// Gradient of distance(); unit length wherever the field is a true distance.
    virtual Vec3 gradient(const Vec3& x) const = 0;
    virtual nlohmann::json to_json() const = 0;
};

/// Half-space below the plane through `point` with outward `normal`.
class PlaneSdf final : public Sdf {
public:
    PlaneSdf(const Vec3& point, const Vec3& normal);
    double distance(const Vec3& x) const override { return normal_.dot(x - point_); }
    Vec3 gradient(const Vec3&) const override { return normal_; }
    nlohmann::json to_json() const override;

private:
    Vec3 point_;
    Vec3 normal_;
};

/// Solid ball.
class SphereSdf final : public Sdf {
public:
    SphereSdf(const Vec3& center, double radius);
    double distance(const Vec3& x) const override { return (x - center_).norm() - radius_; }
    /// At the exact center an arbitrary unit vector (+y) is returned.
    Vec3 gradient(const Vec3& x) const override;
    nlohmann::json to_json() const override;

private:
    Vec3 center_;
    double radius_;
};

/// Terrain y = h(x, z) sampled on a regular grid and interpolated linearly on
/// two triangles per cell. The distance is measured to the plane of the
/// triangle below/above the query point, so it is exact within each triangle
/// column and its gradient is that triangle's unit normal. Queries outside the
/// grid use the nearest border cell.
class HeightfieldSdf final : public Sdf {
public:
    /// heights(i, j) is the height at (x0 + i*dx, z0 + j*dz).
    HeightfieldSdf(Mat heights, double x0, double z0, double dx, double dz);
    double distance(const Vec3& x) const override;
    Vec3 gradient(const Vec3& x) const override;
    nlohmann::json to_json() const override;

private:
    /// Height plane (h, dh/dx, dh/dz) of the triangle containing (x, z).
    void plane(double x, double z, double& h, double& hx, double& hz) const;
    Mat heights_;
    double x0_, z0_, dx_, dz_;
};

struct SdfCollider {
    std::shared_ptr<const Sdf> sdf;
    double stiffness = 1e4; ///< N/m

    /// Builds a collider from {"type": "plane"|"sphere"|"heightfield", ...}.
    static SdfCollider from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct CollisionResult {
    double energy = 0.0;
    Vec gradient;               ///< length N, d energy / d u
    std::vector<int> contacts;  ///< penetrating vertices
};

/// Penalty (stiffness/2) sum_v max(0, -phi(x_v))^2 with x = rest + u.
CollisionResult collide_sdf(const Vec& u, const SdfCollider& collider, const TetMesh& mesh);

} // namespace cvxrom
