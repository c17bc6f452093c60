#include "cvxrom/collision.hpp"

#include <cmath>

#include "cvxrom/errors.hpp"

namespace cvxrom {

PlaneSdf::PlaneSdf(const Vec3& point, const Vec3& normal) : point_(point) {
    if (!point.allFinite() || !normal.allFinite() || normal.norm() == 0.0) throw InvalidArgument("plane needs a finite point and a non-zero normal");
    normal_ = normal.normalized();
}

nlohmann::json PlaneSdf::to_json() const {
    return {{"type", "plane"}, {"point", {point_.x(), point_.y(), point_.z()}}, {"normal", {normal_.x(), normal_.y(), normal_.z()}}};
}

SphereSdf::SphereSdf(const Vec3& center, double radius) : center_(center), radius_(radius) {
    if (!center.allFinite() || !(radius > 0.0) || !std::isfinite(radius)) throw InvalidArgument("sphere needs a finite center and positive radius");
}

Vec3 SphereSdf::gradient(const Vec3& x) const {
    const Vec3 d = x - center_;
    const double n = d.norm();
    return n > 0.0 ? Vec3(d / n) : Vec3::UnitY();
}

nlohmann::json SphereSdf::to_json() const {
    return {{"type", "sphere"}, {"center", {center_.x(), center_.y(), center_.z()}}, {"radius", radius_}};
}

HeightfieldSdf::HeightfieldSdf(Mat heights, double x0, double z0, double dx, double dz)
    : heights_(std::move(heights)), x0_(x0), z0_(z0), dx_(dx), dz_(dz) {
    if (heights_.rows() < 2 || heights_.cols() < 2) throw InvalidArgument("heightfield needs at least 2x2 samples");
    if (!(dx > 0.0) || !(dz > 0.0)) throw InvalidArgument("heightfield spacing must be positive");
    if (!heights_.allFinite()) throw InvalidArgument("heightfield has non-finite samples");
}

void HeightfieldSdf::plane(double x, double z, double& h, double& hx, double& hz) const {
    const double fx = (x - x0_) / dx_;
    const double fz = (z - z0_) / dz_;
    const Index i = std::clamp<Index>(static_cast<Index>(std::floor(fx)), 0, heights_.rows() - 2);
    const Index j = std::clamp<Index>(static_cast<Index>(std::floor(fz)), 0, heights_.cols() - 2);
    const double s = fx - static_cast<double>(i);
    const double t = fz - static_cast<double>(j);
    const double h00 = heights_(i, j), h10 = heights_(i + 1, j), h01 = heights_(i, j + 1), h11 = heights_(i + 1, j + 1);
    // Cell split along the (0,0)-(1,1) diagonal.
    double a, b;
    if (s >= t) {
        a = h10 - h00;
        b = h11 - h10;
    } else {
        a = h11 - h01;
        b = h01 - h00;
    }
    h = h00 + a * s + b * t;
    hx = a / dx_;
    hz = b / dz_;
}

double HeightfieldSdf::distance(const Vec3& x) const {
    double h, hx, hz;
    plane(x.x(), x.z(), h, hx, hz);
    return (x.y() - h) / std::sqrt(1.0 + hx * hx + hz * hz);
}

Vec3 HeightfieldSdf::gradient(const Vec3& x) const {
    double h, hx, hz;
    plane(x.x(), x.z(), h, hx, hz);
    return Vec3(-hx, 1.0, -hz).normalized();
}

nlohmann::json HeightfieldSdf::to_json() const {
    std::vector<std::vector<double>> rows;
    for (Index i = 0; i < heights_.rows(); ++i) {
        rows.emplace_back();
        for (Index j = 0; j < heights_.cols(); ++j) rows.back().push_back(heights_(i, j));
    }
    return {{"type", "heightfield"}, {"heights", rows}, {"x0", x0_}, {"z0", z0_}, {"dx", dx_}, {"dz", dz_}};
}

namespace {

Vec3 vec3(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3) throw ParseError(std::string("collider needs a 3-vector '") + key + "'");
    return {j[key][0].get<double>(), j[key][1].get<double>(), j[key][2].get<double>()};
}

} // namespace

SdfCollider SdfCollider::from_json(const nlohmann::json& j) {
    SdfCollider c;
    try {
        const std::string type = j.at("type").get<std::string>();
        if (j.contains("stiffness")) c.stiffness = j["stiffness"].get<double>();
        if (type == "plane") {
            c.sdf = std::make_shared<PlaneSdf>(vec3(j, "point"), vec3(j, "normal"));
        } else if (type == "sphere") {
            c.sdf = std::make_shared<SphereSdf>(vec3(j, "center"), j.at("radius").get<double>());
        } else if (type == "heightfield") {
            const auto& rows = j.at("heights");
            if (!rows.is_array() || rows.empty()) throw ParseError("heightfield needs a non-empty 'heights' array");
            Mat h(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
            for (Index i = 0; i < h.rows(); ++i) {
                if (rows[static_cast<std::size_t>(i)].size() != static_cast<std::size_t>(h.cols())) throw ParseError("ragged heightfield rows");
                for (Index k = 0; k < h.cols(); ++k) h(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
            }
            c.sdf = std::make_shared<HeightfieldSdf>(std::move(h), j.value("x0", 0.0), j.value("z0", 0.0), j.at("dx").get<double>(),
                                                     j.at("dz").get<double>());
        } else {
            throw ParseError("unknown collider type '" + type + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed collider: ") + e.what());
    }
    if (!(c.stiffness >= 0.0)) throw InvalidArgument("collider stiffness must be non-negative");
    return c;
}

nlohmann::json SdfCollider::to_json() const {
    nlohmann::json j = sdf ? sdf->to_json() : nlohmann::json::object();
    j["stiffness"] = stiffness;
    return j;
}

CollisionResult collide_sdf(const Vec& u, const SdfCollider& collider, const TetMesh& mesh) {
    require_dims(u.size() == mesh.dofs(), "displacement length does not match mesh");
    if (!collider.sdf) throw InvalidArgument("collider has no SDF");
    CollisionResult r;
    r.gradient = Vec::Zero(u.size());
    const Vec& x0 = mesh.rest_positions();
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        const Vec3 x = x0.segment<3>(3 * v) + u.segment<3>(3 * v);
        const double phi = collider.sdf->distance(x);
        if (!std::isfinite(phi)) throw Error("SDF returned a non-finite distance at vertex " + std::to_string(v));
        if (phi >= 0.0) continue;
        r.energy += 0.5 * collider.stiffness * phi * phi;
        r.gradient.segment<3>(3 * v) += collider.stiffness * phi * collider.sdf->gradient(x);
        r.contacts.push_back(v);
    }
    return r;
}

} // namespace cvxrom
