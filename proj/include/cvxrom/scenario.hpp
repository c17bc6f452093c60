#pragma once

#include <string>
#include <vector>

#include "cvxrom/mesh.hpp"
#include "cvxrom/types.hpp"

namespace cvxrom {

/// Picks a set of vertices of a mesh. Text forms:
///   all | x <= v | y >= v | ... | vertex i [j ...]
struct VertexSelector {
    enum class Kind { all, at_most, at_least, vertices };
    Kind kind = Kind::all;
    int axis = 0;
    double value = 0.0;
    std::vector<int> ids;

    /// Plane selectors accept a tolerance of 1e-9 times the mesh extent.
    std::vector<int> resolve(const TetMesh& mesh) const;
    std::string to_string() const;

    /// Parses tokens[pos...] and advances pos past the selector.
    static VertexSelector parse(const std::vector<std::string>& tokens, std::size_t& pos);
};

/// A piecewise-constant force, applied to every selected vertex while
/// t_begin <= t < t_end.
struct ForceEntry {
    double t_begin = 0.0;
    double t_end = 0.0;
    VertexSelector selector;
    Vec3 force = Vec3::Zero(); ///< Newtons per vertex
};

/// Scripted loading plus the Dirichlet selectors that go with it.
///
/// File format (one directive per line, '#' comments):
///   name <id>
///   gravity gx gy gz
///   fix <selector>
///   force t0 t1 <selector> fx fy fz
struct ForceScenario {
    std::string name = "unnamed";
    Vec3 gravity = Vec3::Zero();
    std::vector<ForceEntry> schedule;
    std::vector<VertexSelector> fixed;

    /// Checks selectors against the mesh and that intervals sharing a selector do not overlap.
    void validate(const TetMesh& mesh) const;
    /// Total external force vector at time t (gravity uses lumped masses).
    Vec external_force(const TetMesh& mesh, const Vec& mass_diag, double t) const;
    BoundaryCondition boundary(const TetMesh& mesh) const;
    std::string to_text() const;
};

ForceScenario parse_scenario(const std::string& text, const std::string& origin = "<scenario>");
ForceScenario load_scenario(const std::string& path);

/// Parses a compact force spec "<selector>:fx,fy,fz", e.g. "y>=0.999:0,-40,0".
/// Returns the selector and per-vertex force.
ForceEntry parse_force_spec(const std::string& spec);

} // namespace cvxrom
