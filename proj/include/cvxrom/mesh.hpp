#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cvxrom/types.hpp"

namespace cvxrom {

using Tet = std::array<int, 4>;
using Face = std::array<int, 3>;

/// Tetrahedral rest geometry with per-element precomputed rest-shape inverses
/// and volumes. Immutable after construction.
///
/// Construction validates indices, repairs inverted elements by swapping the
/// last two vertices and rejects elements with (numerically) zero volume.
class TetMesh {
public:
    TetMesh() = default;
    TetMesh(Vec rest_positions, std::vector<Tet> tets, double density);

    int num_vertices() const noexcept { return static_cast<int>(rest_positions_.size() / 3); }
    int num_elements() const noexcept { return static_cast<int>(tets_.size()); }
    Index dofs() const noexcept { return rest_positions_.size(); }

    const Vec& rest_positions() const noexcept { return rest_positions_; }
    const std::vector<Tet>& tets() const noexcept { return tets_; }
    const Tet& tet(int e) const { return tets_[static_cast<std::size_t>(e)]; }
    const Mat3& rest_shape_inverse(int e) const { return dm_inv_[static_cast<std::size_t>(e)]; }
    double rest_volume(int e) const { return volume_[static_cast<std::size_t>(e)]; }
    double density() const noexcept { return density_; }

    Vec3 rest_vertex(int v) const { return rest_positions_.segment<3>(3 * v); }
    double total_volume() const;
    /// Axis-aligned bounding box of the rest shape: (min, max).
    std::pair<Vec3, Vec3> bounds() const;
    /// Number of elements whose orientation was repaired at construction.
    int flipped_elements() const noexcept { return flipped_; }

    /// FNV-1a over positions and connectivity; identifies a mesh in checkpoints.
    std::uint64_t hash() const;

private:
    Vec rest_positions_;
    std::vector<Tet> tets_;
    std::vector<Mat3> dm_inv_;
    std::vector<double> volume_;
    double density_ = 0.0;
    int flipped_ = 0;
};

/// Rest edge matrix [x1-x0, x2-x0, x3-x0] of element e evaluated at positions x.
Mat3 edge_matrix(const TetMesh& mesh, const Vec& x, int e);

enum class MeshFormat { node_ele, msh, builtin, native };

/// Picks a format from the path: "*.msh" -> msh, "*.cvxm" -> native,
/// "tet" / "cube5" / "bar:..." -> builtin, everything else -> node_ele.
MeshFormat detect_mesh_format(const std::string& path);

/// Loads a mesh. node_ele accepts "stem", "stem.node", "stem.ele" (a file
/// pair) or a single text file holding both sections. Builtin specs are
/// "tet", "cube5" and "bar:NXxNYxNZ:DX,DY,DZ".
TetMesh load_mesh(const std::string& path, MeshFormat format, double density);
TetMesh load_mesh(const std::string& path, double density);

/// Writes stem.node and stem.ele (plain count-prefixed text, 0-based indices).
void write_node_ele(const TetMesh& mesh, const std::string& stem);
void write_native_mesh(const TetMesh& mesh, const std::string& path);

/// Regular grid with each cell split into 6 tetrahedra around the cell
/// diagonal. Vertex (i, j, k) has index i + (nx+1)*(j + (ny+1)*k).
TetMesh make_bar_mesh(int nx, int ny, int nz, const Vec3& dims, double density = 1000.0);
TetMesh make_single_tet(double density = 1000.0);
/// Unit cube decomposed into 5 tetrahedra (one central, four corners).
TetMesh make_cube5(double density = 1000.0);

/// Boundary triangles (faces referenced by exactly one element), oriented outward.
std::vector<Face> boundary_faces(const TetMesh& mesh);

struct LumpedMass {
    Vec diag; ///< length N, vertex mass replicated over its three coordinates

    double total() const { return diag.sum() / 3.0; }
    double vertex_mass(int v) const { return diag[3 * v]; }
};

/// Uniform 1/4-per-vertex lumping. Throws InvalidArgument for non-positive density.
LumpedMass lump_mass(const TetMesh& mesh);

/// Dirichlet bookkeeping: fixed vertices with optional prescribed displacement
/// (default zero).
struct BoundaryCondition {
    std::vector<int> fixed_vertices;
    std::map<int, Vec3> prescribed_displacement;

    bool empty() const noexcept { return fixed_vertices.empty(); }
    void validate(const TetMesh& mesh) const;
    /// Per-dof mask, true where the dof is fixed.
    std::vector<bool> fixed_dof_mask(Index dofs) const;
    /// Displacement vector holding prescribed values on fixed dofs, zero elsewhere.
    Vec prescribed(Index dofs) const;
};

} // namespace cvxrom
