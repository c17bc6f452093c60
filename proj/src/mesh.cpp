#include "cvxrom/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <Eigen/LU>

#include "cvxrom/binary_io.hpp"
#include "cvxrom/errors.hpp"

namespace cvxrom {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Whitespace tokenizer over a text file that drops '#' comments and blank lines.
class TokenStream {
public:
    explicit TokenStream(const std::string& path) : path_(path) {
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open " + path);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            std::istringstream ls(line);
            std::vector<std::string> tokens;
            for (std::string t; ls >> t;) tokens.push_back(std::move(t));
            if (!tokens.empty()) lines_.push_back({line_no, std::move(tokens)});
        }
    }

    bool done() const { return pos_ >= lines_.size(); }
    const std::vector<std::string>& next() {
        if (done()) throw ParseError(path_ + ": unexpected end of file");
        current_line_ = lines_[pos_].first;
        return lines_[pos_++].second;
    }
    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(path_ + ":" + std::to_string(current_line_) + ": " + msg);
    }

    double to_double(const std::string& s) const {
        double v{};
        const char* end = s.data() + s.size();
        auto [p, ec] = std::from_chars(s.data(), end, v);
        if (ec != std::errc() || p != end || !std::isfinite(v)) fail("bad number '" + s + "'");
        return v;
    }
    long to_int(const std::string& s) const {
        long v{};
        const char* end = s.data() + s.size();
        auto [p, ec] = std::from_chars(s.data(), end, v);
        if (ec != std::errc() || p != end) fail("bad integer '" + s + "'");
        return v;
    }

private:
    std::string path_;
    std::vector<std::pair<int, std::vector<std::string>>> lines_;
    std::size_t pos_ = 0;
    int current_line_ = 0;
};

// Reads a vertex section. Plain form: "n" then "x y z" lines. TetGen form:
// "n 3 nattr nbm" then "idx x y z ...". Returns the index base detected for
// TetGen files (0 or 1), or 0 for plain files.
int read_nodes(TokenStream& ts, Vec& positions) {
    const auto& head = ts.next();
    const long n = ts.to_int(head[0]);
    if (n <= 0) ts.fail("vertex count must be positive");
    const bool tetgen = head.size() > 1;
    positions.resize(3 * n);
    int base = 0;
    for (long v = 0; v < n; ++v) {
        const auto& t = ts.next();
        const std::size_t off = tetgen ? 1 : 0;
        if (t.size() < off + 3) ts.fail("expected x y z");
        if (tetgen) {
            const long idx = ts.to_int(t[0]);
            if (v == 0) base = static_cast<int>(idx);
            if (idx != v + base) ts.fail("non-sequential vertex index");
        }
        for (int c = 0; c < 3; ++c) positions[3 * v + c] = ts.to_double(t[off + c]);
    }
    return base;
}

std::vector<Tet> read_elements(TokenStream& ts, int base) {
    const auto& head = ts.next();
    const long m = ts.to_int(head[0]);
    if (m <= 0) ts.fail("element count must be positive");
    const bool tetgen = head.size() > 1;
    std::vector<Tet> tets(static_cast<std::size_t>(m));
    for (auto& tet : tets) {
        const auto& t = ts.next();
        const std::size_t off = tetgen ? 1 : 0;
        if (t.size() < off + 4) ts.fail("expected 4 vertex indices");
        for (int c = 0; c < 4; ++c) tet[c] = static_cast<int>(ts.to_int(t[off + c]) - (tetgen ? base : 0));
    }
    return tets;
}

TetMesh load_node_ele(const std::string& path, double density) {
    namespace fs = std::filesystem;
    std::string stem = path;
    if (ends_with(stem, ".node") || ends_with(stem, ".ele")) stem = stem.substr(0, stem.rfind('.'));
    if (fs::exists(stem + ".node") && fs::exists(stem + ".ele")) {
        TokenStream nodes(stem + ".node");
        Vec positions;
        const int base = read_nodes(nodes, positions);
        TokenStream eles(stem + ".ele");
        auto tets = read_elements(eles, base);
        return TetMesh(std::move(positions), std::move(tets), density);
    }
    if (!fs::exists(path)) throw ParseError("mesh file not found: " + path);
    TokenStream ts(path);
    Vec positions;
    const int base = read_nodes(ts, positions);
    auto tets = read_elements(ts, base);
    return TetMesh(std::move(positions), std::move(tets), density);
}

// Gmsh 2.2 ASCII; only tetrahedra (type 4) are kept.
TetMesh load_msh(const std::string& path, double density) {
    TokenStream ts(path);
    std::map<long, int> node_ids;
    std::vector<double> coords;
    std::vector<Tet> tets;
    bool have_nodes = false;
    while (!ts.done()) {
        const auto& section = ts.next();
        if (section[0] == "$MeshFormat") {
            const auto& t = ts.next();
            if (t.empty() || t[0].rfind("2", 0) != 0) ts.fail("only msh format 2.x is supported");
            if (t.size() > 1 && t[1] != "0") ts.fail("binary msh is not supported");
            if (ts.next()[0] != "$EndMeshFormat") ts.fail("expected $EndMeshFormat");
        } else if (section[0] == "$Nodes") {
            const long n = ts.to_int(ts.next()[0]);
            for (long i = 0; i < n; ++i) {
                const auto& t = ts.next();
                if (t.size() < 4) ts.fail("bad node line");
                node_ids[ts.to_int(t[0])] = static_cast<int>(i);
                for (int c = 1; c <= 3; ++c) coords.push_back(ts.to_double(t[c]));
            }
            if (ts.next()[0] != "$EndNodes") ts.fail("expected $EndNodes");
            have_nodes = true;
        } else if (section[0] == "$Elements") {
            if (!have_nodes) ts.fail("$Elements before $Nodes");
            const long m = ts.to_int(ts.next()[0]);
            for (long i = 0; i < m; ++i) {
                const auto& t = ts.next();
                if (t.size() < 3) ts.fail("bad element line");
                if (ts.to_int(t[1]) != 4) continue;
                const std::size_t off = 3 + static_cast<std::size_t>(ts.to_int(t[2]));
                if (t.size() < off + 4) ts.fail("bad tetrahedron line");
                Tet tet{};
                for (int c = 0; c < 4; ++c) {
                    auto it = node_ids.find(ts.to_int(t[off + c]));
                    if (it == node_ids.end()) ts.fail("unknown node id " + t[off + c]);
                    tet[c] = it->second;
                }
                tets.push_back(tet);
            }
            if (ts.next()[0] != "$EndElements") ts.fail("expected $EndElements");
        } else {
            // Skip unknown sections.
            const std::string end = "$End" + section[0].substr(1);
            while (ts.next()[0] != end) {
            }
        }
    }
    if (tets.empty()) throw ParseError(path + ": no tetrahedra found");
    return TetMesh(Eigen::Map<Vec>(coords.data(), static_cast<Index>(coords.size())), std::move(tets), density);
}

TetMesh load_builtin(const std::string& spec, double density) {
    if (spec == "tet") return make_single_tet(density);
    if (spec == "cube5") return make_cube5(density);
    if (spec.rfind("bar:", 0) == 0) {
        int nx = 0, ny = 0, nz = 0;
        double dx = 0, dy = 0, dz = 0;
        char x1 = 0, x2 = 0, colon = 0, c1 = 0, c2 = 0;
        std::istringstream in(spec.substr(4));
        in >> nx >> x1 >> ny >> x2 >> nz >> colon >> dx >> c1 >> dy >> c2 >> dz;
        if (!in || x1 != 'x' || x2 != 'x' || colon != ':' || c1 != ',' || c2 != ',')
            throw ParseError("bad builtin bar spec '" + spec + "' (expected bar:NXxNYxNZ:DX,DY,DZ)");
        return make_bar_mesh(nx, ny, nz, Vec3(dx, dy, dz), density);
    }
    throw ParseError("unknown builtin mesh '" + spec + "'");
}

TetMesh load_native(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    io::BinaryReader r(in, "MESH");
    const double density = r.f64();
    Vec positions = r.vector();
    const auto flat = r.indices();
    if (flat.size() % 4 != 0) throw ParseError("corrupt connectivity");
    std::vector<Tet> tets(flat.size() / 4);
    for (std::size_t e = 0; e < tets.size(); ++e)
        for (int c = 0; c < 4; ++c) tets[e][c] = flat[4 * e + c];
    return TetMesh(std::move(positions), std::move(tets), density);
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

} // namespace

TetMesh::TetMesh(Vec rest_positions, std::vector<Tet> tets, double density)
    : rest_positions_(std::move(rest_positions)), tets_(std::move(tets)), density_(density) {
    if (rest_positions_.size() == 0 || rest_positions_.size() % 3 != 0)
        throw InvalidArgument("position vector length must be a positive multiple of 3");
    if (!rest_positions_.allFinite()) throw InvalidArgument("non-finite rest position");
    if (!std::isfinite(density_) || density_ < 0.0) throw InvalidArgument("density must be finite and non-negative");
    if (tets_.empty()) throw InvalidArgument("mesh has no elements");
    const int n = num_vertices();

    Vec3 lo = rest_positions_.reshaped(3, n).rowwise().minCoeff();
    Vec3 hi = rest_positions_.reshaped(3, n).rowwise().maxCoeff();
    const double scale = std::max((hi - lo).maxCoeff(), 1e-300);

    dm_inv_.resize(tets_.size());
    volume_.resize(tets_.size());
    for (std::size_t e = 0; e < tets_.size(); ++e) {
        auto& t = tets_[e];
        for (int a = 0; a < 4; ++a) {
            if (t[a] < 0 || t[a] >= n)
                throw InvalidArgument("element " + std::to_string(e) + " references vertex " +
                                      std::to_string(t[a]) + " outside [0, " + std::to_string(n) + ")");
            for (int b = 0; b < a; ++b)
                if (t[a] == t[b]) throw InvalidArgument("element " + std::to_string(e) + " repeats a vertex");
        }
        Mat3 dm = edge_matrix(*this, rest_positions_, static_cast<int>(e));
        double det = dm.determinant();
        if (std::abs(det) <= 1e-12 * scale * scale * scale)
            throw DegenerateElementError(static_cast<int>(e), "element " + std::to_string(e) + " has zero volume");
        if (det < 0) {
            std::swap(t[2], t[3]);
            ++flipped_;
            dm = edge_matrix(*this, rest_positions_, static_cast<int>(e));
            det = dm.determinant();
        }
        dm_inv_[e] = dm.inverse();
        volume_[e] = det / 6.0;
    }
}

double TetMesh::total_volume() const {
    double v = 0.0;
    for (double ve : volume_) v += ve;
    return v;
}

std::pair<Vec3, Vec3> TetMesh::bounds() const {
    const auto pts = rest_positions_.reshaped(3, num_vertices());
    return {pts.rowwise().minCoeff(), pts.rowwise().maxCoeff()};
}

std::uint64_t TetMesh::hash() const {
    std::uint64_t h = io::fnv1a(rest_positions_.data(), sizeof(double) * static_cast<std::size_t>(rest_positions_.size()));
    return io::fnv1a(tets_.data(), sizeof(Tet) * tets_.size(), h);
}

Mat3 edge_matrix(const TetMesh& mesh, const Vec& x, int e) {
    const Tet& t = mesh.tet(e);
    const Vec3 x0 = x.segment<3>(3 * t[0]);
    Mat3 d;
    d.col(0) = x.segment<3>(3 * t[1]) - x0;
    d.col(1) = x.segment<3>(3 * t[2]) - x0;
    d.col(2) = x.segment<3>(3 * t[3]) - x0;
    return d;
}

MeshFormat detect_mesh_format(const std::string& path) {
    if (ends_with(path, ".msh")) return MeshFormat::msh;
    if (ends_with(path, ".cvxm")) return MeshFormat::native;
    if (path == "tet" || path == "cube5" || path.rfind("bar:", 0) == 0) return MeshFormat::builtin;
    return MeshFormat::node_ele;
}

TetMesh load_mesh(const std::string& path, MeshFormat format, double density) {
    switch (format) {
    case MeshFormat::node_ele: return load_node_ele(path, density);
    case MeshFormat::msh: return load_msh(path, density);
    case MeshFormat::builtin: return load_builtin(path, density);
    case MeshFormat::native: {
        TetMesh m = load_native(path);
        if (density > 0.0 && density != m.density()) return TetMesh(m.rest_positions(), m.tets(), density);
        return m;
    }
    }
    throw InvalidArgument("unknown mesh format");
}

TetMesh load_mesh(const std::string& path, double density) {
    return load_mesh(path, detect_mesh_format(path), density);
}

void write_node_ele(const TetMesh& mesh, const std::string& stem) {
    std::ofstream node(stem + ".node");
    if (!node) throw Error("cannot write " + stem + ".node");
    node << mesh.num_vertices() << '\n';
    const Vec& x = mesh.rest_positions();
    for (int v = 0; v < mesh.num_vertices(); ++v)
        node << format_double(x[3 * v]) << ' ' << format_double(x[3 * v + 1]) << ' ' << format_double(x[3 * v + 2]) << '\n';
    std::ofstream ele(stem + ".ele");
    if (!ele) throw Error("cannot write " + stem + ".ele");
    ele << mesh.num_elements() << '\n';
    for (const Tet& t : mesh.tets()) ele << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
}

void write_native_mesh(const TetMesh& mesh, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    io::BinaryWriter w(out, "MESH");
    w.f64(mesh.density());
    w.vector(mesh.rest_positions());
    std::vector<int> flat;
    flat.reserve(4 * mesh.tets().size());
    for (const Tet& t : mesh.tets()) flat.insert(flat.end(), t.begin(), t.end());
    w.indices(flat);
}

TetMesh make_bar_mesh(int nx, int ny, int nz, const Vec3& dims, double density) {
    if (nx < 1 || ny < 1 || nz < 1) throw InvalidArgument("bar cell counts must be >= 1");
    if (!(dims.array() > 0.0).all()) throw InvalidArgument("bar dimensions must be positive");
    const int sx = nx + 1, sy = ny + 1, sz = nz + 1;
    Vec x(3 * sx * sy * sz);
    auto vid = [&](int i, int j, int k) { return i + sx * (j + sy * k); };
    for (int k = 0; k < sz; ++k)
        for (int j = 0; j < sy; ++j)
            for (int i = 0; i < sx; ++i) {
                const int v = vid(i, j, k);
                x[3 * v + 0] = dims.x() * i / nx;
                x[3 * v + 1] = dims.y() * j / ny;
                x[3 * v + 2] = dims.z() * k / nz;
            }
    // Kuhn subdivision: one tet per axis permutation, sharing the 000-111 diagonal.
    static constexpr int kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    std::vector<Tet> tets;
    tets.reserve(static_cast<std::size_t>(6 * nx * ny * nz));
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                for (const auto& p : kPerms) {
                    std::array<int, 3> c{i, j, k};
                    Tet t{};
                    t[0] = vid(c[0], c[1], c[2]);
                    for (int s = 0; s < 3; ++s) {
                        ++c[p[s]];
                        t[s + 1] = vid(c[0], c[1], c[2]);
                    }
                    // Odd permutations come out negatively oriented.
                    const bool even = (p[0] == 0 && p[1] == 1) || (p[0] == 1 && p[1] == 2) || (p[0] == 2 && p[1] == 0);
                    if (!even) std::swap(t[2], t[3]);
                    tets.push_back(t);
                }
    return TetMesh(std::move(x), std::move(tets), density);
}

TetMesh make_single_tet(double density) {
    Vec x(12);
    x << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
    return TetMesh(std::move(x), {{0, 1, 2, 3}}, density);
}

TetMesh make_cube5(double density) {
    Vec x(24);
    for (int v = 0; v < 8; ++v) {
        x[3 * v + 0] = v & 1;
        x[3 * v + 1] = (v >> 1) & 1;
        x[3 * v + 2] = (v >> 2) & 1;
    }
    std::vector<Tet> tets{{0, 3, 5, 6}, {1, 0, 3, 5}, {2, 0, 3, 6}, {4, 0, 5, 6}, {7, 3, 5, 6}};
    return TetMesh(std::move(x), std::move(tets), density);
}

std::vector<Face> boundary_faces(const TetMesh& mesh) {
    // Faces opposite each vertex, ordered so the normal points away from it
    // for a positively oriented tet.
    static constexpr int kFaces[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
    std::map<std::array<int, 3>, std::pair<Face, int>> seen;
    for (const Tet& t : mesh.tets())
        for (const auto& f : kFaces) {
            Face face{t[f[0]], t[f[1]], t[f[2]]};
            std::array<int, 3> key = face;
            std::sort(key.begin(), key.end());
            auto [it, inserted] = seen.try_emplace(key, face, 0);
            ++it->second.second;
        }
    std::vector<Face> out;
    for (const auto& [key, entry] : seen)
        if (entry.second == 1) out.push_back(entry.first);
    return out;
}

LumpedMass lump_mass(const TetMesh& mesh) {
    if (!(mesh.density() > 0.0)) throw InvalidArgument("mass must be positive: density is " + std::to_string(mesh.density()));
    LumpedMass m;
    m.diag = Vec::Zero(mesh.dofs());
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const double quarter = mesh.density() * mesh.rest_volume(e) / 4.0;
        for (int v : mesh.tet(e))
            for (int c = 0; c < 3; ++c) m.diag[3 * v + c] += quarter;
    }
    for (int v = 0; v < mesh.num_vertices(); ++v)
        if (!(m.diag[3 * v] > 0.0)) throw InvalidArgument("vertex " + std::to_string(v) + " belongs to no element");
    return m;
}

void BoundaryCondition::validate(const TetMesh& mesh) const {
    for (int v : fixed_vertices)
        if (v < 0 || v >= mesh.num_vertices()) throw InvalidArgument("fixed vertex " + std::to_string(v) + " out of range");
    for (const auto& [v, d] : prescribed_displacement) {
        if (std::find(fixed_vertices.begin(), fixed_vertices.end(), v) == fixed_vertices.end())
            throw InvalidArgument("prescribed displacement on non-fixed vertex " + std::to_string(v));
        if (!d.allFinite()) throw InvalidArgument("non-finite prescribed displacement");
    }
}

std::vector<bool> BoundaryCondition::fixed_dof_mask(Index dofs) const {
    std::vector<bool> mask(static_cast<std::size_t>(dofs), false);
    for (int v : fixed_vertices)
        for (int c = 0; c < 3; ++c) mask[static_cast<std::size_t>(3 * v + c)] = true;
    return mask;
}

Vec BoundaryCondition::prescribed(Index dofs) const {
    Vec u = Vec::Zero(dofs);
    for (const auto& [v, d] : prescribed_displacement) u.segment<3>(3 * v) = d;
    return u;
}

} // namespace cvxrom
