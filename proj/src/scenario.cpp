#include "cvxrom/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cvxrom/errors.hpp"

namespace cvxrom {

namespace {

double parse_double(const std::string& s, const std::string& ctx) {
    double v{};
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end || !std::isfinite(v)) throw ParseError(ctx + ": bad number '" + s + "'");
    return v;
}

int parse_int(const std::string& s, const std::string& ctx) {
    int v{};
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end) throw ParseError(ctx + ": bad integer '" + s + "'");
    return v;
}

int axis_of(const std::string& s) {
    if (s == "x") return 0;
    if (s == "y") return 1;
    if (s == "z") return 2;
    return -1;
}

std::vector<std::string> split_selector_text(const std::string& text) {
    // Accept "y>=0.9" as well as "y >= 0.9".
    std::string spaced;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if ((text[i] == '<' || text[i] == '>') && i + 1 < text.size() && text[i + 1] == '=') {
            spaced += ' ';
            spaced += text.substr(i, 2);
            spaced += ' ';
            ++i;
        } else {
            spaced += text[i];
        }
    }
    std::istringstream in(spaced);
    std::vector<std::string> out;
    for (std::string t; in >> t;) out.push_back(t);
    return out;
}

} // namespace

std::vector<int> VertexSelector::resolve(const TetMesh& mesh) const {
    std::vector<int> out;
    const int n = mesh.num_vertices();
    switch (kind) {
    case Kind::all:
        out.resize(static_cast<std::size_t>(n));
        for (int v = 0; v < n; ++v) out[static_cast<std::size_t>(v)] = v;
        break;
    case Kind::at_most:
    case Kind::at_least: {
        const auto [lo, hi] = mesh.bounds();
        const double tol = 1e-9 * std::max((hi - lo).maxCoeff(), 1.0);
        for (int v = 0; v < n; ++v) {
            const double c = mesh.rest_positions()[3 * v + axis];
            if ((kind == Kind::at_most && c <= value + tol) || (kind == Kind::at_least && c >= value - tol)) out.push_back(v);
        }
        break;
    }
    case Kind::vertices:
        for (int v : ids) {
            if (v < 0 || v >= n) throw InvalidArgument("selector vertex " + std::to_string(v) + " out of range");
            out.push_back(v);
        }
        break;
    }
    return out;
}

std::string VertexSelector::to_string() const {
    std::ostringstream out;
    out.precision(17);
    static const char* kAxes = "xyz";
    switch (kind) {
    case Kind::all: out << "all"; break;
    case Kind::at_most: out << kAxes[axis] << " <= " << value; break;
    case Kind::at_least: out << kAxes[axis] << " >= " << value; break;
    case Kind::vertices:
        out << "vertex";
        for (int v : ids) out << ' ' << v;
        break;
    }
    return out.str();
}

VertexSelector VertexSelector::parse(const std::vector<std::string>& tokens, std::size_t& pos) {
    if (pos >= tokens.size()) throw ParseError("missing vertex selector");
    VertexSelector s;
    const std::string& head = tokens[pos];
    if (head == "all") {
        s.kind = Kind::all;
        ++pos;
        return s;
    }
    if (head == "vertex" || head == "vertices") {
        s.kind = Kind::vertices;
        ++pos;
        // Indices run until the first token that is not an integer, or until
        // only the trailing force triple remains (callers pass exact ranges).
        while (pos < tokens.size() && tokens[pos].find_first_not_of("0123456789") == std::string::npos)
            s.ids.push_back(parse_int(tokens[pos++], "selector"));
        if (s.ids.empty()) throw ParseError("vertex selector needs at least one index");
        return s;
    }
    const int axis = axis_of(head);
    if (axis < 0 || pos + 2 >= tokens.size())
        throw ParseError("bad selector starting at '" + head + "'");
    const std::string& op = tokens[pos + 1];
    if (op == "<=") s.kind = Kind::at_most;
    else if (op == ">=") s.kind = Kind::at_least;
    else throw ParseError("selector operator must be <= or >=, got '" + op + "'");
    s.axis = axis;
    s.value = parse_double(tokens[pos + 2], "selector");
    pos += 3;
    return s;
}

void ForceScenario::validate(const TetMesh& mesh) const {
    if (!gravity.allFinite()) throw InvalidArgument("non-finite gravity");
    for (const auto& f : fixed)
        if (f.resolve(mesh).empty()) throw InvalidArgument("fix selector '" + f.to_string() + "' matches no vertex");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        const auto& a = schedule[i];
        if (!(a.t_end > a.t_begin)) throw InvalidArgument("force interval must have t_end > t_begin");
        if (!a.force.allFinite()) throw InvalidArgument("non-finite force");
        if (a.selector.resolve(mesh).empty())
            throw InvalidArgument("force selector '" + a.selector.to_string() + "' matches no vertex");
        for (std::size_t j = 0; j < i; ++j) {
            const auto& b = schedule[j];
            if (a.selector.to_string() == b.selector.to_string() && a.t_begin < b.t_end && b.t_begin < a.t_end)
                throw InvalidArgument("overlapping force intervals for selector '" + a.selector.to_string() + "'");
        }
    }
}

Vec ForceScenario::external_force(const TetMesh& mesh, const Vec& mass_diag, double t) const {
    Vec f = Vec::Zero(mesh.dofs());
    if (!gravity.isZero(0.0))
        for (int v = 0; v < mesh.num_vertices(); ++v) f.segment<3>(3 * v) += mass_diag[3 * v] * gravity;
    for (const auto& entry : schedule) {
        if (t < entry.t_begin || t >= entry.t_end) continue;
        for (int v : entry.selector.resolve(mesh)) f.segment<3>(3 * v) += entry.force;
    }
    return f;
}

BoundaryCondition ForceScenario::boundary(const TetMesh& mesh) const {
    std::set<int> ids;
    for (const auto& f : fixed)
        for (int v : f.resolve(mesh)) ids.insert(v);
    BoundaryCondition bc;
    bc.fixed_vertices.assign(ids.begin(), ids.end());
    return bc;
}

std::string ForceScenario::to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "name " << name << '\n';
    out << "gravity " << gravity.x() << ' ' << gravity.y() << ' ' << gravity.z() << '\n';
    for (const auto& f : fixed) out << "fix " << f.to_string() << '\n';
    for (const auto& e : schedule)
        out << "force " << e.t_begin << ' ' << e.t_end << ' ' << e.selector.to_string() << ' ' << e.force.x() << ' '
            << e.force.y() << ' ' << e.force.z() << '\n';
    return out.str();
}

ForceScenario parse_scenario(const std::string& text, const std::string& origin) {
    ForceScenario sc;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        auto tokens = split_selector_text(line);
        if (tokens.empty()) continue;
        const std::string ctx = origin + ":" + std::to_string(line_no);
        try {
            const std::string& key = tokens[0];
            if (key == "name") {
                if (tokens.size() != 2) throw ParseError("name takes one token");
                sc.name = tokens[1];
            } else if (key == "gravity") {
                if (tokens.size() != 4) throw ParseError("gravity takes three numbers");
                for (int c = 0; c < 3; ++c) sc.gravity[c] = parse_double(tokens[1 + c], ctx);
            } else if (key == "fix") {
                std::size_t pos = 1;
                sc.fixed.push_back(VertexSelector::parse(tokens, pos));
                if (pos != tokens.size()) throw ParseError("trailing tokens after fix selector");
            } else if (key == "force") {
                if (tokens.size() < 7) throw ParseError("force needs t0 t1 <selector> fx fy fz");
                ForceEntry e;
                e.t_begin = tokens[1] == "inf" ? INFINITY : parse_double(tokens[1], ctx);
                e.t_end = tokens[2] == "inf" ? INFINITY : parse_double(tokens[2], ctx);
                // Selector occupies everything between the times and the final force triple.
                std::vector<std::string> sel(tokens.begin() + 3, tokens.end() - 3);
                std::size_t pos = 0;
                e.selector = VertexSelector::parse(sel, pos);
                if (pos != sel.size()) throw ParseError("malformed selector in force line");
                for (int c = 0; c < 3; ++c) e.force[c] = parse_double(tokens[tokens.size() - 3 + c], ctx);
                sc.schedule.push_back(std::move(e));
            } else {
                throw ParseError("unknown directive '" + key + "'");
            }
        } catch (const ParseError& e) {
            const std::string msg = e.what();
            if (msg.rfind(origin, 0) == 0) throw;
            throw ParseError(ctx + ": " + msg);
        }
    }
    return sc;
}

ForceScenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), path);
}

ForceEntry parse_force_spec(const std::string& spec) {
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos) throw ParseError("force spec must look like '<selector>:fx,fy,fz'");
    auto tokens = split_selector_text(spec.substr(0, colon));
    std::size_t pos = 0;
    ForceEntry e;
    e.t_begin = 0.0;
    e.t_end = INFINITY;
    e.selector = VertexSelector::parse(tokens, pos);
    if (pos != tokens.size()) throw ParseError("malformed selector in force spec");
    std::string rest = spec.substr(colon + 1);
    std::replace(rest.begin(), rest.end(), ',', ' ');
    std::istringstream in(rest);
    std::vector<std::string> nums;
    for (std::string t; in >> t;) nums.push_back(t);
    if (nums.size() != 3) throw ParseError("force spec needs three components");
    for (int c = 0; c < 3; ++c) e.force[c] = parse_double(nums[c], "force spec");
    return e;
}

} // namespace cvxrom
