#include "handleforge/mesh_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "handleforge/error.hpp"

namespace handleforge {

namespace {

int resolve_index(long raw, size_t vertex_count, const std::filesystem::path& path, int line_no) {
    long idx = raw;
    if (idx < 0) idx = static_cast<long>(vertex_count) + idx;  // -1 refers to the last vertex
    else idx -= 1;
    if (idx < 0 || idx >= static_cast<long>(vertex_count))
        fail("load_obj: " + path.string() + ":" + std::to_string(line_no) +
             ": face index " + std::to_string(raw) + " out of range (V=" +
             std::to_string(vertex_count) + ")");
    return static_cast<int>(idx);
}

}  // namespace

Mesh load_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("load_obj: cannot open " + path.string());

    std::vector<std::array<double, 3>> verts;
    std::vector<std::array<int, 3>> faces;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            std::array<double, 3> p{};
            if (!(ls >> p[0] >> p[1] >> p[2]))
                fail("load_obj: " + path.string() + ":" + std::to_string(line_no) +
                     ": malformed vertex record");
            verts.push_back(p);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string tok;
            while (ls >> tok) {
                // "i", "i/t", "i/t/n", "i//n" -- only the vertex index matters
                size_t slash = tok.find('/');
                std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
                long raw = 0;
                try {
                    raw = std::stol(head);
                } catch (const std::exception&) {
                    fail("load_obj: " + path.string() + ":" + std::to_string(line_no) +
                         ": malformed face token '" + tok + "'");
                }
                poly.push_back(resolve_index(raw, verts.size(), path, line_no));
            }
            if (poly.size() < 3)
                fail("load_obj: " + path.string() + ":" + std::to_string(line_no) +
                     ": face with fewer than 3 vertices");
            for (size_t t = 1; t + 1 < poly.size(); ++t)
                faces.push_back({poly[0], poly[t], poly[t + 1]});
        }
        // vn/vt/usemtl/etc. ignored
    }

    Mesh mesh;
    mesh.vertices = Mat(static_cast<int>(verts.size()), 3);
    for (size_t i = 0; i < verts.size(); ++i)
        for (int c = 0; c < 3; ++c) mesh.vertices(static_cast<int>(i), c) = verts[i][c];
    mesh.faces = std::move(faces);
    validate_mesh(mesh);
    compute_normals(mesh);
    return mesh;
}

void validate_mesh(const Mesh& mesh) {
    const int V = mesh.vertex_count();
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& tri = mesh.faces[f];
        for (int idx : tri)
            if (idx < 0 || idx >= V)
                fail("mesh: face " + std::to_string(f) + " index " + std::to_string(idx) +
                     " out of range");
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
            fail("mesh: face " + std::to_string(f) + " repeats a vertex index");
    }
}

void compute_normals(Mesh& mesh) {
    const int V = mesh.vertex_count();
    mesh.normals = Mat(V, 3);
    mesh.zero_normal_vertices.clear();
    for (const auto& tri : mesh.faces) {
        const double* a = mesh.vertices.row(tri[0]);
        const double* b = mesh.vertices.row(tri[1]);
        const double* c = mesh.vertices.row(tri[2]);
        const double e1[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
        const double e2[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
        // cross product length = 2*area, so accumulating unnormalized cross
        // products gives area weighting for free
        const double n[3] = {e1[1] * e2[2] - e1[2] * e2[1],
                             e1[2] * e2[0] - e1[0] * e2[2],
                             e1[0] * e2[1] - e1[1] * e2[0]};
        for (int idx : tri)
            for (int c2 = 0; c2 < 3; ++c2) mesh.normals(idx, c2) += n[c2];
    }
    for (int i = 0; i < V; ++i) {
        double* n = mesh.normals.row(i);
        const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
        if (len < 1e-12) {
            n[0] = n[1] = n[2] = 0.0;
            mesh.zero_normal_vertices.push_back(i);
        } else {
            n[0] /= len;
            n[1] /= len;
            n[2] /= len;
        }
    }
}

void save_obj(const Mesh& mesh, const Mat& positions, const std::filesystem::path& path) {
    require(positions.rows() == mesh.vertex_count() && positions.cols() == 3,
            "save_obj: positions must be V x 3 (got " + std::to_string(positions.rows()) + "x" +
                std::to_string(positions.cols()) + ", V=" + std::to_string(mesh.vertex_count()) + ")");
    std::FILE* out = std::fopen(path.string().c_str(), "wb");
    if (!out) fail("save_obj: cannot open " + path.string() + " for writing");
    for (int i = 0; i < positions.rows(); ++i)
        std::fprintf(out, "v %.6f %.6f %.6f\n", positions(i, 0), positions(i, 1), positions(i, 2));
    for (const auto& tri : mesh.faces)
        std::fprintf(out, "f %d %d %d\n", tri[0] + 1, tri[1] + 1, tri[2] + 1);
    if (std::fclose(out) != 0) fail("save_obj: write failure on " + path.string());
}

EdgeSet edge_set(const Mesh& mesh) {
    std::set<std::array<int, 2>> seen;
    for (const auto& tri : mesh.faces) {
        for (int e = 0; e < 3; ++e) {
            int i = tri[e];
            int j = tri[(e + 1) % 3];
            if (i > j) std::swap(i, j);
            seen.insert({i, j});
        }
    }
    EdgeSet es;
    es.edges.assign(seen.begin(), seen.end());
    es.rest_lengths.reserve(es.edges.size());
    for (const auto& [i, j] : es.edges) {
        const double* a = mesh.vertices.row(i);
        const double* b = mesh.vertices.row(j);
        const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
        const double len = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (len <= 1e-12)
            fail("edge_set: zero-length edge between vertices " + std::to_string(i) + " and " +
                 std::to_string(j));
        es.rest_lengths.push_back(len);
    }
    return es;
}

void normalize_unit_box(Mesh& mesh) {
    const int V = mesh.vertex_count();
    require(V > 0, "normalize_unit_box: empty mesh");
    double lo[3], hi[3];
    for (int c = 0; c < 3; ++c) lo[c] = hi[c] = mesh.vertices(0, c);
    for (int i = 1; i < V; ++i)
        for (int c = 0; c < 3; ++c) {
            lo[c] = std::min(lo[c], mesh.vertices(i, c));
            hi[c] = std::max(hi[c], mesh.vertices(i, c));
        }
    double diag = 0.0;
    for (int c = 0; c < 3; ++c) diag += (hi[c] - lo[c]) * (hi[c] - lo[c]);
    diag = std::sqrt(diag);
    require(diag > 1e-12, "normalize_unit_box: degenerate bounding box");
    for (int i = 0; i < V; ++i)
        for (int c = 0; c < 3; ++c)
            mesh.vertices(i, c) = (mesh.vertices(i, c) - 0.5 * (lo[c] + hi[c])) / diag;
    compute_normals(mesh);
}

Mat normalized_adjacency(const Mesh& mesh) {
    const int V = mesh.vertex_count();
    Mat A(V, V);
    for (const auto& tri : mesh.faces) {
        for (int e = 0; e < 3; ++e) {
            const int i = tri[e];
            const int j = tri[(e + 1) % 3];
            A(i, j) = 1.0;
            A(j, i) = 1.0;
        }
    }
    for (int i = 0; i < V; ++i) A(i, i) = 1.0;
    std::vector<double> dinv(V);
    for (int i = 0; i < V; ++i) {
        double deg = 0.0;
        for (int j = 0; j < V; ++j) deg += A(i, j);
        dinv[i] = 1.0 / std::sqrt(deg);
    }
    for (int i = 0; i < V; ++i)
        for (int j = 0; j < V; ++j) A(i, j) *= dinv[i] * dinv[j];
    return A;
}

}  // namespace handleforge
