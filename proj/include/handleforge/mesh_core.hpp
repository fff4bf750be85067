#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "handleforge/mat.hpp"

namespace handleforge {

// Triangle mesh in rest pose. Normals are always derived (area-weighted
// from faces); `vn` records in input files are ignored. Immutable after
// load in practice; all operations are pure.
struct Mesh {
    Mat vertices;                          // V x 3
    std::vector<std::array<int, 3>> faces; // vertex index triples
    Mat normals;                           // V x 3, unit or zero
    std::vector<int> zero_normal_vertices; // zero-area fans, flagged

    int vertex_count() const { return vertices.rows(); }
    int face_count() const { return static_cast<int>(faces.size()); }
};

// Undirected edges with rest lengths, each pair listed once with i < j.
struct EdgeSet {
    std::vector<std::array<int, 2>> edges;
    std::vector<double> rest_lengths;

    int count() const { return static_cast<int>(edges.size()); }
};

// ASCII OBJ with v/f records; fans triangulated, vt/vn ignored, negative
// indices resolved relative to the running vertex count.
Mesh load_obj(const std::filesystem::path& path);

// Writes `positions` (row count V) against the mesh's faces with fixed
// %.6f formatting so byte-level golden tests are stable.
void save_obj(const Mesh& mesh, const Mat& positions, const std::filesystem::path& path);

// Recomputes area-weighted vertex normals in place.
void compute_normals(Mesh& mesh);

EdgeSet edge_set(const Mesh& mesh);

// Recenter to the origin and scale so the bounding-box diagonal is 1.
// Opt-in; deformation math otherwise stays in native units.
void normalize_unit_box(Mesh& mesh);

// Symmetric-normalized adjacency with self loops, D^{-1/2} (A+I) D^{-1/2},
// dense. Input feature aggregation for the handle predictor.
Mat normalized_adjacency(const Mesh& mesh);

// Validates face indices and rejects degenerate faces; called by load_obj.
void validate_mesh(const Mesh& mesh);

}  // namespace handleforge
