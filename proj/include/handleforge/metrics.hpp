#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "handleforge/mat.hpp"
#include "handleforge/mesh_core.hpp"

namespace handleforge {

// Mean squared edge-length deviation from the rest lengths, averaged over
// frames and edges. Zero under any per-frame rigid motion; positive as soon
// as some edge stretches or compresses.
double arap_loss_metric(const Mesh& rest, const std::vector<Mat>& animated,
                        const EdgeSet& edges);

// Fréchet distance between Gaussians fitted to the two sample sets (one
// sample per row): |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}). The matrix
// square root goes through an eigendecomposition with negative eigenvalues
// clipped to zero; tiny negative totals clamp to 0.
double handle_fid(const Mat& real_samples, const Mat& gen_samples);

struct MetricsReport {
    double arap_loss = 0.0;
    bool has_fid = false;
    double fid = 0.0;
    int frames = 0;
    int edges = 0;
};

// {"arap_loss": ..., "handle_fid": ... or null, "frames": ..., "edges": ...}
std::string report_json(const MetricsReport& r);
void save_report(const MetricsReport& r, const std::filesystem::path& path);

}  // namespace handleforge
