#pragma once

#include <vector>

#include "handleforge/handle_model.hpp"
#include "handleforge/mesh_core.hpp"

namespace handleforge {

struct AdaptationConfig {
    int steps = 300;
    double lr = 0.05;  // initial trial step; backtracking halves from here
    double nu_v = 10.0;
};

// Edge-preservation objective of a frame deformed with t_local + delta, plus
// a proximal pull toward `anchor`. Gradient w.r.t. delta (assigned) runs
// analytically through the deformation.
double adaptation_objective(const Mesh& mesh, const SkinningWeights& s,
                            const HandleSet& handles, const HandleFrame& frame,
                            const EdgeSet& edges, const Mat& delta, const Mat& anchor,
                            double nu_v, Mat* d_delta = nullptr);

struct AdaptationResult {
    Mat delta;                  // K x 3
    std::vector<double> trace;  // objective at the initial point and each accepted step
};

// Proximal gradient descent with backtracking line search. The proximal
// anchor is the previous accepted iterate, so fixed points are exactly the
// stationary points of the edge term. The trace never increases; aborts on
// non-finite objectives.
AdaptationResult optimize_adaptation(const Mesh& mesh, const SkinningWeights& s,
                                     const HandleSet& handles, const HandleFrame& frame,
                                     const EdgeSet& edges, const Mat& init_delta,
                                     const AdaptationConfig& cfg = {});

// Per-frame offsets for a whole clip, each frame warm-started from the
// previous frame's optimum. Ready to attach as HandleMotion::delta or to
// serve as fine-tuning targets.
std::vector<Mat> build_pseudo_labels(const Mesh& mesh, const SkinningWeights& s,
                                     const HandleSet& handles, const HandleMotion& motion,
                                     const AdaptationConfig& cfg = {});

}  // namespace handleforge
