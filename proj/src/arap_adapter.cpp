#include "handleforge/arap_adapter.hpp"

#include <cmath>
#include <string>

#include "handleforge/error.hpp"
#include "handleforge/losses.hpp"

namespace handleforge {

double adaptation_objective(const Mesh& mesh, const SkinningWeights& s,
                            const HandleSet& handles, const HandleFrame& frame,
                            const EdgeSet& edges, const Mat& delta, const Mat& anchor,
                            double nu_v, Mat* d_delta) {
    const int K = handles.K();
    require(delta.rows() == K && delta.cols() == 3, "adaptation_objective: delta shape");
    require(anchor.same_shape(delta), "adaptation_objective: anchor shape");

    const HandleFrame adapted = apply_adaptation(frame, delta);
    const Mat deformed = deform(mesh.vertices, s, handles, adapted);

    Mat d_def, d_prox;
    const double value = arap_objective(deformed, edges, delta, anchor, nu_v,
                                        d_delta ? &d_def : nullptr,
                                        d_delta ? &d_prox : nullptr);
    if (d_delta) {
        const DeformGrad g = deform_backward(mesh.vertices, nullptr, s, handles, adapted, d_def);
        *d_delta = g.d_t_local;  // delta enters only the local translations
        *d_delta += d_prox;
    }
    return value;
}

AdaptationResult optimize_adaptation(const Mesh& mesh, const SkinningWeights& s,
                                     const HandleSet& handles, const HandleFrame& frame,
                                     const EdgeSet& edges, const Mat& init_delta,
                                     const AdaptationConfig& cfg) {
    require(cfg.steps >= 0 && cfg.lr > 0.0, "optimize_adaptation: bad config");
    const int K = handles.K();
    require(init_delta.rows() == K && init_delta.cols() == 3,
            "optimize_adaptation: init_delta shape");

    AdaptationResult res;
    res.delta = init_delta;

    // With the anchor sitting on the current iterate the proximal term and
    // its gradient vanish at the evaluation point, so `cur` is the pure edge
    // objective and the prox term only taxes the candidate jump. Each
    // accepted value therefore bounds the next step's starting value, which
    // keeps the recorded trace non-increasing.
    Mat grad;
    double step = cfg.lr;
    double cur = adaptation_objective(mesh, s, handles, frame, edges, res.delta, res.delta,
                                      cfg.nu_v, &grad);
    if (!std::isfinite(cur)) fail("optimize_adaptation: objective not finite at start");
    res.trace.push_back(cur);

    for (int it = 0; it < cfg.steps; ++it) {
        double gnorm2 = 0.0;
        for (size_t i = 0; i < grad.size(); ++i) gnorm2 += grad[i] * grad[i];
        if (gnorm2 < 1e-24) break;

        // Armijo backtracking from the last accepted scale.
        bool accepted = false;
        Mat cand;
        double cand_value = 0.0;
        for (double alpha = step; alpha > 1e-16; alpha *= 0.5) {
            cand = res.delta;
            for (size_t i = 0; i < cand.size(); ++i) cand[i] -= alpha * grad[i];
            cand_value = adaptation_objective(mesh, s, handles, frame, edges, cand, res.delta,
                                              cfg.nu_v, nullptr);
            if (!std::isfinite(cand_value))
                fail("optimize_adaptation: objective diverged at step " + std::to_string(it));
            if (cand_value <= cur - 1e-4 * alpha * gnorm2) {
                accepted = true;
                step = std::min(alpha * 2.0, cfg.lr);
                break;
            }
        }
        if (!accepted) break;  // no descent direction left at this scale

        res.delta = cand;
        res.trace.push_back(cand_value);
        cur = adaptation_objective(mesh, s, handles, frame, edges, res.delta, res.delta,
                                   cfg.nu_v, &grad);
    }
    for (size_t i = 1; i < res.trace.size(); ++i)
        require(res.trace[i] <= res.trace[i - 1] + 1e-12,
                "optimize_adaptation: objective increased");
    return res;
}

std::vector<Mat> build_pseudo_labels(const Mesh& mesh, const SkinningWeights& s,
                                     const HandleSet& handles, const HandleMotion& motion,
                                     const AdaptationConfig& cfg) {
    validate_motion(motion);
    require(motion.K() == handles.K(), "build_pseudo_labels: handle count mismatch");
    const EdgeSet edges = edge_set(mesh);

    std::vector<Mat> labels;
    labels.reserve(motion.frames.size());
    Mat warm(handles.K(), 3);
    for (const HandleFrame& frame : motion.frames) {
        const AdaptationResult res =
            optimize_adaptation(mesh, s, handles, frame, edges, warm, cfg);
        warm = res.delta;
        labels.push_back(res.delta);
    }
    return labels;
}

}  // namespace handleforge
