#pragma once

#include <filesystem>
#include <vector>

#include "handleforge/mat.hpp"
#include "handleforge/mesh_core.hpp"
#include "handleforge/rotation.hpp"

namespace handleforge {

// Motion sequences longer than this are rejected; the diffusion model pads
// shorter ones up to its configured window.
constexpr int kMaxMotionFrames = 196;

// Row-stochastic V x K vertex-to-handle assignment.
struct SkinningWeights {
    Mat weights;

    int V() const { return weights.rows(); }
    int K() const { return weights.cols(); }
};

// Entries in [0,1], rows summing to 1 within 1e-6.
void validate_weights(const SkinningWeights& s);

// Handle positions with an activity mask. Handle 0 is the root. Handles
// whose total weight is below 1e-8 are masked out: their position falls
// back to the mesh centroid and losses skip them.
struct HandleSet {
    Mat positions;  // K x 3
    std::vector<bool> active;

    int K() const { return positions.rows(); }
};

HandleSet handle_positions(const SkinningWeights& s, const Mat& rest_vertices);

// One frame of handle motion: per-handle local translation and 6D rotation,
// plus a global translation and axis-angle rotation.
struct HandleFrame {
    Mat t_local;  // K x 3
    Mat r_local;  // K x 6
    Vec3 t_global = Vec3::Zero();
    Vec3 r_global = Vec3::Zero();

    int K() const { return t_local.rows(); }
    static HandleFrame identity(int K);
};

struct DecodedFrame {
    std::vector<Mat3> local_rot;
    Mat3 global_rot;
};

// Decodes all rotations; throws naming the offending handle on degenerate
// 6D input.
DecodedFrame decode_frame(const HandleFrame& frame);

// An N-frame sequence plus optional per-frame K x 3 adaptation offsets.
struct HandleMotion {
    int fps = 20;
    std::vector<HandleFrame> frames;
    std::vector<Mat> delta;  // empty, or one K x 3 block per frame

    int frame_count() const { return static_cast<int>(frames.size()); }
    bool has_delta() const { return !delta.empty(); }
    int K() const { return frames.empty() ? 0 : frames.front().K(); }
};

void validate_motion(const HandleMotion& m);

// Handle-based linear blend deformation:
//   v_i' = Rg ( sum_k s_ik ( Rl_k (v_i - h_k) + tau_k + h_k ) ) + tg.
// Rows touching inactive handles are renormalized over the active set.
Mat deform(const Mat& rest_vertices, const SkinningWeights& s, const HandleSet& handles,
           const HandleFrame& frame);
inline Mat deform(const Mesh& mesh, const SkinningWeights& s, const HandleSet& handles,
                  const HandleFrame& frame) {
    return deform(mesh.vertices, s, handles, frame);
}

// Same deformation restricted to a vertex subset (adversarial sampling).
Mat deform_subset(const Mat& rest_vertices, const std::vector<int>& ids,
                  const SkinningWeights& s, const HandleSet& handles, const HandleFrame& frame);

// Reverse-mode derivatives of deform w.r.t. the frame parameters and,
// optionally, the skinning weights and handle positions. `ids` restricts to
// a subset (pass nullptr for all vertices). Requires every handle active.
struct DeformGrad {
    Mat d_t_local;  // K x 3
    Mat d_r_local;  // K x 6
    Vec3 d_t_global = Vec3::Zero();
    Vec3 d_r_global = Vec3::Zero();
    Mat d_weights;  // V x K when requested
    Mat d_handles;  // K x 3 when requested
};

DeformGrad deform_backward(const Mat& rest_vertices, const std::vector<int>* ids,
                           const SkinningWeights& s, const HandleSet& handles,
                           const HandleFrame& frame, const Mat& d_out, bool want_weights = false,
                           bool want_handles = false);

// Local-translation adaptation: tau <- tau + delta, everything else as is.
HandleFrame apply_adaptation(const HandleFrame& frame, const Mat& delta);

// Handle positions through the motion: row 0 is the rest pose, row n the
// position of every handle at frame n, flattened K x 3. A handle rides its
// own local translation and the global transform; its own rotation spins
// it in place.
Mat handle_trajectory_with_rest(const HandleSet& handles, const HandleMotion& motion,
                                bool include_delta);

// Reverse mode through handle_trajectory_with_rest w.r.t. the motion
// parameters the trajectory actually depends on (local translations, global
// transform, delta when included; local rotations spin handles in place and
// never move them). Handle rest positions are treated as constants, so the
// rest row of d_traj is ignored.
struct TrajectoryGrad {
    std::vector<Mat> d_t_local;   // per frame, K x 3
    std::vector<Vec3> d_t_global;
    std::vector<Vec3> d_r_global;
    std::vector<Mat> d_delta;     // per frame K x 3 when delta was included
};

TrajectoryGrad handle_trajectory_backward(const HandleSet& handles, const HandleMotion& motion,
                                          bool include_delta, const Mat& d_traj);

// JSON (.hmo) round trip.
void save_hmo(const HandleMotion& motion, const std::filesystem::path& path);
HandleMotion load_hmo(const std::filesystem::path& path);

}  // namespace handleforge
