#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "handleforge/handle_model.hpp"
#include "handleforge/mat.hpp"
#include "handleforge/mesh_core.hpp"
#include "handleforge/rotation.hpp"

namespace handleforge {

// One skeletal pose: per-joint local axis-angle rotation (about the joint's
// rest position) plus a root translation.
struct Pose {
    Mat joint_rot;  // J x 3
    Vec3 root_t = Vec3::Zero();

    int J() const { return joint_rot.rows(); }
    static Pose rest(int J) { return Pose{Mat(J, 3), Vec3::Zero()}; }
};

// A named motion clip with the prompt string used for text conditioning.
struct PoseSequence {
    std::string name;
    std::string text;
    int fps = 20;
    std::vector<Pose> poses;
};

// Skeleton ground truth for a synthetic character. Drives the mesh for the
// pose loss, the real-sample pool, and handle-motion extraction targets.
struct SyntheticRig {
    Mat joints;                      // J x 3 rest positions, joint 0 = root
    std::vector<int> parents;        // parent per joint, -1 for the root
    Mat skeletal_skinning;           // V x J, row-stochastic
    std::vector<int> limb_vertices;  // vertices tagged as limb surface
    Pose pose;                       // active pose (rest by default)
    std::vector<PoseSequence> sequences;

    int J() const { return joints.rows(); }
    Vec3 root_joint() const { return Vec3(joints(0, 0), joints(0, 1), joints(0, 2)); }
};

// Tree rooted at joint 0, stochastic skinning rows, shape consistency.
void validate_rig(const SyntheticRig& rig, int V);

// Per-vertex part label: argmax joint when its weight exceeds `threshold`,
// else -1 (excluded from part-based losses).
std::vector<int> dominant_parts(const Mat& skinning, double threshold = 0.9);

struct PosedMesh {
    Mat positions;  // V x 3
};

// Forward-kinematics LBS: world joint transforms composed down the tree,
// vertices blended by the skeletal skinning.
PosedMesh skeletal_pose(const Mesh& mesh, const SyntheticRig& rig, const Pose& pose);
inline PosedMesh skeletal_pose(const Mesh& mesh, const SyntheticRig& rig) {
    return skeletal_pose(mesh, rig, rig.pose.J() == rig.J() ? rig.pose : Pose::rest(rig.J()));
}

// Weighted rigid registration R*src + t ~ dst minimizing
// sum_i w_i |R src_i + t - dst_i|^2 (Kabsch, det-corrected). Caches what the
// reverse pass needs.
struct RigidFit {
    Mat3 R;
    Vec3 t;
    Vec3 src_mean, dst_mean;  // weighted centroids
    double weight_sum = 0.0;
    Mat3 M;  // weighted centered cross-covariance sum_i w_i (dst_i-d̄)(src_i-s̄)^T
};

RigidFit fit_rigid_weighted(const Mat& src, const Mat& dst, const double* w, int n,
                            const std::string& what);

// Reverse mode through the special-orthogonal polar projection R(M):
// given dL/dR, returns dL/dM. Exact for the det-corrected branch too.
Mat3 polar_rotation_backward(const Mat3& M, const Mat3& R, const Mat3& dR);

// Reverse mode through fit_rigid_weighted w.r.t. the weights (src/dst held
// fixed): given dL/dR and dL/dt, accumulates dL/dw_i. This is what lets
// training losses differentiate through the Procrustes fit.
void fit_rigid_backward_weights(const RigidFit& fit, const Mat& src, const Mat& dst, int n,
                                const Mat3& dR, const Vec3& dt, double* dw);

struct FitOptions {
    bool local_only = false;  // skip the global factor (identity Rg, tg)
};

// Per-handle weighted Procrustes after factoring out (or skipping) a global
// rigid fit over all vertices. Inactive handles get identity entries.
HandleFrame fit_frame(const Mat& rest_vertices, const PosedMesh& posed,
                      const SkinningWeights& s, const HandleSet& handles,
                      const FitOptions& opts = {});

HandleMotion fit_sequence(const Mat& rest_vertices, const std::vector<PosedMesh>& posed_seq,
                          const SkinningWeights& s, const HandleSet& handles, int fps = 20,
                          const FitOptions& opts = {});

// JSON (.rig) round trip.
void save_rig(const SyntheticRig& rig, const std::filesystem::path& path);
SyntheticRig load_rig(const std::filesystem::path& path);

}  // namespace handleforge
