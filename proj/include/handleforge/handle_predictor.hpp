#pragma once

#include <cstdint>
#include <vector>

#include "handleforge/handle_model.hpp"
#include "handleforge/losses.hpp"
#include "handleforge/mat.hpp"
#include "handleforge/mesh_core.hpp"
#include "handleforge/motion_extraction.hpp"
#include "handleforge/nn.hpp"

namespace handleforge {

// Graph-convolutional vertex encoder with a per-vertex softmax head.
// Three GCN layers (input = position + normal, 6 channels) feed a
// three-layer MLP ending in a K-way softmax, plus a mean-pooled projection
// to the mesh feature vector that conditions the motion model.
struct PredictorParams {
    int K = 30;
    int hidden = 64;
    int feature_dim = 512;
    nn::ParamStore store;
};

PredictorParams make_predictor(int K, int hidden, int feature_dim, uint64_t seed);

struct PredictorOutput {
    SkinningWeights skinning;  // V x K, rows sum to 1 by construction
    HandleSet handles;
    Mat feature;  // 1 x feature_dim
};

struct PredictorCache {
    Mat X;                       // V x 6 input features
    Mat A;                       // normalized adjacency
    Mat Z1, H1, Z2, H2, Z3, H3;  // aggregated inputs and activations per GCN layer
    Mat M1, M2, S;               // head activations and softmax output
    Mat pool;                    // 1 x hidden mean of H3
};

// Forward pass. The mesh must carry normals (compute_normals) and have at
// least K vertices.
PredictorOutput predict(const Mesh& mesh, const PredictorParams& params);
PredictorOutput predict(const Mesh& mesh, const PredictorParams& params, PredictorCache& cache);

// Reverse mode: accumulates parameter gradients for dL/dS (and optionally
// dL/d_feature). The feature projection only receives gradient from
// d_feature; the supervision objective below never touches it.
void predictor_backward(PredictorParams& params, const PredictorCache& cache, const Mat& dS,
                        const Mat* d_feature = nullptr);

struct PredictorLossParts {
    double total = 0.0;
    double skinning = 0.0;
    double pose = 0.0;
    double root = 0.0;
};

// Composite supervision objective on one rigged example:
//   skinning KL + nu_p * pose reproduction + nu_r * root placement,
// with parameter gradients accumulated into the store. Callers zero grads.
PredictorLossParts predictor_training_loss(const Mesh& mesh, const SyntheticRig& rig,
                                           const Pose& pose, PredictorParams& params,
                                           const LossWeights& w, int skinning_pairs,
                                           uint64_t pair_seed);

// A pose to supervise against: a uniformly chosen frame of the rig's
// sequences when it has any, otherwise random small joint rotations.
Pose random_pose(const SyntheticRig& rig, RandomStream& rng);

struct RigExample {
    Mesh mesh;
    SyntheticRig rig;
};

struct PredictorTrainConfig {
    int K = 30;
    int hidden = 64;
    int feature_dim = 512;
    int steps = 1000;
    double lr = 1e-4;
    int skinning_pairs = 1024;
    LossWeights weights;
    uint64_t seed = 0;
};

struct PredictorTrainResult {
    PredictorParams params;
    std::vector<PredictorLossParts> curve;  // one entry per step
};

// Momentum-free gradient descent on the composite objective, cycling through
// the dataset. Aborts on non-finite loss; asserts the smoothed loss improved
// when enough steps ran to tell.
PredictorTrainResult train_predictor(const std::vector<RigExample>& dataset,
                                     const PredictorTrainConfig& cfg);

// Fraction of labeled vertices whose argmax handle matches their part under
// a greedy one-to-one part-to-handle assignment (largest parts claim their
// majority handle first). The injective matching keeps a collapsed
// prediction from scoring well.
double part_recovery(const SkinningWeights& pred, const std::vector<int>& labels);

}  // namespace handleforge
