#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "handleforge/handle_model.hpp"
#include "handleforge/mat.hpp"
#include "handleforge/mesh_core.hpp"
#include "handleforge/motion_extraction.hpp"
#include "handleforge/nn.hpp"

namespace handleforge {

// Balancing factors for the composite training objectives, plus the spring
// sharpness offset. Defaults match the shipped config.
struct LossWeights {
    double nu_p = 1.0;    // pose reproduction
    double nu_r = 0.1;    // root placement
    double nu_h = 0.001;  // spring regularizer
    double nu_a = 0.1;    // adversarial generator term
    double nu_v = 10.0;   // edge preservation in the adaptation objective
    double sigma = 0.0;   // spring rest-length sharpness offset
};

// Pairs of handles treated as connected by a spring, each (i, j) with i < j.
struct HandleAdjacency {
    std::vector<std::pair<int, int>> pairs;
};

// Two handles are adjacent when some mesh edge joins a vertex argmax-assigned
// to one with a vertex argmax-assigned to the other.
HandleAdjacency derive_adjacency(const Mesh& mesh, const SkinningWeights& s);

// Manual override: JSON {"pairs": [[i, j], ...]}, validated against K.
HandleAdjacency load_adjacency(const std::filesystem::path& path, int K);

// Part-contrastive KL over sampled vertex pairs: +KL(s_i || s_j) for pairs
// from the same part, -KL for pairs from different parts, averaged.
// `part_labels` uses -1 for vertices without a dominant part (never sampled).
// Probabilities are clamped to [1e-8, 1] before the logs. If `d_pred` is
// given it is assigned the V x K gradient.
double skinning_loss(const SkinningWeights& pred, const std::vector<int>& part_labels,
                     int sample_pairs, uint64_t seed, Mat* d_pred = nullptr);

// Mean squared vertex error between the skeleton-posed mesh and the
// handle-deformed mesh, where each handle's local transform is the weighted
// rigid fit to the posed shape (no global factor on either side).
double pose_loss(const Mesh& rest, const SyntheticRig& rig, const SkinningWeights& s,
                 const HandleSet& handles, const Pose& pose);

// Same value, plus the analytic gradient w.r.t. the skinning weights
// (assigned, V x K). Differentiates through the per-handle rigid fits; every
// handle must have weight support.
double pose_loss_grad(const Mesh& rest, const SyntheticRig& rig, const SkinningWeights& s,
                      const Pose& pose, Mat& d_weights);

// Squared distance between the weighted centroid of handle 0's weight column
// and the root joint. Gradient assigned V x K when requested (only column 0
// is nonzero).
double root_loss(const SkinningWeights& s, const Mat& rest_vertices, const Vec3& root,
                 Mat* d_weights = nullptr);

// Spring energy over a handle trajectory. `traj` is (N+1) x 3K with row 0
// the rest positions; for each adjacent pair the rest-length deviation is
// weighted by exp(-(rest_dist + sigma)) and consecutive frames pay a
// smoothness term. `active` (when given) rejects pairs touching inactive
// handles. `d_traj` is assigned the full gradient when requested.
double spring_loss(const Mat& traj, const HandleAdjacency& adj, double sigma,
                   const std::vector<bool>* active = nullptr, Mat* d_traj = nullptr);

// Edge-preservation objective for adaptation offsets:
//   nu_v * sum_edges (|d_i - d_j| - rest_len)^2 + |delta - delta_prev|^2.
// `edges` carries the rest lengths. delta blocks may both be empty.
double arap_objective(const Mat& deformed, const EdgeSet& edges, const Mat& delta,
                      const Mat& delta_prev, double nu_v, Mat* d_deformed = nullptr,
                      Mat* d_delta = nullptr);

// Masked mean squared error over frame rows; `frame_valid` marks unpadded
// rows. Gradient w.r.t. the prediction assigned when requested.
double motion_loss(const Mat& x0, const Mat& x0_hat, const std::vector<uint8_t>& frame_valid,
                   Mat* d_x0_hat = nullptr);

// Three-layer MLP probability that a flattened vertex-trajectory window came
// from a skeleton-driven motion. Input dim is verts * 3 * window (600 for
// the default 100 x 2 sampling).
class Discriminator {
public:
    Discriminator(int in_dim, uint64_t seed);

    struct Cache {
        Mat x, h1, h2, probs;
    };

    Mat forward(const Mat& batch) const;
    Mat forward(const Mat& batch, Cache& cache) const;
    // Accumulates parameter gradients, returns dL/d_input.
    Mat backward(const Cache& cache, const Mat& d_probs);

    int in_dim() const { return in_dim_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

private:
    int in_dim_;
    nn::ParamStore params_;
};

// Binary cross-entropy pair for a discriminator D and generated batch:
//   d_loss = -mean log D(real) - mean log(1 - D(fake))
//   g_loss = -mean log D(fake)            (non-saturating form)
// Probabilities are clamped to (1e-7, 1 - 1e-7). Values only.
std::pair<double, double> adversarial_loss(const Discriminator& disc, const Mat& real,
                                           const Mat& fake);

// d_loss with gradients accumulated into the discriminator parameters.
// Callers zero the grads first.
double adversarial_d_step(Discriminator& disc, const Mat& real, const Mat& fake);

// g_loss with dL/d_fake assigned for the generator pass. The backward sweep
// also deposits gradients in the discriminator parameters; they are stale
// by-products, and the discriminator step must zero its grads before using
// them.
double adversarial_g_backward(Discriminator& disc, const Mat& fake, Mat& d_fake);

}  // namespace handleforge
