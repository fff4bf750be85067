#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "handleforge/handle_model.hpp"
#include "handleforge/losses.hpp"
#include "handleforge/mat.hpp"
#include "handleforge/mesh_core.hpp"
#include "handleforge/nn.hpp"

namespace handleforge {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

enum class ScheduleKind { Cosine, Linear };

struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta;       // size T
    std::vector<double> alpha_bar;  // size T, running product of (1 - beta)
};

// Cosine schedule uses the squared-cosine alpha_bar curve with offset 0.008
// and betas clipped to 0.999; linear ramps beta from 1e-4 to 0.02.
DiffusionSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::Cosine);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise, t in [0, T).
Mat q_sample(const Mat& x0, int t, const Mat& noise, const DiffusionSchedule& sched);

// ---------------------------------------------------------------------------
// Motion <-> training tensor
// ---------------------------------------------------------------------------
//
// One row per frame, laid out as
//   [ t_local (3K) | r_local (6K) | t_global (3) | r_global (3) ]
// so a K-handle clip occupies 9K + 6 columns. Rows past the clip length are
// zero padding; frame_valid marks the real rows.

int motion_row_dim(int K);

Mat motion_to_tensor(const HandleMotion& motion, int rows,
                     std::vector<uint8_t>* frame_valid = nullptr);

// Inverse of motion_to_tensor for the first `frames` rows. Rotation columns
// are copied verbatim (no orthonormalization), so raw network output is fine.
HandleMotion tensor_to_motion(const Mat& x, int K, int frames, int fps);

// Slice one row of a motion tensor into a frame.
HandleFrame frame_from_tensor(const Mat& x, int row, int K);

// Split an (N x 3K) translation-offset tensor into per-frame K x 3 blocks.
std::vector<Mat> delta_blocks(const Mat& delta, int K, int frames);

// ---------------------------------------------------------------------------
// Text conditioning (toy embedder)
// ---------------------------------------------------------------------------

struct TextTokens {
    Mat tokens;                 // max_tokens x dim, zero rows where masked out
    std::vector<uint8_t> mask;  // 1 = real token
};

// Hash-seeded Gaussian word vectors: deterministic, shared across prompts,
// padded/truncated to max_tokens. Purely a stand-in for a learned encoder.
TextTokens text_embed(const std::string& prompt, int max_tokens = 30, int dim = 512);

// ---------------------------------------------------------------------------
// Denoiser network
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    int K = 30;
    int width = 64;
    int heads = 4;
    int layers = 2;
    int ffn = 128;
    int cond_dim = 512;   // text token / mesh feature width
    int text_tokens = 30;

    int row_dim() const { return 9 * K + 6; }
};

struct DenoiserParams {
    DenoiserConfig cfg;
    nn::ParamStore store;
};

DenoiserParams make_denoiser(const DenoiserConfig& cfg, uint64_t seed);

struct DenoiserInput {
    Mat x_t;                           // N x row_dim
    int t = 0;                         // schedule step
    Mat text;                          // text_tokens x cond_dim
    std::vector<uint8_t> text_mask;    // per text token; empty = all valid
    Mat mesh_feature;                  // 1 x cond_dim
    std::vector<uint8_t> frame_valid;  // per row of x_t; empty = all valid
};

struct DenoiserOutput {
    Mat x0_hat;     // N x row_dim, clean-sample prediction
    Mat delta_hat;  // N x 3K, per-handle translation offsets
};

struct DecoderLayerCache {
    Mat x_in;
    nn::LayerNormCache ln1;
    Mat n1;
    nn::MHACache sa;
    Mat x1;
    nn::LayerNormCache ln2;
    Mat n2;
    nn::MHACache ca;
    Mat x2;
    nn::LayerNormCache ln3;
    Mat n3;
    Mat r1;  // relu(ffn1(n3))
};

struct DenoiserCache {
    Mat cond_raw;    // (text_tokens + 1) x cond_dim
    Mat cond;        // projected + step embedding
    Mat self_mask;   // N x N additive
    Mat cross_mask;  // N x (text_tokens + 1) additive
    std::vector<DecoderLayerCache> layers;
    nn::LayerNormCache ln_f;
    Mat final_norm;
};

DenoiserOutput denoise(const DenoiserInput& in, const DenoiserParams& params,
                       DenoiserCache& cache);
DenoiserOutput denoise(const DenoiserInput& in, const DenoiserParams& params);

// Accumulates parameter gradients for the given output gradients; either
// gradient matrix may be empty (treated as zero).
void denoiser_backward(DenoiserParams& params, const DenoiserInput& in,
                       const DenoiserCache& cache, const Mat& d_x0_hat,
                       const Mat& d_delta_hat);

// ---------------------------------------------------------------------------
// Ancestral sampling
// ---------------------------------------------------------------------------

using DenoiseFn = std::function<DenoiserOutput(const Mat& x_t, int t)>;

// DDPM ancestral chain from pure noise, with the model predicting the clean
// sample at each step. Returns the final clean tensor and the delta tensor
// produced at the last step.
std::pair<Mat, Mat> sample_with(const DiffusionSchedule& sched, const DenoiseFn& fn,
                                int frames, int row_dim, int delta_dim, uint64_t seed);

HandleMotion sample(const DiffusionSchedule& sched, const DenoiserParams& params,
                    const TextTokens& text, const Mat& mesh_feature, int frames,
                    int fps, uint64_t seed);

// ---------------------------------------------------------------------------
// Regularizer plumbing (predicted tensor -> geometry losses)
// ---------------------------------------------------------------------------

// Spring smoothness of the handle trajectory induced by a predicted tensor.
// Gradients (overwritten) flow into both the motion tensor and the offsets.
double spring_loss_on_tensor(const Mat& x0_hat, const Mat& delta_hat, int frames,
                             const HandleSet& handles, const HandleAdjacency& adj,
                             double sigma, Mat* d_x0_hat = nullptr,
                             Mat* d_delta_hat = nullptr);

// Two consecutive predicted frames deforming a vertex subset, flattened to one
// row [frame f verts xyz... | frame f+1 verts xyz...] for the discriminator.
Mat fake_window(const Mat& x0_hat, const Mat& delta_hat, int frame,
                const std::vector<int>& ids, const Mesh& mesh,
                const SkinningWeights& s, const HandleSet& handles);

// Accumulates d_row back into the two tensor rows that produced the window.
void fake_window_backward(const Mat& x0_hat, const Mat& delta_hat, int frame,
                          const std::vector<int>& ids, const Mesh& mesh,
                          const SkinningWeights& s, const HandleSet& handles,
                          const Mat& d_row, Mat& d_x0_hat, Mat& d_delta_hat);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct MotionExample {
    HandleMotion motion;
    std::string text;
    Mat mesh_feature;  // 1 x cond_dim
    Mesh mesh;
    SkinningWeights skinning;
    HandleSet handles;
    HandleAdjacency adjacency;
    SyntheticRig rig;                  // drives the real batch for the critic
    std::vector<int> sample_vertices;  // empty = all
};

struct DiffusionTrainConfig {
    DenoiserConfig denoiser;
    int T = 1000;
    ScheduleKind schedule = ScheduleKind::Cosine;
    int steps = 1000;
    int batch = 32;
    double lr = 1e-4;
    int frames = 0;  // padded length; 0 = longest clip in the dataset
    int fps = 30;
    LossWeights weights;  // nu_h, nu_a, sigma
    int adv_vertices = 100;
    int adv_windows = 4;
    uint64_t seed = 0;
};

struct DiffusionStepLog {
    double motion = 0.0;
    double spring = 0.0;
    double adversarial = 0.0;
    double total = 0.0;
};

struct DiffusionTrainResult {
    DenoiserParams params;
    std::optional<Discriminator> critic;
    std::vector<DiffusionStepLog> curve;
};

DiffusionTrainResult train_diffusion(const std::vector<MotionExample>& dataset,
                                     const DiffusionTrainConfig& cfg);

// ---------------------------------------------------------------------------
// Offset-head fine-tuning
// ---------------------------------------------------------------------------

struct PseudoLabel {
    DenoiserInput input;
    Mat delta_target;  // N x 3K, compared on valid frames only
};

struct FinetuneConfig {
    int steps = 100;
    double lr = 1e-4;
};

// Gradient steps on the offset head only; every other parameter (including
// the clean-sample head) is left bitwise untouched.
std::vector<double> finetune_adaptation(DenoiserParams& params,
                                        const std::vector<PseudoLabel>& labels,
                                        const FinetuneConfig& cfg);

}  // namespace handleforge
