#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "handleforge/arap_adapter.hpp"
#include "handleforge/checkpoint.hpp"
#include "handleforge/config.hpp"
#include "handleforge/diffusion.hpp"
#include "handleforge/handle_predictor.hpp"
#include "handleforge/metrics.hpp"
#include "handleforge/synthetic.hpp"

// Orchestration shared by the command-line tool and the end-to-end tests:
// sidecar file formats, checkpoint adapters, dataset assembly from rigged
// characters, and the text-to-animation sampling path.

namespace handleforge {

// JSON sidecars for predicted rig data.
void save_skinning(const SkinningWeights& s, const std::filesystem::path& path);
SkinningWeights load_skinning(const std::filesystem::path& path);
void save_handle_set(const HandleSet& h, const std::filesystem::path& path);
HandleSet load_handle_set(const std::filesystem::path& path);
void save_feature(const Mat& feature, const std::filesystem::path& path);
Mat load_feature(const std::filesystem::path& path);

// Checkpoint adapters carrying the model geometry in metadata.
void save_predictor_checkpoint(const PredictorParams& params, uint64_t seed,
                               const std::filesystem::path& path);
PredictorParams load_predictor_checkpoint(const std::filesystem::path& path);

struct DenoiserCheckpoint {
    DenoiserParams params;
    int T = 1000;
    std::string schedule = "cosine";
    int fps = 20;
};
void save_denoiser_checkpoint(const DenoiserParams& params, int T,
                              const std::string& schedule, int fps, uint64_t seed,
                              const std::filesystem::path& path);
DenoiserCheckpoint load_denoiser_checkpoint(const std::filesystem::path& path);

// Scans a directory for <name>.obj / <name>.rig pairs, sorted by name.
std::vector<RigExample> load_rig_dir(const std::filesystem::path& dir);

// Diffusion training set from rigged characters: predicted skinning, handles
// and mesh feature, handle motion extracted from every pose clip, derived
// handle adjacency.
std::vector<MotionExample> build_motion_dataset(const std::vector<RigExample>& rigs,
                                                const PredictorParams& predictor);

// Offset-head supervision: per-clip adaptation offsets from the geometric
// optimizer, paired with a noised tensor at a random schedule step.
std::vector<PseudoLabel> build_finetune_labels(const std::vector<MotionExample>& dataset,
                                               const DenoiserConfig& cfg,
                                               const DiffusionSchedule& sched,
                                               const AdaptationConfig& adapt,
                                               uint64_t seed);

// Per-frame deformed vertex positions; offsets applied when the motion
// carries them and use_delta is set. threads > 1 splits frames across
// workers (results are identical to the single-threaded run).
std::vector<Mat> animate_frames(const Mesh& mesh, const SkinningWeights& s,
                                const HandleSet& handles, const HandleMotion& motion,
                                bool use_delta, int threads);

// Writes frame_%04d.obj files; returns the paths.
std::vector<std::filesystem::path> write_frames(const Mesh& mesh,
                                                const std::vector<Mat>& positions,
                                                const std::filesystem::path& out_dir);

// Full text-to-animation run: predict rig data, embed the prompt, sample a
// motion, deform, and write motion.hmo + frame OBJs + report.json.
struct SampleRequest {
    std::string prompt;
    Mesh mesh;  // normals ready
    PredictorParams predictor;
    DenoiserParams denoiser;
    DiffusionSchedule schedule;
    int frames = 16;
    int fps = 20;
    uint64_t seed = 0;
    int threads = 1;
};

struct SampleResult {
    HandleMotion motion;
    SkinningWeights skinning;
    HandleSet handles;
    MetricsReport report;
    std::filesystem::path motion_file;
    std::vector<std::filesystem::path> frame_files;
    std::filesystem::path report_file;
};

SampleResult run_sample(const SampleRequest& req, const std::filesystem::path& out_dir);

}  // namespace handleforge
