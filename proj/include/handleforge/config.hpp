#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "handleforge/diffusion.hpp"
#include "handleforge/losses.hpp"

namespace handleforge {

// Every knob the pipeline exposes, with the shipping defaults. Loaded from
// a small TOML-style file ([section] headers, key = value lines, # comments;
// values are ints, floats, booleans, or quoted strings).
struct PipelineConfig {
    // [paths]
    std::string mesh;
    std::string rig;
    std::string checkpoints = ".";
    std::string output = ".";

    // [model]
    int k = 30;           // handles
    int t = 1000;         // diffusion steps
    int frames = 196;     // padded motion length
    std::string schedule = "cosine";
    int width = 64;
    int heads = 4;
    int layers = 2;
    int ffn = 128;
    int cond_dim = 512;
    int text_tokens = 30;
    int hidden = 64;      // predictor GCN width

    // [train]
    int steps = 1000;
    int batch = 32;
    double lr = 1e-4;
    int skinning_pairs = 256;
    uint64_t seed = 0;
    int fps = 20;
    int threads = 1;

    // [losses]
    LossWeights weights;  // nu_p 1.0, nu_r 0.1, nu_h 0.001, nu_a 0.1, nu_v 10.0, sigma 0
};

PipelineConfig parse_config(const std::string& text, const std::string& origin);
PipelineConfig load_config(const std::filesystem::path& path);

// Canonical form; load_config(save_config(c)) reproduces every field.
std::string format_config(const PipelineConfig& cfg);
void save_config(const PipelineConfig& cfg, const std::filesystem::path& path);

// The configured seed unless the HANDLEFORGE_SEED environment variable is a
// valid integer, which wins.
uint64_t effective_seed(const PipelineConfig& cfg);

ScheduleKind schedule_kind(const std::string& name);

}  // namespace handleforge
