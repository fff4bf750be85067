#pragma once

#include <cstdint>

#include "handleforge/mesh_core.hpp"
#include "handleforge/motion_extraction.hpp"

namespace handleforge {

// Procedural test characters: a vertical tube torso with tube limbs bridged
// onto its surface, ground-truth skeletal skinning, limb tags, and
// sinusoidal pose clips with prompt strings. Everything derives from `seed`.
struct SynthConfig {
    int limbs = 4;  // 2..6
    int ring_segments = 6;
    int torso_rings = 4;
    int limb_rings = 3;
    double torso_radius = 0.3;
    double torso_length = 1.2;
    double limb_radius = 0.1;
    double limb_length = 0.8;
    double proportion_jitter = 0.25;  // relative per-limb size variation
    int seq_frames = 16;
    int fps = 20;
    uint64_t seed = 0;
};

struct SynthCharacter {
    Mesh mesh;  // normals populated
    SyntheticRig rig;
};

SynthCharacter gen_character(const SynthConfig& cfg);

}  // namespace handleforge
