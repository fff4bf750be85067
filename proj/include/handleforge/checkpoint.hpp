#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "handleforge/nn.hpp"

namespace handleforge {

// Parameter snapshot: a small JSON header (parameter names, shapes, string
// metadata) followed by raw little-endian float64 values in insertion
// order. Metadata carries whatever the trainer needs to rebuild its model
// (dimensions, schedule, seed) as plain strings.
struct Checkpoint {
    nn::ParamStore store;
    std::map<std::string, std::string> meta;
};

void save_checkpoint(const nn::ParamStore& store,
                     const std::map<std::string, std::string>& meta,
                     const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the raw file bytes. Stage-freeze checks compare these to
// prove an input checkpoint was not rewritten.
uint64_t file_hash(const std::filesystem::path& path);

// Convenience for meta maps.
int meta_int(const Checkpoint& ck, const std::string& key);
double meta_double(const Checkpoint& ck, const std::string& key);

}  // namespace handleforge
