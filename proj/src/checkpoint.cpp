#include "handleforge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "handleforge/error.hpp"
#include "handleforge/rng.hpp"

namespace handleforge {

namespace {
constexpr char kMagic[8] = {'H', 'F', 'C', 'K', 'P', 'T', '0', '1'};
}

void save_checkpoint(const nn::ParamStore& store,
                     const std::map<std::string, std::string>& meta,
                     const std::filesystem::path& path) {
    nlohmann::json header;
    header["params"] = nlohmann::json::array();
    for (const nn::Param* p : store.all()) {
        header["params"].push_back(
            {{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
    }
    header["meta"] = meta;
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    require(f.good(), "save_checkpoint: cannot open " + path.string());
    f.write(kMagic, 8);
    uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const nn::Param* p : store.all()) {
        f.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    require(f.good(), "save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "load_checkpoint: cannot open " + path.string());

    char magic[8];
    f.read(magic, 8);
    require(f.good() && std::memcmp(magic, kMagic, 8) == 0,
            "load_checkpoint: bad magic in " + path.string());

    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    require(f.good() && hlen > 0 && hlen < (1ULL << 30),
            "load_checkpoint: bad header length in " + path.string());
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    require(f.good(), "load_checkpoint: truncated header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const std::exception& e) {
        fail("load_checkpoint: header is not valid JSON in " + path.string() + ": " + e.what());
    }

    Checkpoint ck;
    for (const auto& [k, v] : header.at("meta").items())
        ck.meta[k] = v.get<std::string>();
    for (const auto& entry : header.at("params")) {
        std::string name = entry.at("name").get<std::string>();
        int rows = entry.at("rows").get<int>();
        int cols = entry.at("cols").get<int>();
        require(rows >= 0 && cols >= 0, "load_checkpoint: negative shape for " + name);
        nn::Param& p = ck.store.create(name, rows, cols);
        f.read(reinterpret_cast<char*>(p.value.data()),
               static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        require(f.good(), "load_checkpoint: truncated data for " + name + " in " + path.string());
    }
    return ck;
}

uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "file_hash: cannot open " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        h = fnv1a(buf, static_cast<size_t>(f.gcount()), h);
        if (f.eof()) break;
    }
    return h;
}

int meta_int(const Checkpoint& ck, const std::string& key) {
    auto it = ck.meta.find(key);
    require(it != ck.meta.end(), "checkpoint meta missing key: " + key);
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        fail("checkpoint meta key " + key + " is not an integer: " + it->second);
    }
}

double meta_double(const Checkpoint& ck, const std::string& key) {
    auto it = ck.meta.find(key);
    require(it != ck.meta.end(), "checkpoint meta missing key: " + key);
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        fail("checkpoint meta key " + key + " is not a number: " + it->second);
    }
}

}  // namespace handleforge
