#include "handleforge/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "handleforge/error.hpp"

namespace handleforge {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Full-precision float formatting that still reads back as written.
std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Setter {
    std::function<void(PipelineConfig&, const std::string&, const std::string&)> apply;
};

[[noreturn]] void bad_value(const std::string& where, const std::string& key,
                            const std::string& raw) {
    fail("config " + where + ": invalid value for " + key + ": " + raw);
}

std::string parse_string(const std::string& where, const std::string& key,
                         const std::string& raw) {
    if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"')
        fail("config " + where + ": " + key + " must be a quoted string, got " + raw);
    return raw.substr(1, raw.size() - 2);
}

long long parse_int(const std::string& where, const std::string& key, const std::string& raw) {
    try {
        size_t used = 0;
        long long v = std::stoll(raw, &used);
        if (used != raw.size()) bad_value(where, key, raw);
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        bad_value(where, key, raw);
    }
}

double parse_float(const std::string& where, const std::string& key, const std::string& raw) {
    try {
        size_t used = 0;
        double v = std::stod(raw, &used);
        if (used != raw.size()) bad_value(where, key, raw);
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        bad_value(where, key, raw);
    }
}

using FieldMap = std::map<std::string, Setter>;

FieldMap build_fields() {
    FieldMap m;
    auto str = [&](const std::string& name, std::string PipelineConfig::* f) {
        m[name] = {[f, name](PipelineConfig& c, const std::string& w, const std::string& raw) {
            c.*f = parse_string(w, name, raw);
        }};
    };
    auto num_i = [&](const std::string& name, int PipelineConfig::* f) {
        m[name] = {[f, name](PipelineConfig& c, const std::string& w, const std::string& raw) {
            long long v = parse_int(w, name, raw);
            c.*f = static_cast<int>(v);
        }};
    };
    auto num_d = [&](const std::string& name, double PipelineConfig::* f) {
        m[name] = {[f, name](PipelineConfig& c, const std::string& w, const std::string& raw) {
            c.*f = parse_float(w, name, raw);
        }};
    };
    auto loss_d = [&](const std::string& name, double LossWeights::* f) {
        m[name] = {[f, name](PipelineConfig& c, const std::string& w, const std::string& raw) {
            c.weights.*f = parse_float(w, name, raw);
        }};
    };

    str("paths.mesh", &PipelineConfig::mesh);
    str("paths.rig", &PipelineConfig::rig);
    str("paths.checkpoints", &PipelineConfig::checkpoints);
    str("paths.output", &PipelineConfig::output);

    num_i("model.k", &PipelineConfig::k);
    num_i("model.t", &PipelineConfig::t);
    num_i("model.frames", &PipelineConfig::frames);
    str("model.schedule", &PipelineConfig::schedule);
    num_i("model.width", &PipelineConfig::width);
    num_i("model.heads", &PipelineConfig::heads);
    num_i("model.layers", &PipelineConfig::layers);
    num_i("model.ffn", &PipelineConfig::ffn);
    num_i("model.cond_dim", &PipelineConfig::cond_dim);
    num_i("model.text_tokens", &PipelineConfig::text_tokens);
    num_i("model.hidden", &PipelineConfig::hidden);

    num_i("train.steps", &PipelineConfig::steps);
    num_i("train.batch", &PipelineConfig::batch);
    num_d("train.lr", &PipelineConfig::lr);
    num_i("train.skinning_pairs", &PipelineConfig::skinning_pairs);
    m["train.seed"] = {[](PipelineConfig& c, const std::string& w, const std::string& raw) {
        c.seed = static_cast<uint64_t>(parse_int(w, "train.seed", raw));
    }};
    num_i("train.fps", &PipelineConfig::fps);
    num_i("train.threads", &PipelineConfig::threads);

    loss_d("losses.nu_p", &LossWeights::nu_p);
    loss_d("losses.nu_r", &LossWeights::nu_r);
    loss_d("losses.nu_h", &LossWeights::nu_h);
    loss_d("losses.nu_a", &LossWeights::nu_a);
    loss_d("losses.nu_v", &LossWeights::nu_v);
    loss_d("losses.sigma", &LossWeights::sigma);
    return m;
}

}  // namespace

PipelineConfig parse_config(const std::string& text, const std::string& origin) {
    static const FieldMap fields = build_fields();
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string where = origin + ":" + std::to_string(lineno);
        size_t hash = std::string::npos;
        bool in_quotes = false;
        for (size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_quotes = !in_quotes;
            if (line[i] == '#' && !in_quotes) {
                hash = i;
                break;
            }
        }
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("config " + where + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) fail("config " + where + ": empty section name");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) fail("config " + where + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string raw = trim(line.substr(eq + 1));
        if (key.empty() || raw.empty()) fail("config " + where + ": expected key = value");
        std::string full = section.empty() ? key : section + "." + key;
        auto it = fields.find(full);
        if (it == fields.end()) fail("config " + where + ": unknown key " + full);
        it->second.apply(cfg, where, raw);
    }

    require(cfg.k >= 1, "config " + origin + ": model.k must be >= 1");
    require(cfg.t >= 1, "config " + origin + ": model.t must be >= 1");
    require(cfg.frames >= 1, "config " + origin + ": model.frames must be >= 1");
    require(cfg.threads >= 1, "config " + origin + ": train.threads must be >= 1");
    schedule_kind(cfg.schedule);  // validates the name
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    require(f.good(), "load_config: cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), path.filename().string());
}

std::string format_config(const PipelineConfig& c) {
    std::ostringstream o;
    o << "[paths]\n";
    o << "mesh = \"" << c.mesh << "\"\n";
    o << "rig = \"" << c.rig << "\"\n";
    o << "checkpoints = \"" << c.checkpoints << "\"\n";
    o << "output = \"" << c.output << "\"\n\n";
    o << "[model]\n";
    o << "k = " << c.k << "\n";
    o << "t = " << c.t << "\n";
    o << "frames = " << c.frames << "\n";
    o << "schedule = \"" << c.schedule << "\"\n";
    o << "width = " << c.width << "\n";
    o << "heads = " << c.heads << "\n";
    o << "layers = " << c.layers << "\n";
    o << "ffn = " << c.ffn << "\n";
    o << "cond_dim = " << c.cond_dim << "\n";
    o << "text_tokens = " << c.text_tokens << "\n";
    o << "hidden = " << c.hidden << "\n\n";
    o << "[train]\n";
    o << "steps = " << c.steps << "\n";
    o << "batch = " << c.batch << "\n";
    o << "lr = " << fmt_double(c.lr) << "\n";
    o << "skinning_pairs = " << c.skinning_pairs << "\n";
    o << "seed = " << c.seed << "\n";
    o << "fps = " << c.fps << "\n";
    o << "threads = " << c.threads << "\n\n";
    o << "[losses]\n";
    o << "nu_p = " << fmt_double(c.weights.nu_p) << "\n";
    o << "nu_r = " << fmt_double(c.weights.nu_r) << "\n";
    o << "nu_h = " << fmt_double(c.weights.nu_h) << "\n";
    o << "nu_a = " << fmt_double(c.weights.nu_a) << "\n";
    o << "nu_v = " << fmt_double(c.weights.nu_v) << "\n";
    o << "sigma = " << fmt_double(c.weights.sigma) << "\n";
    return o.str();
}

void save_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
    std::ofstream f(path);
    require(f.good(), "save_config: cannot open " + path.string());
    f << format_config(cfg);
    require(f.good(), "save_config: write failed for " + path.string());
}

uint64_t effective_seed(const PipelineConfig& cfg) {
    const char* env = std::getenv("HANDLEFORGE_SEED");
    if (env == nullptr || *env == '\0') return cfg.seed;
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    require(end != nullptr && *end == '\0',
            std::string("HANDLEFORGE_SEED is not an integer: ") + env);
    return static_cast<uint64_t>(v);
}

ScheduleKind schedule_kind(const std::string& name) {
    if (name == "cosine") return ScheduleKind::Cosine;
    if (name == "linear") return ScheduleKind::Linear;
    fail("unknown schedule: " + name + " (expected cosine or linear)");
}

}  // namespace handleforge
