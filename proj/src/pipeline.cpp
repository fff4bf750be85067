#include "handleforge/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

#include "handleforge/error.hpp"
#include "handleforge/motion_extraction.hpp"
#include "handleforge/rng.hpp"

namespace handleforge {

namespace {

nlohmann::json mat_to_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Mat mat_from_json(const nlohmann::json& rows, const std::string& what) {
    require(rows.is_array(), what + ": expected an array of rows");
    int R = static_cast<int>(rows.size());
    int C = R > 0 ? static_cast<int>(rows[0].size()) : 0;
    Mat m(R, C);
    for (int r = 0; r < R; ++r) {
        require(rows[r].is_array() && static_cast<int>(rows[r].size()) == C,
                what + ": ragged rows");
        for (int c = 0; c < C; ++c) m(r, c) = rows[r][c].get<double>();
    }
    return m;
}

nlohmann::json read_json(const std::filesystem::path& path, const std::string& what) {
    std::ifstream f(path);
    require(f.good(), what + ": cannot open " + path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const std::exception& e) {
        fail(what + ": invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path,
                const std::string& what) {
    std::ofstream f(path);
    require(f.good(), what + ": cannot open " + path.string());
    f << j.dump(2) << "\n";
    require(f.good(), what + ": write failed for " + path.string());
}

}  // namespace

void save_skinning(const SkinningWeights& s, const std::filesystem::path& path) {
    write_json({{"weights", mat_to_json(s.weights)}}, path, "save_skinning");
}

SkinningWeights load_skinning(const std::filesystem::path& path) {
    nlohmann::json j = read_json(path, "load_skinning");
    SkinningWeights s{mat_from_json(j.at("weights"), "load_skinning")};
    validate_weights(s);
    return s;
}

void save_handle_set(const HandleSet& h, const std::filesystem::path& path) {
    nlohmann::json j;
    j["positions"] = mat_to_json(h.positions);
    j["active"] = nlohmann::json::array();
    for (bool a : h.active) j["active"].push_back(a);
    write_json(j, path, "save_handle_set");
}

HandleSet load_handle_set(const std::filesystem::path& path) {
    nlohmann::json j = read_json(path, "load_handle_set");
    HandleSet h;
    h.positions = mat_from_json(j.at("positions"), "load_handle_set");
    require(h.positions.cols() == 3, "load_handle_set: positions must be K x 3");
    for (const auto& a : j.at("active")) h.active.push_back(a.get<bool>());
    require(static_cast<int>(h.active.size()) == h.positions.rows(),
            "load_handle_set: active mask size mismatch");
    return h;
}

void save_feature(const Mat& feature, const std::filesystem::path& path) {
    require(feature.rows() == 1, "save_feature: expected a 1 x D row");
    write_json({{"feature", mat_to_json(feature)[0]}}, path, "save_feature");
}

Mat load_feature(const std::filesystem::path& path) {
    nlohmann::json j = read_json(path, "load_feature");
    const auto& arr = j.at("feature");
    require(arr.is_array() && !arr.empty(), "load_feature: feature must be a non-empty array");
    Mat f(1, static_cast<int>(arr.size()));
    for (int c = 0; c < f.cols(); ++c) f(0, c) = arr[c].get<double>();
    return f;
}

void save_predictor_checkpoint(const PredictorParams& params, uint64_t seed,
                               const std::filesystem::path& path) {
    std::map<std::string, std::string> meta{
        {"kind", "predictor"},
        {"k", std::to_string(params.K)},
        {"hidden", std::to_string(params.hidden)},
        {"feature_dim", std::to_string(params.feature_dim)},
        {"seed", std::to_string(seed)},
    };
    save_checkpoint(params.store, meta, path);
}

PredictorParams load_predictor_checkpoint(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    require(ck.meta.count("kind") && ck.meta.at("kind") == "predictor",
            "load_predictor_checkpoint: " + path.string() + " is not a predictor checkpoint");
    PredictorParams p = make_predictor(meta_int(ck, "k"), meta_int(ck, "hidden"),
                                       meta_int(ck, "feature_dim"), 0);
    for (nn::Param* dst : p.store.all()) {
        require(ck.store.contains(dst->name),
                "load_predictor_checkpoint: missing parameter " + dst->name);
        const Mat& src = ck.store.at(dst->name).value;
        require(src.same_shape(dst->value),
                "load_predictor_checkpoint: shape mismatch for " + dst->name);
        dst->value = src;
    }
    return p;
}

void save_denoiser_checkpoint(const DenoiserParams& params, int T,
                              const std::string& schedule, int fps, uint64_t seed,
                              const std::filesystem::path& path) {
    schedule_kind(schedule);  // validate before persisting
    const DenoiserConfig& c = params.cfg;
    std::map<std::string, std::string> meta{
        {"kind", "denoiser"},
        {"k", std::to_string(c.K)},
        {"width", std::to_string(c.width)},
        {"heads", std::to_string(c.heads)},
        {"layers", std::to_string(c.layers)},
        {"ffn", std::to_string(c.ffn)},
        {"cond_dim", std::to_string(c.cond_dim)},
        {"text_tokens", std::to_string(c.text_tokens)},
        {"t", std::to_string(T)},
        {"schedule", schedule},
        {"fps", std::to_string(fps)},
        {"seed", std::to_string(seed)},
    };
    save_checkpoint(params.store, meta, path);
}

DenoiserCheckpoint load_denoiser_checkpoint(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    require(ck.meta.count("kind") && ck.meta.at("kind") == "denoiser",
            "load_denoiser_checkpoint: " + path.string() + " is not a denoiser checkpoint");
    DenoiserConfig cfg;
    cfg.K = meta_int(ck, "k");
    cfg.width = meta_int(ck, "width");
    cfg.heads = meta_int(ck, "heads");
    cfg.layers = meta_int(ck, "layers");
    cfg.ffn = meta_int(ck, "ffn");
    cfg.cond_dim = meta_int(ck, "cond_dim");
    cfg.text_tokens = meta_int(ck, "text_tokens");

    DenoiserCheckpoint out{make_denoiser(cfg, 0), meta_int(ck, "t"),
                           ck.meta.at("schedule"), meta_int(ck, "fps")};
    schedule_kind(out.schedule);
    for (nn::Param* dst : out.params.store.all()) {
        require(ck.store.contains(dst->name),
                "load_denoiser_checkpoint: missing parameter " + dst->name);
        const Mat& src = ck.store.at(dst->name).value;
        require(src.same_shape(dst->value),
                "load_denoiser_checkpoint: shape mismatch for " + dst->name);
        dst->value = src;
    }
    return out;
}

std::vector<RigExample> load_rig_dir(const std::filesystem::path& dir) {
    require(std::filesystem::is_directory(dir),
            "load_rig_dir: not a directory: " + dir.string());
    std::vector<std::filesystem::path> objs;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".obj")
            objs.push_back(entry.path());
    std::sort(objs.begin(), objs.end());
    require(!objs.empty(), "load_rig_dir: no .obj files in " + dir.string());

    std::vector<RigExample> out;
    for (const auto& obj : objs) {
        std::filesystem::path rig = obj;
        rig.replace_extension(".rig");
        require(std::filesystem::exists(rig),
                "load_rig_dir: missing rig file for " + obj.string());
        RigExample ex;
        ex.mesh = load_obj(obj);
        compute_normals(ex.mesh);
        ex.rig = load_rig(rig);
        validate_rig(ex.rig, ex.mesh.vertex_count());
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<MotionExample> build_motion_dataset(const std::vector<RigExample>& rigs,
                                                const PredictorParams& predictor) {
    std::vector<MotionExample> out;
    for (const RigExample& rx : rigs) {
        require(!rx.rig.sequences.empty(),
                "build_motion_dataset: a rig has no pose sequences");
        PredictorOutput pred = predict(rx.mesh, predictor);
        HandleAdjacency adj = derive_adjacency(rx.mesh, pred.skinning);
        for (const PoseSequence& seq : rx.rig.sequences) {
            std::vector<PosedMesh> posed;
            posed.reserve(seq.poses.size());
            for (const Pose& p : seq.poses) posed.push_back(skeletal_pose(rx.mesh, rx.rig, p));
            MotionExample ex;
            ex.motion = fit_sequence(rx.mesh.vertices, posed, pred.skinning, pred.handles,
                                     seq.fps);
            ex.text = seq.text;
            ex.mesh_feature = pred.feature;
            ex.mesh = rx.mesh;
            ex.skinning = pred.skinning;
            ex.handles = pred.handles;
            ex.adjacency = adj;
            ex.rig = rx.rig;
            out.push_back(std::move(ex));
        }
    }
    return out;
}

std::vector<PseudoLabel> build_finetune_labels(const std::vector<MotionExample>& dataset,
                                               const DenoiserConfig& cfg,
                                               const DiffusionSchedule& sched,
                                               const AdaptationConfig& adapt,
                                               uint64_t seed) {
    require(!dataset.empty(), "build_finetune_labels: empty dataset");
    RandomStream rng(seed ^ 0x6c6162656cULL);
    std::vector<PseudoLabel> out;
    for (const MotionExample& ex : dataset) {
        require(ex.motion.K() == cfg.K,
                "build_finetune_labels: dataset K does not match the model");
        int frames = ex.motion.frame_count();
        Mat x0 = motion_to_tensor(ex.motion, frames);
        Mat noise(x0.rows(), x0.cols());
        rng.fill_normal(noise.data(), noise.size());

        PseudoLabel label;
        label.input.t = rng.uniform_int(0, sched.T - 1);
        label.input.x_t = q_sample(x0, label.input.t, noise, sched);
        TextTokens text = text_embed(ex.text, cfg.text_tokens, cfg.cond_dim);
        label.input.text = text.tokens;
        label.input.text_mask = text.mask;
        label.input.mesh_feature = ex.mesh_feature;

        std::vector<Mat> deltas =
            build_pseudo_labels(ex.mesh, ex.skinning, ex.handles, ex.motion, adapt);
        label.delta_target = Mat(frames, 3 * cfg.K);
        for (int n = 0; n < frames; ++n)
            for (int k = 0; k < cfg.K; ++k)
                for (int c = 0; c < 3; ++c)
                    label.delta_target(n, 3 * k + c) = deltas[n](k, c);
        out.push_back(std::move(label));
    }
    return out;
}

std::vector<Mat> animate_frames(const Mesh& mesh, const SkinningWeights& s,
                                const HandleSet& handles, const HandleMotion& motion,
                                bool use_delta, int threads) {
    validate_motion(motion);
    bool delta = use_delta && motion.has_delta();
    int N = motion.frame_count();
    std::vector<Mat> out(N);
    auto work = [&](int begin, int end) {
        for (int n = begin; n < end; ++n) {
            HandleFrame frame = motion.frames[n];
            if (delta) frame = apply_adaptation(frame, motion.delta[n]);
            out[n] = deform(mesh.vertices, s, handles, frame);
        }
    };
    threads = std::max(1, std::min(threads, N));
    if (threads == 1) {
        work(0, N);
    } else {
        std::vector<std::thread> pool;
        int chunk = (N + threads - 1) / threads;
        for (int i = 0; i < threads; ++i)
            pool.emplace_back(work, std::min(i * chunk, N), std::min((i + 1) * chunk, N));
        for (auto& th : pool) th.join();
    }
    return out;
}

std::vector<std::filesystem::path> write_frames(const Mesh& mesh,
                                                const std::vector<Mat>& positions,
                                                const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> files;
    for (size_t n = 0; n < positions.size(); ++n) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04zu.obj", n);
        files.push_back(out_dir / name);
        save_obj(mesh, positions[n], files.back());
    }
    return files;
}

SampleResult run_sample(const SampleRequest& req, const std::filesystem::path& out_dir) {
    require(!req.prompt.empty(), "run_sample: empty prompt");
    require(req.frames >= 1 && req.frames <= kMaxMotionFrames,
            "run_sample: frames out of range");
    std::filesystem::create_directories(out_dir);

    PredictorOutput pred = predict(req.mesh, req.predictor);
    require(req.predictor.feature_dim == req.denoiser.cfg.cond_dim,
            "run_sample: predictor feature width does not match the denoiser condition width");
    require(req.predictor.K == req.denoiser.cfg.K,
            "run_sample: predictor and denoiser disagree on the handle count");

    TextTokens text = text_embed(req.prompt, req.denoiser.cfg.text_tokens,
                                 req.denoiser.cfg.cond_dim);
    SampleResult res;
    res.motion = sample(req.schedule, req.denoiser, text, pred.feature, req.frames,
                        req.fps, req.seed);
    res.skinning = pred.skinning;
    res.handles = pred.handles;

    res.motion_file = out_dir / "motion.hmo";
    save_hmo(res.motion, res.motion_file);

    std::vector<Mat> positions =
        animate_frames(req.mesh, pred.skinning, pred.handles, res.motion, true, req.threads);
    res.frame_files = write_frames(req.mesh, positions, out_dir);

    EdgeSet edges = edge_set(req.mesh);
    res.report.arap_loss = arap_loss_metric(req.mesh, positions, edges);
    res.report.frames = req.frames;
    res.report.edges = edges.count();
    res.report_file = out_dir / "report.json";
    save_report(res.report, res.report_file);
    return res;
}

}  // namespace handleforge
