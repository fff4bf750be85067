#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "handleforge/error.hpp"
#include "handleforge/pipeline.hpp"

namespace fs = std::filesystem;
using namespace handleforge;

namespace {

uint64_t seed_with_env_override(uint64_t cli_seed) {
    PipelineConfig probe;
    probe.seed = cli_seed;
    return effective_seed(probe);
}

std::vector<Mat> load_frames_dir(const Mesh& rest, const fs::path& dir) {
    require(fs::is_directory(dir), "frames dir not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".obj") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    require(!files.empty(), "no .obj frames in " + dir.string());
    std::vector<Mat> out;
    for (const auto& f : files) {
        Mesh frame = load_obj(f);
        require(frame.vertex_count() == rest.vertex_count(),
                "frame " + f.string() + " has a different vertex count than the rest mesh");
        out.push_back(frame.vertices);
    }
    return out;
}

Mat motion_dir_samples(const fs::path& dir, int* K_seen) {
    require(fs::is_directory(dir), "motion dir not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".hmo") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    require(!files.empty(), "no .hmo motions in " + dir.string());

    std::vector<Mat> rows;
    int K = *K_seen;
    for (const auto& f : files) {
        HandleMotion m = load_hmo(f);
        if (K == 0) K = m.K();
        require(m.K() == K, "motion " + f.string() + " has a different handle count");
        Mat x = motion_to_tensor(m, m.frame_count());
        for (int r = 0; r < x.rows(); ++r) {
            Mat row(1, x.cols());
            for (int c = 0; c < x.cols(); ++c) row(0, c) = x(r, c);
            rows.push_back(std::move(row));
        }
    }
    *K_seen = K;
    Mat samples(static_cast<int>(rows.size()), rows[0].cols());
    for (size_t r = 0; r < rows.size(); ++r)
        for (int c = 0; c < samples.cols(); ++c) samples(static_cast<int>(r), c) = rows[r](0, c);
    return samples;
}

// ---------------------------------------------------------------------------

struct GenOpts {
    std::string out;
    int count = 1;
    int limbs = 0;  // 0 = cycle 2..6
    int seq_frames = 16;
    int fps = 20;
    int segments = 6;
    uint64_t seed = 0;
};

void cmd_gen(const GenOpts& o) {
    fs::create_directories(o.out);
    for (int i = 0; i < o.count; ++i) {
        SynthConfig cfg;
        cfg.limbs = o.limbs != 0 ? o.limbs : 2 + i % 5;
        cfg.ring_segments = o.segments;
        cfg.seq_frames = o.seq_frames;
        cfg.fps = o.fps;
        cfg.seed = seed_with_env_override(o.seed) + static_cast<uint64_t>(i);
        SynthCharacter ch = gen_character(cfg);

        char name[32];
        std::snprintf(name, sizeof(name), "char_%03d", i);
        fs::path obj = fs::path(o.out) / (std::string(name) + ".obj");
        fs::path rig = fs::path(o.out) / (std::string(name) + ".rig");
        save_obj(ch.mesh, ch.mesh.vertices, obj);
        save_rig(ch.rig, rig);
        std::printf("%s %d vertices, %d joints, %zu clips\n", obj.string().c_str(),
                    ch.mesh.vertex_count(), ch.rig.J(), ch.rig.sequences.size());
    }
}

struct PredictOpts {
    std::string mesh, checkpoint, out;
    bool normalize = false;
};

void cmd_predict(const PredictOpts& o) {
    Mesh mesh = load_obj(o.mesh);
    if (o.normalize) normalize_unit_box(mesh);
    compute_normals(mesh);
    PredictorParams params = load_predictor_checkpoint(o.checkpoint);
    PredictorOutput pred = predict(mesh, params);

    fs::create_directories(o.out);
    fs::path sp = fs::path(o.out) / "skinning.json";
    fs::path hp = fs::path(o.out) / "handles.json";
    fs::path fp = fs::path(o.out) / "feature.json";
    save_skinning(pred.skinning, sp);
    save_handle_set(pred.handles, hp);
    save_feature(pred.feature, fp);

    int active = 0;
    for (bool a : pred.handles.active) active += a ? 1 : 0;
    std::printf("%s\n%s\n%s\n", sp.string().c_str(), hp.string().c_str(), fp.string().c_str());
    std::printf("%d handles (%d active) over %d vertices\n", pred.skinning.K(), active,
                pred.skinning.V());
}

struct ExtractOpts {
    std::string mesh, rig, out;
    std::string skinning, handles;
    std::string sequence;  // empty = all
    bool use_rig_skinning = false;
    bool local_only = false;
};

void cmd_extract(const ExtractOpts& o) {
    Mesh mesh = load_obj(o.mesh);
    compute_normals(mesh);
    SyntheticRig rig = load_rig(o.rig);
    validate_rig(rig, mesh.vertex_count());

    SkinningWeights s;
    HandleSet h;
    if (o.use_rig_skinning) {
        s = SkinningWeights{rig.skeletal_skinning};
        h = handle_positions(s, mesh.vertices);
    } else {
        require(!o.skinning.empty() && !o.handles.empty(),
                "extract needs --skinning and --handles, or --use-rig-skinning");
        s = load_skinning(o.skinning);
        h = load_handle_set(o.handles);
        require(s.V() == mesh.vertex_count(), "skinning rows do not match the mesh");
        require(h.K() == s.K(), "handle count does not match the skinning");
    }

    fs::create_directories(o.out);
    FitOptions fit;
    fit.local_only = o.local_only;
    int written = 0;
    for (const PoseSequence& seq : rig.sequences) {
        if (!o.sequence.empty() && seq.name != o.sequence) continue;
        std::vector<PosedMesh> posed;
        posed.reserve(seq.poses.size());
        for (const Pose& p : seq.poses) posed.push_back(skeletal_pose(mesh, rig, p));
        HandleMotion motion = fit_sequence(mesh.vertices, posed, s, h, seq.fps, fit);
        fs::path out = fs::path(o.out) / (seq.name + ".hmo");
        save_hmo(motion, out);
        std::printf("%s %d frames\n", out.string().c_str(), motion.frame_count());
        ++written;
    }
    require(written > 0, o.sequence.empty() ? "rig has no pose sequences"
                                            : "no sequence named " + o.sequence);
}

struct AnimateOpts {
    std::string mesh, skinning, handles, motion, out;
    bool no_delta = false;
    int threads = 1;
};

void cmd_animate(const AnimateOpts& o) {
    Mesh mesh = load_obj(o.mesh);
    SkinningWeights s = load_skinning(o.skinning);
    HandleSet h = load_handle_set(o.handles);
    HandleMotion motion = load_hmo(o.motion);
    require(s.V() == mesh.vertex_count(), "skinning rows do not match the mesh");
    require(h.K() == s.K(), "handle count does not match the skinning");
    require(motion.K() == s.K(), "motion handle count does not match the skinning");

    std::vector<Mat> positions = animate_frames(mesh, s, h, motion, !o.no_delta, o.threads);
    std::vector<fs::path> files = write_frames(mesh, positions, o.out);
    std::printf("%zu frames written under %s\n", files.size(), o.out.c_str());
}

struct SampleOpts {
    std::string prompt, mesh, predictor, denoiser, out;
    int frames = 16;
    int fps = 0;  // 0 = checkpoint fps
    uint64_t seed = 0;
    int threads = 1;
    bool normalize = false;
};

void cmd_sample(const SampleOpts& o) {
    SampleRequest req;
    req.prompt = o.prompt;
    req.mesh = load_obj(o.mesh);
    if (o.normalize) normalize_unit_box(req.mesh);
    compute_normals(req.mesh);
    req.predictor = load_predictor_checkpoint(o.predictor);

    DenoiserCheckpoint ck = load_denoiser_checkpoint(o.denoiser);
    req.denoiser = std::move(ck.params);
    req.schedule = make_schedule(ck.T, schedule_kind(ck.schedule));
    req.frames = o.frames;
    req.fps = o.fps != 0 ? o.fps : ck.fps;
    req.seed = seed_with_env_override(o.seed);
    req.threads = o.threads;

    SampleResult res = run_sample(req, o.out);
    std::printf("%s\n", res.motion_file.string().c_str());
    for (const auto& f : res.frame_files) std::printf("%s\n", f.string().c_str());
    std::printf("%s\n", res.report_file.string().c_str());
    std::printf("arap_loss %.9g over %d frames\n", res.report.arap_loss, res.report.frames);
}

struct TrainOpts {
    std::string stage, config, data, out;
    std::string predictor, denoiser;
};

void cmd_train(const TrainOpts& o) {
    PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    uint64_t seed = effective_seed(cfg);
    std::vector<RigExample> rigs = load_rig_dir(o.data);

    if (o.stage == "predictor") {
        PredictorTrainConfig tc;
        tc.K = cfg.k;
        tc.hidden = cfg.hidden;
        tc.feature_dim = cfg.cond_dim;
        tc.steps = cfg.steps;
        tc.lr = cfg.lr;
        tc.skinning_pairs = cfg.skinning_pairs;
        tc.weights = cfg.weights;
        tc.seed = seed;
        PredictorTrainResult res = train_predictor(rigs, tc);
        save_predictor_checkpoint(res.params, seed, o.out);
        std::printf("%s\n", o.out.c_str());
        std::printf("loss %.6g -> %.6g over %zu steps\n", res.curve.front().total,
                    res.curve.back().total, res.curve.size());
        return;
    }

    if (o.stage == "diffusion") {
        require(!o.predictor.empty(), "train --stage diffusion needs --predictor");
        uint64_t hash_before = file_hash(o.predictor);
        PredictorParams pred = load_predictor_checkpoint(o.predictor);
        require(pred.K == cfg.k,
                "config model.k does not match the predictor checkpoint handle count");
        require(pred.feature_dim == cfg.cond_dim,
                "config model.cond_dim does not match the predictor feature width");

        std::vector<MotionExample> data = build_motion_dataset(rigs, pred);
        DiffusionTrainConfig dc;
        dc.denoiser.K = cfg.k;
        dc.denoiser.width = cfg.width;
        dc.denoiser.heads = cfg.heads;
        dc.denoiser.layers = cfg.layers;
        dc.denoiser.ffn = cfg.ffn;
        dc.denoiser.cond_dim = cfg.cond_dim;
        dc.denoiser.text_tokens = cfg.text_tokens;
        dc.T = cfg.t;
        dc.schedule = schedule_kind(cfg.schedule);
        dc.steps = cfg.steps;
        dc.batch = cfg.batch;
        dc.lr = cfg.lr;
        dc.frames = cfg.frames;
        dc.fps = cfg.fps;
        dc.weights = cfg.weights;
        dc.seed = seed;
        DiffusionTrainResult res = train_diffusion(data, dc);
        save_denoiser_checkpoint(res.params, cfg.t, cfg.schedule, cfg.fps, seed, o.out);

        uint64_t hash_after = file_hash(o.predictor);
        require(hash_before == hash_after,
                "predictor checkpoint changed during the diffusion stage");
        std::printf("%s\n", o.out.c_str());
        std::printf("predictor checkpoint unchanged (hash %016llx)\n",
                    static_cast<unsigned long long>(hash_after));
        std::printf("loss %.6g -> %.6g over %zu steps\n", res.curve.front().total,
                    res.curve.back().total, res.curve.size());
        return;
    }

    if (o.stage == "finetune") {
        require(!o.predictor.empty(), "train --stage finetune needs --predictor");
        require(!o.denoiser.empty(), "train --stage finetune needs --denoiser");
        PredictorParams pred = load_predictor_checkpoint(o.predictor);
        DenoiserCheckpoint ck = load_denoiser_checkpoint(o.denoiser);
        require(pred.K == ck.params.cfg.K,
                "predictor and denoiser checkpoints disagree on the handle count");

        std::vector<MotionExample> data = build_motion_dataset(rigs, pred);
        DiffusionSchedule sched = make_schedule(ck.T, schedule_kind(ck.schedule));
        AdaptationConfig adapt;
        adapt.nu_v = cfg.weights.nu_v;
        std::vector<PseudoLabel> labels =
            build_finetune_labels(data, ck.params.cfg, sched, adapt, seed);

        FinetuneConfig fc;
        fc.steps = cfg.steps;
        fc.lr = cfg.lr;
        std::vector<double> curve = finetune_adaptation(ck.params, labels, fc);
        save_denoiser_checkpoint(ck.params, ck.T, ck.schedule, ck.fps, seed, o.out);
        std::printf("%s\n", o.out.c_str());
        std::printf("offset loss %.6g -> %.6g over %zu steps\n", curve.front(), curve.back(),
                    curve.size());
        return;
    }

    fail("unknown stage: " + o.stage + " (expected predictor, diffusion, or finetune)");
}

struct MetricsOpts {
    std::string mesh, frames_dir, out;
    std::string real_motions, gen_motions;
};

void cmd_metrics(const MetricsOpts& o) {
    Mesh mesh = load_obj(o.mesh);
    std::vector<Mat> frames = load_frames_dir(mesh, o.frames_dir);
    EdgeSet edges = edge_set(mesh);

    MetricsReport report;
    report.arap_loss = arap_loss_metric(mesh, frames, edges);
    report.frames = static_cast<int>(frames.size());
    report.edges = edges.count();

    require(o.real_motions.empty() == o.gen_motions.empty(),
            "metrics needs both --real-motions and --generated-motions, or neither");
    if (!o.real_motions.empty()) {
        int K = 0;
        Mat real = motion_dir_samples(o.real_motions, &K);
        Mat gen = motion_dir_samples(o.gen_motions, &K);
        report.has_fid = true;
        report.fid = handle_fid(real, gen);
    }

    save_report(report, o.out);
    std::printf("%s", report_json(report).c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"handleforge: skeleton-free handle-based character animation"};
    app.set_version_flag("--version", "handleforge 0.1.0");
    app.require_subcommand(1);

    GenOpts gen;
    auto* cg = app.add_subcommand("gen-synthetic", "Generate procedural rigged characters");
    cg->add_option("--out", gen.out, "output directory")->required();
    cg->add_option("--count", gen.count, "number of characters")->check(CLI::PositiveNumber);
    cg->add_option("--limbs", gen.limbs, "limb count (0 = vary per character)")
        ->check(CLI::Range(0, 6));
    cg->add_option("--seq-frames", gen.seq_frames, "frames per pose clip");
    cg->add_option("--fps", gen.fps, "clip frame rate");
    cg->add_option("--segments", gen.segments, "vertices per tube ring");
    cg->add_option("--seed", gen.seed, "generator seed");
    cg->callback([&] { cmd_gen(gen); });

    PredictOpts pr;
    auto* cp = app.add_subcommand("predict-handles",
                                  "Predict skinning, handles, and the mesh feature");
    cp->add_option("--mesh", pr.mesh, "rest mesh (.obj)")->required();
    cp->add_option("--checkpoint", pr.checkpoint, "predictor checkpoint")->required();
    cp->add_option("--out", pr.out, "output directory")->required();
    cp->add_flag("--normalize-unit-box", pr.normalize, "recenter and scale the mesh first");
    cp->callback([&] { cmd_predict(pr); });

    ExtractOpts ex;
    auto* ce = app.add_subcommand("extract", "Fit handle motion to posed frames of a rig");
    ce->add_option("--mesh", ex.mesh, "rest mesh (.obj)")->required();
    ce->add_option("--rig", ex.rig, "rig file (.rig)")->required();
    ce->add_option("--out", ex.out, "output directory for .hmo files")->required();
    ce->add_option("--skinning", ex.skinning, "skinning weights (.json)");
    ce->add_option("--handles", ex.handles, "handle set (.json)");
    ce->add_option("--sequence", ex.sequence, "clip name (default: all clips)");
    ce->add_flag("--use-rig-skinning", ex.use_rig_skinning,
                 "use the rig's skeletal skinning as handles");
    ce->add_flag("--local-only", ex.local_only, "skip the global rigid factor");
    ce->callback([&] { cmd_extract(ex); });

    AnimateOpts an;
    auto* ca = app.add_subcommand("animate", "Deform the mesh through a handle motion");
    ca->add_option("--mesh", an.mesh, "rest mesh (.obj)")->required();
    ca->add_option("--skinning", an.skinning, "skinning weights (.json)")->required();
    ca->add_option("--handles", an.handles, "handle set (.json)")->required();
    ca->add_option("--motion", an.motion, "handle motion (.hmo)")->required();
    ca->add_option("--out", an.out, "output directory for frame OBJs")->required();
    ca->add_flag("--no-delta", an.no_delta, "ignore adaptation offsets");
    ca->add_option("--threads", an.threads, "worker threads")->check(CLI::PositiveNumber);
    ca->callback([&] { cmd_animate(an); });

    SampleOpts sa;
    auto* cs = app.add_subcommand("sample", "Text prompt to animated mesh");
    cs->add_option("--prompt", sa.prompt, "motion description")->required();
    cs->add_option("--mesh", sa.mesh, "rest mesh (.obj)")->required();
    cs->add_option("--predictor", sa.predictor, "predictor checkpoint")->required();
    cs->add_option("--denoiser", sa.denoiser, "denoiser checkpoint")->required();
    cs->add_option("--out", sa.out, "output directory")->required();
    cs->add_option("--frames", sa.frames, "motion length")->check(CLI::PositiveNumber);
    cs->add_option("--fps", sa.fps, "frame rate (0 = checkpoint value)");
    cs->add_option("--seed", sa.seed, "sampling seed");
    cs->add_option("--threads", sa.threads, "worker threads")->check(CLI::PositiveNumber);
    cs->add_flag("--normalize-unit-box", sa.normalize, "recenter and scale the mesh first");
    cs->callback([&] { cmd_sample(sa); });

    TrainOpts tr;
    auto* ct = app.add_subcommand("train", "Train a pipeline stage");
    ct->add_option("--stage", tr.stage, "predictor | diffusion | finetune")->required();
    ct->add_option("--config", tr.config, "pipeline config (.toml)");
    ct->add_option("--data", tr.data, "directory of .obj/.rig character pairs")->required();
    ct->add_option("--out", tr.out, "output checkpoint path")->required();
    ct->add_option("--predictor", tr.predictor, "predictor checkpoint (read-only input)");
    ct->add_option("--denoiser", tr.denoiser, "denoiser checkpoint to fine-tune");
    ct->callback([&] { cmd_train(tr); });

    MetricsOpts me;
    auto* cm = app.add_subcommand("metrics", "Quality report for an animated sequence");
    cm->add_option("--mesh", me.mesh, "rest mesh (.obj)")->required();
    cm->add_option("--frames-dir", me.frames_dir, "directory of frame OBJs")->required();
    cm->add_option("--out", me.out, "report path (.json)")->required();
    cm->add_option("--real-motions", me.real_motions, "directory of reference .hmo files");
    cm->add_option("--generated-motions", me.gen_motions, "directory of generated .hmo files");
    cm->callback([&] { cmd_metrics(me); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
