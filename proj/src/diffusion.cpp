#include "handleforge/diffusion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <string>

#include "handleforge/error.hpp"
#include "handleforge/motion_extraction.hpp"
#include "handleforge/rng.hpp"

namespace handleforge {

namespace {

constexpr double kMaskValue = -1e9;

// Column layout helpers for the per-frame motion row.
int col_t_local(int k, int c) { return 3 * k + c; }
int col_r_local(int K, int k, int j) { return 3 * K + 6 * k + j; }
int col_t_global(int K, int c) { return 9 * K + c; }
int col_r_global(int K, int c) { return 9 * K + 3 + c; }

Mat row_of(const Mat& m, int r) {
    Mat out(1, m.cols());
    for (int c = 0; c < m.cols(); ++c) out(0, c) = m(r, c);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

DiffusionSchedule make_schedule(int T, ScheduleKind kind) {
    require(T >= 1, "make_schedule: T must be >= 1");
    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T);

    if (kind == ScheduleKind::Linear) {
        for (int t = 0; t < T; ++t) {
            const double u = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
            s.beta[t] = 1e-4 + (0.02 - 1e-4) * u;
        }
    } else {
        const double offset = 0.008;
        auto f = [&](double u) {
            const double a = std::cos((u + offset) / (1.0 + offset) * M_PI / 2.0);
            return a * a;
        };
        const double f0 = f(0.0);
        double prev = 1.0;
        for (int t = 0; t < T; ++t) {
            const double cur = f(static_cast<double>(t + 1) / T) / f0;
            s.beta[t] = std::min(1.0 - cur / prev, 0.999);
            prev = cur;
        }
    }

    double running = 1.0;
    for (int t = 0; t < T; ++t) {
        require(s.beta[t] > 0.0 && s.beta[t] < 1.0, "make_schedule: beta out of range");
        running *= 1.0 - s.beta[t];
        s.alpha_bar[t] = running;
        if (t > 0)
            require(s.alpha_bar[t] < s.alpha_bar[t - 1],
                    "make_schedule: alpha_bar must decrease");
    }
    return s;
}

Mat q_sample(const Mat& x0, int t, const Mat& noise, const DiffusionSchedule& sched) {
    require(t >= 0 && t < sched.T, "q_sample: step out of range");
    require(x0.same_shape(noise), "q_sample: noise shape differs from x0");
    const double ab = sched.alpha_bar[t];
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Mat out(x0.rows(), x0.cols());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * noise[i];
    return out;
}

// ---------------------------------------------------------------------------
// Motion <-> tensor
// ---------------------------------------------------------------------------

int motion_row_dim(int K) { return 9 * K + 6; }

Mat motion_to_tensor(const HandleMotion& motion, int rows, std::vector<uint8_t>* frame_valid) {
    validate_motion(motion);
    const int K = motion.K();
    const int N = motion.frame_count();
    require(N >= 1, "motion_to_tensor: empty motion");
    require(rows >= N, "motion_to_tensor: fewer rows than frames");

    Mat x(rows, motion_row_dim(K));
    for (int n = 0; n < N; ++n) {
        const HandleFrame& f = motion.frames[n];
        for (int k = 0; k < K; ++k) {
            for (int c = 0; c < 3; ++c) x(n, col_t_local(k, c)) = f.t_local(k, c);
            for (int j = 0; j < 6; ++j) x(n, col_r_local(K, k, j)) = f.r_local(k, j);
        }
        for (int c = 0; c < 3; ++c) {
            x(n, col_t_global(K, c)) = f.t_global[c];
            x(n, col_r_global(K, c)) = f.r_global[c];
        }
    }
    if (frame_valid) {
        frame_valid->assign(rows, 0);
        for (int n = 0; n < N; ++n) (*frame_valid)[n] = 1;
    }
    return x;
}

HandleFrame frame_from_tensor(const Mat& x, int row, int K) {
    require(x.cols() == motion_row_dim(K), "frame_from_tensor: column count mismatch");
    require(row >= 0 && row < x.rows(), "frame_from_tensor: row out of range");
    HandleFrame f;
    f.t_local = Mat(K, 3);
    f.r_local = Mat(K, 6);
    for (int k = 0; k < K; ++k) {
        for (int c = 0; c < 3; ++c) f.t_local(k, c) = x(row, col_t_local(k, c));
        for (int j = 0; j < 6; ++j) f.r_local(k, j) = x(row, col_r_local(K, k, j));
    }
    for (int c = 0; c < 3; ++c) {
        f.t_global[c] = x(row, col_t_global(K, c));
        f.r_global[c] = x(row, col_r_global(K, c));
    }
    return f;
}

HandleMotion tensor_to_motion(const Mat& x, int K, int frames, int fps) {
    require(frames >= 1 && frames <= x.rows(), "tensor_to_motion: frame count out of range");
    HandleMotion m;
    m.fps = fps;
    m.frames.reserve(frames);
    for (int n = 0; n < frames; ++n) m.frames.push_back(frame_from_tensor(x, n, K));
    return m;
}

std::vector<Mat> delta_blocks(const Mat& delta, int K, int frames) {
    require(delta.cols() == 3 * K, "delta_blocks: column count mismatch");
    require(frames >= 1 && frames <= delta.rows(), "delta_blocks: frame count out of range");
    std::vector<Mat> out(frames, Mat(K, 3));
    for (int n = 0; n < frames; ++n)
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < 3; ++c) out[n](k, c) = delta(n, 3 * k + c);
    return out;
}

// ---------------------------------------------------------------------------
// Text embedding
// ---------------------------------------------------------------------------

TextTokens text_embed(const std::string& prompt, int max_tokens, int dim) {
    require(max_tokens >= 1 && dim >= 1, "text_embed: bad shape");
    TextTokens tt;
    tt.tokens = Mat(max_tokens, dim);
    tt.mask.assign(max_tokens, 0);

    std::vector<std::string> words;
    std::string cur;
    for (char ch : prompt) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);

    const int n = std::min<int>(static_cast<int>(words.size()), max_tokens);
    for (int i = 0; i < n; ++i) {
        RandomStream rng(fnv1a(words[i].data(), words[i].size()));
        rng.fill_normal(tt.tokens.row(i), static_cast<size_t>(dim));
        tt.mask[i] = 1;
    }
    return tt;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

namespace {

std::string ln(int l, int which, char part) {
    return "l" + std::to_string(l) + ".ln" + std::to_string(which) + "." + part;
}
std::string attn(int l, const char* block, const char* w) {
    return "l" + std::to_string(l) + "." + block + "." + w;
}
std::string ffn(int l, int which, char part) {
    return "l" + std::to_string(l) + ".ffn" + std::to_string(which) + "." + part;
}

void check_config(const DenoiserConfig& cfg) {
    require(cfg.K >= 1, "denoiser: K must be >= 1");
    require(cfg.layers >= 1, "denoiser: need at least one layer");
    require(cfg.heads >= 1 && cfg.width % cfg.heads == 0,
            "denoiser: width must be divisible by heads");
    require(cfg.ffn >= 1 && cfg.cond_dim >= 1 && cfg.text_tokens >= 1,
            "denoiser: bad dimensions");
}

}  // namespace

DenoiserParams make_denoiser(const DenoiserConfig& cfg, uint64_t seed) {
    check_config(cfg);
    DenoiserParams p;
    p.cfg = cfg;
    RandomStream rng(seed ^ 0x64656e6fULL);
    auto& st = p.store;

    auto weight = [&](const std::string& name, int r, int c) {
        nn::init_xavier(st.create(name, r, c), rng);
    };
    auto bias = [&](const std::string& name, int c) { st.create(name, 1, c); };
    auto norm = [&](const std::string& g, const std::string& b, int c) {
        st.create(g, 1, c).value.fill(1.0);
        st.create(b, 1, c);
    };

    const int D = cfg.row_dim();
    weight("in_w", D, cfg.width);
    bias("in_b", cfg.width);
    weight("cond_w", cfg.cond_dim, cfg.width);
    bias("cond_b", cfg.width);
    for (int l = 0; l < cfg.layers; ++l) {
        norm(ln(l, 1, 'g'), ln(l, 1, 'b'), cfg.width);
        for (const char* w : {"wq", "wk", "wv", "wo"}) weight(attn(l, "sa", w), cfg.width, cfg.width);
        norm(ln(l, 2, 'g'), ln(l, 2, 'b'), cfg.width);
        for (const char* w : {"wq", "wk", "wv", "wo"}) weight(attn(l, "ca", w), cfg.width, cfg.width);
        norm(ln(l, 3, 'g'), ln(l, 3, 'b'), cfg.width);
        weight(ffn(l, 1, 'w'), cfg.width, cfg.ffn);
        bias(ffn(l, 1, 'b'), cfg.ffn);
        weight(ffn(l, 2, 'w'), cfg.ffn, cfg.width);
        bias(ffn(l, 2, 'b'), cfg.width);
    }
    norm("ln_f.g", "ln_f.b", cfg.width);
    weight("motion_w", cfg.width, D);
    bias("motion_b", D);
    weight("delta_w", cfg.width, 3 * cfg.K);
    bias("delta_b", 3 * cfg.K);
    return p;
}

namespace {

void check_input(const DenoiserInput& in, const DenoiserConfig& cfg) {
    require(in.x_t.cols() == cfg.row_dim(), "denoise: x_t column count mismatch");
    require(in.x_t.rows() >= 1, "denoise: empty x_t");
    require(in.t >= 0, "denoise: negative step");
    require(in.text.rows() == cfg.text_tokens && in.text.cols() == cfg.cond_dim,
            "denoise: text token shape mismatch");
    require(in.mesh_feature.rows() == 1 && in.mesh_feature.cols() == cfg.cond_dim,
            "denoise: mesh feature shape mismatch");
    require(in.text_mask.empty() ||
                static_cast<int>(in.text_mask.size()) == cfg.text_tokens,
            "denoise: text mask size mismatch");
    require(in.frame_valid.empty() ||
                static_cast<int>(in.frame_valid.size()) == in.x_t.rows(),
            "denoise: frame mask size mismatch");
}

}  // namespace

DenoiserOutput denoise(const DenoiserInput& in, const DenoiserParams& params,
                       DenoiserCache& cache) {
    const DenoiserConfig& cfg = params.cfg;
    check_config(cfg);
    check_input(in, cfg);
    const auto& st = params.store;
    const int N = in.x_t.rows();
    const int C = cfg.text_tokens + 1;

    // Additive attention masks: padded frames never serve as self-attention
    // keys, padded text tokens never serve as cross-attention keys. The mesh
    // token (last condition row) is always live.
    bool mask_frames = false;
    cache.self_mask = Mat(N, N);
    if (!in.frame_valid.empty()) {
        for (int j = 0; j < N; ++j) {
            if (in.frame_valid[j]) continue;
            mask_frames = true;
            for (int i = 0; i < N; ++i) cache.self_mask(i, j) = kMaskValue;
        }
    }
    bool mask_text = false;
    cache.cross_mask = Mat(N, C);
    if (!in.text_mask.empty()) {
        for (int j = 0; j < cfg.text_tokens; ++j) {
            if (in.text_mask[j]) continue;
            mask_text = true;
            for (int i = 0; i < N; ++i) cache.cross_mask(i, j) = kMaskValue;
        }
    }
    const Mat* self_mask = mask_frames ? &cache.self_mask : nullptr;
    const Mat* cross_mask = mask_text ? &cache.cross_mask : nullptr;

    // Motion tokens: projected noisy rows plus frame-position encoding.
    Mat x = nn::linear(in.x_t, st.at("in_w"), st.at("in_b"));
    {
        std::vector<double> pos(N);
        std::iota(pos.begin(), pos.end(), 0.0);
        x += nn::sinusoidal_embedding(pos, cfg.width);
    }

    // Condition tokens: text rows then the mesh feature, projected to model
    // width, with the schedule-step encoding added to every token.
    cache.cond_raw = Mat(C, cfg.cond_dim);
    for (int i = 0; i < cfg.text_tokens; ++i)
        for (int c = 0; c < cfg.cond_dim; ++c) cache.cond_raw(i, c) = in.text(i, c);
    for (int c = 0; c < cfg.cond_dim; ++c) cache.cond_raw(C - 1, c) = in.mesh_feature(0, c);
    cache.cond = nn::linear(cache.cond_raw, st.at("cond_w"), st.at("cond_b"));
    {
        const Mat temb =
            nn::sinusoidal_embedding({static_cast<double>(in.t)}, cfg.width);
        for (int i = 0; i < C; ++i)
            for (int c = 0; c < cfg.width; ++c) cache.cond(i, c) += temb(0, c);
    }

    cache.layers.assign(cfg.layers, DecoderLayerCache{});
    for (int l = 0; l < cfg.layers; ++l) {
        DecoderLayerCache& lc = cache.layers[l];
        lc.x_in = x;
        lc.n1 = nn::layer_norm(x, st.at(ln(l, 1, 'g')), st.at(ln(l, 1, 'b')), lc.ln1);
        x += nn::mha(lc.n1, lc.n1, cfg.heads, st.at(attn(l, "sa", "wq")),
                     st.at(attn(l, "sa", "wk")), st.at(attn(l, "sa", "wv")),
                     st.at(attn(l, "sa", "wo")), self_mask, lc.sa);
        lc.x1 = x;
        lc.n2 = nn::layer_norm(x, st.at(ln(l, 2, 'g')), st.at(ln(l, 2, 'b')), lc.ln2);
        x += nn::mha(lc.n2, cache.cond, cfg.heads, st.at(attn(l, "ca", "wq")),
                     st.at(attn(l, "ca", "wk")), st.at(attn(l, "ca", "wv")),
                     st.at(attn(l, "ca", "wo")), cross_mask, lc.ca);
        lc.x2 = x;
        lc.n3 = nn::layer_norm(x, st.at(ln(l, 3, 'g')), st.at(ln(l, 3, 'b')), lc.ln3);
        lc.r1 = nn::relu(nn::linear(lc.n3, st.at(ffn(l, 1, 'w')), st.at(ffn(l, 1, 'b'))));
        x += nn::linear(lc.r1, st.at(ffn(l, 2, 'w')), st.at(ffn(l, 2, 'b')));
    }

    cache.final_norm = nn::layer_norm(x, st.at("ln_f.g"), st.at("ln_f.b"), cache.ln_f);
    DenoiserOutput out;
    out.x0_hat = nn::linear(cache.final_norm, st.at("motion_w"), st.at("motion_b"));
    out.delta_hat = nn::linear(cache.final_norm, st.at("delta_w"), st.at("delta_b"));
    return out;
}

DenoiserOutput denoise(const DenoiserInput& in, const DenoiserParams& params) {
    DenoiserCache cache;
    return denoise(in, params, cache);
}

void denoiser_backward(DenoiserParams& params, const DenoiserInput& in,
                       const DenoiserCache& cache, const Mat& d_x0_hat,
                       const Mat& d_delta_hat) {
    const DenoiserConfig& cfg = params.cfg;
    auto& st = params.store;
    const int N = in.x_t.rows();

    const Mat dx0 = d_x0_hat.empty() ? Mat(N, cfg.row_dim()) : d_x0_hat;
    const Mat ddelta = d_delta_hat.empty() ? Mat(N, 3 * cfg.K) : d_delta_hat;
    require(dx0.rows() == N && dx0.cols() == cfg.row_dim(),
            "denoiser_backward: x0 gradient shape mismatch");
    require(ddelta.rows() == N && ddelta.cols() == 3 * cfg.K,
            "denoiser_backward: delta gradient shape mismatch");

    Mat dfinal =
        nn::linear_backward(cache.final_norm, st.at("motion_w"), st.at("motion_b"), dx0);
    dfinal +=
        nn::linear_backward(cache.final_norm, st.at("delta_w"), st.at("delta_b"), ddelta);
    Mat dx = nn::layer_norm_backward(cache.ln_f, st.at("ln_f.g"), st.at("ln_f.g"),
                                     st.at("ln_f.b"), dfinal);

    Mat dcond(cache.cond.rows(), cfg.width);
    for (int l = cfg.layers - 1; l >= 0; --l) {
        const DecoderLayerCache& lc = cache.layers[l];

        // x_out = x2 + ffn2(relu(ffn1(n3)))
        Mat dr1 = nn::linear_backward(lc.r1, st.at(ffn(l, 2, 'w')), st.at(ffn(l, 2, 'b')), dx);
        Mat dp = nn::relu_backward(lc.r1, dr1);
        Mat dn3 = nn::linear_backward(lc.n3, st.at(ffn(l, 1, 'w')), st.at(ffn(l, 1, 'b')), dp);
        Mat dx2 = dx;
        dx2 += nn::layer_norm_backward(lc.ln3, st.at(ln(l, 3, 'g')), st.at(ln(l, 3, 'g')),
                                       st.at(ln(l, 3, 'b')), dn3);

        // x2 = x1 + cross(n2, cond)
        Mat dn2(N, cfg.width);
        nn::mha_backward(lc.ca, cfg.heads, st.at(attn(l, "ca", "wq")),
                         st.at(attn(l, "ca", "wk")), st.at(attn(l, "ca", "wv")),
                         st.at(attn(l, "ca", "wo")), st.at(attn(l, "ca", "wq")),
                         st.at(attn(l, "ca", "wk")), st.at(attn(l, "ca", "wv")),
                         st.at(attn(l, "ca", "wo")), dx2, dn2, dcond);
        Mat dx1 = dx2;
        dx1 += nn::layer_norm_backward(lc.ln2, st.at(ln(l, 2, 'g')), st.at(ln(l, 2, 'g')),
                                       st.at(ln(l, 2, 'b')), dn2);

        // x1 = x_in + self(n1, n1); query and key/value grads land in the
        // same buffer, which mha_backward only accumulates into.
        Mat dn1(N, cfg.width);
        nn::mha_backward(lc.sa, cfg.heads, st.at(attn(l, "sa", "wq")),
                         st.at(attn(l, "sa", "wk")), st.at(attn(l, "sa", "wv")),
                         st.at(attn(l, "sa", "wo")), st.at(attn(l, "sa", "wq")),
                         st.at(attn(l, "sa", "wk")), st.at(attn(l, "sa", "wv")),
                         st.at(attn(l, "sa", "wo")), dx1, dn1, dn1);
        dx = dx1;
        dx += nn::layer_norm_backward(lc.ln1, st.at(ln(l, 1, 'g')), st.at(ln(l, 1, 'g')),
                                      st.at(ln(l, 1, 'b')), dn1);
    }

    // Position and step encodings are constants; only the projections learn.
    nn::linear_backward(in.x_t, st.at("in_w"), st.at("in_b"), dx);
    nn::linear_backward(cache.cond_raw, st.at("cond_w"), st.at("cond_b"), dcond);
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::pair<Mat, Mat> sample_with(const DiffusionSchedule& sched, const DenoiseFn& fn,
                                int frames, int row_dim, int delta_dim, uint64_t seed) {
    require(frames >= 1 && row_dim >= 1, "sample_with: bad shape");
    RandomStream rng(seed);
    Mat x(frames, row_dim);
    rng.fill_normal(x.data(), x.size());
    Mat noise(frames, row_dim);
    Mat delta;

    for (int t = sched.T - 1; t >= 0; --t) {
        DenoiserOutput out = fn(x, t);
        require(out.x0_hat.rows() == frames && out.x0_hat.cols() == row_dim,
                "sample_with: denoiser output shape mismatch");
        if (!out.delta_hat.empty())
            require(out.delta_hat.rows() == frames && out.delta_hat.cols() == delta_dim,
                    "sample_with: delta output shape mismatch");

        const double ab = sched.alpha_bar[t];
        const double ab_prev = t > 0 ? sched.alpha_bar[t - 1] : 1.0;
        const double beta = sched.beta[t];
        const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        const double c1 = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
        const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));

        if (t > 0) rng.fill_normal(noise.data(), noise.size());
        for (size_t i = 0; i < x.size(); ++i) {
            x[i] = c0 * out.x0_hat[i] + c1 * x[i];
            if (t > 0) x[i] += sigma * noise[i];
        }
        delta = out.delta_hat;
    }
    return {std::move(x), std::move(delta)};
}

HandleMotion sample(const DiffusionSchedule& sched, const DenoiserParams& params,
                    const TextTokens& text, const Mat& mesh_feature, int frames,
                    int fps, uint64_t seed) {
    const DenoiserConfig& cfg = params.cfg;
    auto fn = [&](const Mat& x_t, int t) {
        DenoiserInput in;
        in.x_t = x_t;
        in.t = t;
        in.text = text.tokens;
        in.text_mask = text.mask;
        in.mesh_feature = mesh_feature;
        return denoise(in, params);
    };
    auto [x, delta] = sample_with(sched, fn, frames, cfg.row_dim(), 3 * cfg.K, seed);
    HandleMotion motion = tensor_to_motion(x, cfg.K, frames, fps);
    motion.delta = delta_blocks(delta, cfg.K, frames);
    return motion;
}

// ---------------------------------------------------------------------------
// Regularizer plumbing
// ---------------------------------------------------------------------------

double spring_loss_on_tensor(const Mat& x0_hat, const Mat& delta_hat, int frames,
                             const HandleSet& handles, const HandleAdjacency& adj,
                             double sigma, Mat* d_x0_hat, Mat* d_delta_hat) {
    const int K = handles.K();
    require(x0_hat.cols() == motion_row_dim(K), "spring_loss_on_tensor: column mismatch");
    const bool with_delta = !delta_hat.empty();

    HandleMotion motion = tensor_to_motion(x0_hat, K, frames, /*fps=*/20);
    if (with_delta) motion.delta = delta_blocks(delta_hat, K, frames);

    const Mat traj = handle_trajectory_with_rest(handles, motion, with_delta);
    Mat d_traj;
    const double loss = spring_loss(traj, adj, sigma, &handles.active,
                                    d_x0_hat ? &d_traj : nullptr);
    if (!d_x0_hat) return loss;

    const TrajectoryGrad tg = handle_trajectory_backward(handles, motion, with_delta, d_traj);
    *d_x0_hat = Mat(x0_hat.rows(), x0_hat.cols());
    if (d_delta_hat) *d_delta_hat = Mat(x0_hat.rows(), 3 * K);
    for (int n = 0; n < frames; ++n) {
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < 3; ++c) {
                (*d_x0_hat)(n, col_t_local(k, c)) = tg.d_t_local[n](k, c);
                if (d_delta_hat && with_delta)
                    (*d_delta_hat)(n, 3 * k + c) = tg.d_delta[n](k, c);
            }
        for (int c = 0; c < 3; ++c) {
            (*d_x0_hat)(n, col_t_global(K, c)) = tg.d_t_global[n][c];
            (*d_x0_hat)(n, col_r_global(K, c)) = tg.d_r_global[n][c];
        }
    }
    return loss;
}

namespace {

HandleFrame window_frame(const Mat& x0_hat, const Mat& delta_hat, int row, int K) {
    HandleFrame f = frame_from_tensor(x0_hat, row, K);
    if (delta_hat.empty()) return f;
    Mat d(K, 3);
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < 3; ++c) d(k, c) = delta_hat(row, 3 * k + c);
    return apply_adaptation(f, d);
}

}  // namespace

Mat fake_window(const Mat& x0_hat, const Mat& delta_hat, int frame,
                const std::vector<int>& ids, const Mesh& mesh,
                const SkinningWeights& s, const HandleSet& handles) {
    const int K = handles.K();
    require(frame >= 0 && frame + 1 < x0_hat.rows(), "fake_window: frame pair out of range");
    require(!ids.empty(), "fake_window: empty vertex sample");

    const int V = static_cast<int>(ids.size());
    Mat row(1, 6 * V);
    for (int half = 0; half < 2; ++half) {
        const HandleFrame f = window_frame(x0_hat, delta_hat, frame + half, K);
        const Mat pos = deform_subset(mesh.vertices, ids, s, handles, f);
        for (int i = 0; i < V; ++i)
            for (int c = 0; c < 3; ++c) row(0, half * 3 * V + 3 * i + c) = pos(i, c);
    }
    return row;
}

void fake_window_backward(const Mat& x0_hat, const Mat& delta_hat, int frame,
                          const std::vector<int>& ids, const Mesh& mesh,
                          const SkinningWeights& s, const HandleSet& handles,
                          const Mat& d_row, Mat& d_x0_hat, Mat& d_delta_hat) {
    const int K = handles.K();
    const int V = static_cast<int>(ids.size());
    require(d_row.rows() == 1 && d_row.cols() == 6 * V,
            "fake_window_backward: gradient shape mismatch");
    require(d_x0_hat.same_shape(x0_hat), "fake_window_backward: d_x0_hat shape mismatch");
    const bool with_delta = !delta_hat.empty();
    if (with_delta)
        require(d_delta_hat.same_shape(delta_hat),
                "fake_window_backward: d_delta_hat shape mismatch");

    for (int half = 0; half < 2; ++half) {
        const int row = frame + half;
        const HandleFrame f = window_frame(x0_hat, delta_hat, row, K);
        Mat d_pos(V, 3);
        for (int i = 0; i < V; ++i)
            for (int c = 0; c < 3; ++c) d_pos(i, c) = d_row(0, half * 3 * V + 3 * i + c);
        const DeformGrad g = deform_backward(mesh.vertices, &ids, s, handles, f, d_pos);
        for (int k = 0; k < K; ++k) {
            for (int c = 0; c < 3; ++c) {
                d_x0_hat(row, col_t_local(k, c)) += g.d_t_local(k, c);
                if (with_delta) d_delta_hat(row, 3 * k + c) += g.d_t_local(k, c);
            }
            for (int j = 0; j < 6; ++j)
                d_x0_hat(row, col_r_local(K, k, j)) += g.d_r_local(k, j);
        }
        for (int c = 0; c < 3; ++c) {
            d_x0_hat(row, col_t_global(K, c)) += g.d_t_global[c];
            d_x0_hat(row, col_r_global(K, c)) += g.d_r_global[c];
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

DiffusionTrainResult train_diffusion(const std::vector<MotionExample>& dataset,
                                     const DiffusionTrainConfig& cfg) {
    require(!dataset.empty(), "train_diffusion: empty dataset");
    check_config(cfg.denoiser);
    require(cfg.steps >= 1 && cfg.batch >= 1, "train_diffusion: bad loop bounds");
    const int K = cfg.denoiser.K;
    const int D = cfg.denoiser.row_dim();

    int frames = cfg.frames;
    if (frames == 0)
        for (const MotionExample& ex : dataset)
            frames = std::max(frames, ex.motion.frame_count());
    require(frames >= 1 && frames <= kMaxMotionFrames,
            "train_diffusion: padded length out of range");

    struct Prepared {
        Mat x0;
        std::vector<uint8_t> frame_valid;
        TextTokens text;
        std::vector<int> pool;
    };
    std::vector<Prepared> prep(dataset.size());
    for (size_t e = 0; e < dataset.size(); ++e) {
        const MotionExample& ex = dataset[e];
        require(ex.motion.K() == K, "train_diffusion: handle count mismatch");
        require(ex.motion.frame_count() <= frames,
                "train_diffusion: clip longer than padded length");
        require(ex.mesh_feature.rows() == 1 && ex.mesh_feature.cols() == cfg.denoiser.cond_dim,
                "train_diffusion: mesh feature shape mismatch");
        prep[e].x0 = motion_to_tensor(ex.motion, frames, &prep[e].frame_valid);
        prep[e].text = text_embed(ex.text, cfg.denoiser.text_tokens, cfg.denoiser.cond_dim);
        if (ex.sample_vertices.empty()) {
            prep[e].pool.resize(ex.mesh.vertices.rows());
            std::iota(prep[e].pool.begin(), prep[e].pool.end(), 0);
        } else {
            prep[e].pool = ex.sample_vertices;
        }
        require(!prep[e].pool.empty(), "train_diffusion: empty vertex pool");
    }

    const DiffusionSchedule sched = make_schedule(cfg.T, cfg.schedule);
    const bool use_spring = cfg.weights.nu_h > 0.0;
    const bool use_adv = cfg.weights.nu_a > 0.0;

    DiffusionTrainResult result;
    result.params = make_denoiser(cfg.denoiser, cfg.seed ^ 0x6d6f64656cULL);
    if (use_adv) result.critic.emplace(6 * cfg.adv_vertices, cfg.seed ^ 0x6372697469ULL);

    RandomStream rng(cfg.seed ^ 0x646966667573ULL);
    nn::Adam opt(cfg.lr);
    nn::Adam critic_opt(cfg.lr);

    for (int step = 0; step < cfg.steps; ++step) {
        result.params.store.zero_grads();
        DiffusionStepLog log;
        const int weak_b = rng.uniform_int(0, cfg.batch - 1);

        for (int b = 0; b < cfg.batch; ++b) {
            const int e = rng.uniform_int(0, static_cast<int>(dataset.size()) - 1);
            const MotionExample& ex = dataset[e];
            const Prepared& pr = prep[e];
            const int t = rng.uniform_int(0, cfg.T - 1);

            Mat noise(frames, D);
            rng.fill_normal(noise.data(), noise.size());

            DenoiserInput din;
            din.x_t = q_sample(pr.x0, t, noise, sched);
            din.t = t;
            din.text = pr.text.tokens;
            din.text_mask = pr.text.mask;
            din.mesh_feature = ex.mesh_feature;
            din.frame_valid = pr.frame_valid;

            DenoiserCache cache;
            const DenoiserOutput out = denoise(din, result.params, cache);

            Mat d_x0;
            const double lm = motion_loss(pr.x0, out.x0_hat, pr.frame_valid, &d_x0);
            d_x0 *= 1.0 / cfg.batch;
            log.motion += lm / cfg.batch;
            Mat d_delta;

            // The geometry terms are evaluated on a single batch element:
            // they run full deformations, so spreading them across the whole
            // batch would dominate the step cost for little extra signal.
            if (b == weak_b && (use_spring || use_adv)) {
                const int nf = ex.motion.frame_count();
                if (use_spring) {
                    Mat ds, dd;
                    const double lh =
                        spring_loss_on_tensor(out.x0_hat, out.delta_hat, nf, ex.handles,
                                              ex.adjacency, cfg.weights.sigma, &ds, &dd);
                    ds *= cfg.weights.nu_h;
                    dd *= cfg.weights.nu_h;
                    d_x0 += ds;
                    d_delta = dd;
                    log.spring = lh;
                }
                if (use_adv && nf >= 2) {
                    std::vector<int> seq_pool;
                    for (size_t q = 0; q < ex.rig.sequences.size(); ++q)
                        if (ex.rig.sequences[q].poses.size() >= 2)
                            seq_pool.push_back(static_cast<int>(q));
                    require(!seq_pool.empty(),
                            "train_diffusion: adversarial loss needs rig sequences with >= 2 poses");

                    const int W = cfg.adv_windows;
                    const int in_dim = 6 * cfg.adv_vertices;
                    Mat fake(W, in_dim), real(W, in_dim);
                    std::vector<int> win_frame(W);
                    std::vector<std::vector<int>> win_ids(W);
                    for (int w = 0; w < W; ++w) {
                        win_frame[w] = rng.uniform_int(0, nf - 2);
                        win_ids[w].resize(cfg.adv_vertices);
                        for (int& id : win_ids[w])
                            id = pr.pool[rng.uniform_int(0, static_cast<int>(pr.pool.size()) - 1)];
                        const Mat row = fake_window(out.x0_hat, out.delta_hat, win_frame[w],
                                                    win_ids[w], ex.mesh, ex.skinning, ex.handles);
                        for (int c = 0; c < in_dim; ++c) fake(w, c) = row(0, c);

                        const int sq = seq_pool[rng.uniform_int(0, static_cast<int>(seq_pool.size()) - 1)];
                        const PoseSequence& seq = ex.rig.sequences[sq];
                        const int p = rng.uniform_int(0, static_cast<int>(seq.poses.size()) - 2);
                        std::vector<int> rids(cfg.adv_vertices);
                        for (int& id : rids)
                            id = pr.pool[rng.uniform_int(0, static_cast<int>(pr.pool.size()) - 1)];
                        for (int half = 0; half < 2; ++half) {
                            const Mat pos =
                                skeletal_pose(ex.mesh, ex.rig, seq.poses[p + half]).positions;
                            for (int i = 0; i < cfg.adv_vertices; ++i)
                                for (int c = 0; c < 3; ++c)
                                    real(w, half * 3 * cfg.adv_vertices + 3 * i + c) =
                                        pos(rids[i], c);
                        }
                    }

                    Mat d_fake;
                    const double lg = adversarial_g_backward(*result.critic, fake, d_fake);
                    Mat d_x0_adv(frames, D);
                    Mat d_delta_adv(frames, 3 * K);
                    for (int w = 0; w < W; ++w)
                        fake_window_backward(out.x0_hat, out.delta_hat, win_frame[w], win_ids[w],
                                             ex.mesh, ex.skinning, ex.handles, row_of(d_fake, w),
                                             d_x0_adv, d_delta_adv);
                    d_x0_adv *= cfg.weights.nu_a;
                    d_delta_adv *= cfg.weights.nu_a;
                    d_x0 += d_x0_adv;
                    if (d_delta.empty())
                        d_delta = d_delta_adv;
                    else
                        d_delta += d_delta_adv;
                    log.adversarial = lg;

                    // The generator backward left its gradients on the critic;
                    // clear them so the critic update is a pure real/fake step.
                    result.critic->params().zero_grads();
                    adversarial_d_step(*result.critic, real, fake);
                    critic_opt.step(result.critic->params());
                }
            }
            denoiser_backward(result.params, din, cache, d_x0, d_delta);
        }

        opt.step(result.params.store);
        log.total = log.motion + cfg.weights.nu_h * log.spring +
                    cfg.weights.nu_a * log.adversarial;
        if (!std::isfinite(log.total))
            fail("train_diffusion: loss diverged at step " + std::to_string(step));
        result.curve.push_back(log);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Offset-head fine-tuning
// ---------------------------------------------------------------------------

std::vector<double> finetune_adaptation(DenoiserParams& params,
                                        const std::vector<PseudoLabel>& labels,
                                        const FinetuneConfig& cfg) {
    require(!labels.empty(), "finetune_adaptation: no labels");
    require(cfg.steps >= 0, "finetune_adaptation: bad step count");

    for (const PseudoLabel& pl : labels)
        require(pl.delta_target.rows() == pl.input.x_t.rows() &&
                    pl.delta_target.cols() == 3 * params.cfg.K,
                "finetune_adaptation: delta target shape mismatch");

    // Full-batch steps: the curve tracks one fixed objective (mean offset
    // loss over every label), so progress is strict descent, not a walk
    // across per-label losses.
    const double scale = 1.0 / static_cast<double>(labels.size());
    std::vector<double> curve;
    curve.reserve(cfg.steps);
    for (int step = 0; step < cfg.steps; ++step) {
        params.store.zero_grads();
        double mean = 0.0;
        for (const PseudoLabel& pl : labels) {
            DenoiserCache cache;
            const DenoiserOutput out = denoise(pl.input, params, cache);

            std::vector<uint8_t> mask = pl.input.frame_valid;
            if (mask.empty()) mask.assign(pl.input.x_t.rows(), 1);
            Mat dd;
            mean += scale * motion_loss(pl.delta_target, out.delta_hat, mask, &dd);
            dd *= scale;
            denoiser_backward(params, pl.input, cache, Mat(), dd);
        }
        if (!std::isfinite(mean))
            fail("finetune_adaptation: loss diverged at step " + std::to_string(step));

        // Only the offset head moves; every other parameter keeps the exact
        // bits it had, gradients included or not.
        for (const char* name : {"delta_w", "delta_b"}) {
            nn::Param& p = params.store.at(name);
            for (size_t i = 0; i < p.value.size(); ++i) p.value[i] -= cfg.lr * p.grad[i];
        }
        curve.push_back(mean);
    }
    return curve;
}

}  // namespace handleforge
