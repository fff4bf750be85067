#include "handleforge/handle_predictor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "handleforge/error.hpp"
#include "handleforge/kernels.hpp"

namespace handleforge {

namespace {

Mat matmul(const Mat& A, const Mat& B) {
    Mat C(A.rows(), B.cols());
    kernels::gemm_nn(A.data(), B.data(), C.data(), A.rows(), A.cols(), B.cols());
    return C;
}

}  // namespace

PredictorParams make_predictor(int K, int hidden, int feature_dim, uint64_t seed) {
    require(K >= 1 && hidden >= 1 && feature_dim >= 1, "make_predictor: bad dimensions");
    PredictorParams p;
    p.K = K;
    p.hidden = hidden;
    p.feature_dim = feature_dim;
    RandomStream rng(seed);
    nn::init_xavier(p.store.create("g1_w", 6, hidden), rng);
    p.store.create("g1_b", 1, hidden);
    nn::init_xavier(p.store.create("g2_w", hidden, hidden), rng);
    p.store.create("g2_b", 1, hidden);
    nn::init_xavier(p.store.create("g3_w", hidden, hidden), rng);
    p.store.create("g3_b", 1, hidden);
    nn::init_xavier(p.store.create("m1_w", hidden, hidden), rng);
    p.store.create("m1_b", 1, hidden);
    nn::init_xavier(p.store.create("m2_w", hidden, hidden), rng);
    p.store.create("m2_b", 1, hidden);
    nn::init_xavier(p.store.create("m3_w", hidden, K), rng);
    p.store.create("m3_b", 1, K);
    nn::init_xavier(p.store.create("f_w", hidden, feature_dim), rng);
    p.store.create("f_b", 1, feature_dim);
    return p;
}

PredictorOutput predict(const Mesh& mesh, const PredictorParams& params, PredictorCache& c) {
    const int V = mesh.vertex_count();
    require(V >= params.K, "predict: mesh has fewer vertices than handles");
    require(mesh.normals.rows() == V, "predict: mesh carries no normals (run compute_normals)");
    const auto& st = params.store;

    c.X = Mat(V, 6);
    for (int i = 0; i < V; ++i)
        for (int d = 0; d < 3; ++d) {
            c.X(i, d) = mesh.vertices(i, d);
            c.X(i, 3 + d) = mesh.normals(i, d);
        }
    c.A = normalized_adjacency(mesh);

    c.Z1 = matmul(c.A, c.X);
    c.H1 = nn::relu(nn::linear(c.Z1, st.at("g1_w"), st.at("g1_b")));
    c.Z2 = matmul(c.A, c.H1);
    c.H2 = nn::relu(nn::linear(c.Z2, st.at("g2_w"), st.at("g2_b")));
    c.Z3 = matmul(c.A, c.H2);
    c.H3 = nn::relu(nn::linear(c.Z3, st.at("g3_w"), st.at("g3_b")));

    c.M1 = nn::relu(nn::linear(c.H3, st.at("m1_w"), st.at("m1_b")));
    c.M2 = nn::relu(nn::linear(c.M1, st.at("m2_w"), st.at("m2_b")));
    c.S = nn::softmax_rows(nn::linear(c.M2, st.at("m3_w"), st.at("m3_b")));

    c.pool = Mat(1, params.hidden);
    for (int i = 0; i < V; ++i)
        for (int d = 0; d < params.hidden; ++d) c.pool(0, d) += c.H3(i, d) / V;

    PredictorOutput out;
    out.skinning = SkinningWeights{c.S};
    out.handles = handle_positions(out.skinning, mesh.vertices);
    out.feature = nn::linear(c.pool, st.at("f_w"), st.at("f_b"));
    return out;
}

PredictorOutput predict(const Mesh& mesh, const PredictorParams& params) {
    PredictorCache cache;
    return predict(mesh, params, cache);
}

void predictor_backward(PredictorParams& params, const PredictorCache& cache, const Mat& dS,
                        const Mat* d_feature) {
    auto& st = params.store;
    const int V = cache.H3.rows();

    Mat dlogits = nn::softmax_rows_backward(cache.S, dS);
    Mat dM2 = nn::linear_backward(cache.M2, st.at("m3_w"), st.at("m3_b"), dlogits);
    Mat dP2 = nn::relu_backward(cache.M2, dM2);
    Mat dM1 = nn::linear_backward(cache.M1, st.at("m2_w"), st.at("m2_b"), dP2);
    Mat dP1 = nn::relu_backward(cache.M1, dM1);
    Mat dH3 = nn::linear_backward(cache.H3, st.at("m1_w"), st.at("m1_b"), dP1);

    if (d_feature) {
        const Mat dpool = nn::linear_backward(cache.pool, st.at("f_w"), st.at("f_b"), *d_feature);
        for (int i = 0; i < V; ++i)
            for (int d = 0; d < dpool.cols(); ++d) dH3(i, d) += dpool(0, d) / V;
    }

    // GCN layers: H = relu(Z W + b) with Z = A H_prev; A is symmetric, so
    // the aggregation backward is another multiply by A
    Mat dL3 = nn::relu_backward(cache.H3, dH3);
    Mat dZ3 = nn::linear_backward(cache.Z3, st.at("g3_w"), st.at("g3_b"), dL3);
    Mat dH2 = matmul(cache.A, dZ3);
    Mat dL2 = nn::relu_backward(cache.H2, dH2);
    Mat dZ2 = nn::linear_backward(cache.Z2, st.at("g2_w"), st.at("g2_b"), dL2);
    Mat dH1 = matmul(cache.A, dZ2);
    Mat dL1 = nn::relu_backward(cache.H1, dH1);
    nn::linear_backward(cache.Z1, st.at("g1_w"), st.at("g1_b"), dL1);
}

PredictorLossParts predictor_training_loss(const Mesh& mesh, const SyntheticRig& rig,
                                           const Pose& pose, PredictorParams& params,
                                           const LossWeights& w, int skinning_pairs,
                                           uint64_t pair_seed) {
    PredictorCache cache;
    PredictorOutput out = predict(mesh, params, cache);
    const std::vector<int> labels = dominant_parts(rig.skeletal_skinning);

    Mat dS_s, dS_p, dS_r;
    PredictorLossParts parts;
    parts.skinning = skinning_loss(out.skinning, labels, skinning_pairs, pair_seed, &dS_s);
    parts.pose = pose_loss_grad(mesh, rig, out.skinning, pose, dS_p);
    parts.root = root_loss(out.skinning, mesh.vertices, rig.root_joint(), &dS_r);
    parts.total = parts.skinning + w.nu_p * parts.pose + w.nu_r * parts.root;

    Mat dS = dS_s;
    dS_p *= w.nu_p;
    dS_r *= w.nu_r;
    dS += dS_p;
    dS += dS_r;
    predictor_backward(params, cache, dS, nullptr);
    return parts;
}

Pose random_pose(const SyntheticRig& rig, RandomStream& rng) {
    if (!rig.sequences.empty()) {
        const auto& seq = rig.sequences[rng.uniform_int(0, static_cast<int>(rig.sequences.size()) - 1)];
        if (!seq.poses.empty())
            return seq.poses[rng.uniform_int(0, static_cast<int>(seq.poses.size()) - 1)];
    }
    Pose p = Pose::rest(rig.J());
    for (size_t i = 0; i < p.joint_rot.size(); ++i) p.joint_rot[i] = 0.3 * rng.normal();
    return p;
}

PredictorTrainResult train_predictor(const std::vector<RigExample>& dataset,
                                     const PredictorTrainConfig& cfg) {
    require(!dataset.empty(), "train_predictor: empty dataset");
    require(cfg.steps >= 0, "train_predictor: negative step count");
    require(cfg.lr > 0.0, "train_predictor: learning rate must be positive");

    PredictorTrainResult res{make_predictor(cfg.K, cfg.hidden, cfg.feature_dim, cfg.seed), {}};
    RandomStream rng(cfg.seed ^ 0x70726564u);
    const nn::GD opt{cfg.lr};

    for (int step = 0; step < cfg.steps; ++step) {
        const RigExample& ex = dataset[step % dataset.size()];
        const Pose pose = random_pose(ex.rig, rng);
        res.params.store.zero_grads();
        const PredictorLossParts parts = predictor_training_loss(
            ex.mesh, ex.rig, pose, res.params, cfg.weights, cfg.skinning_pairs, rng.next_u64());
        if (!std::isfinite(parts.total))
            fail("train_predictor: loss diverged at step " + std::to_string(step));
        opt.step(res.params.store);
        res.curve.push_back(parts);
    }

    const int w = static_cast<int>(std::min<size_t>(10, res.curve.size() / 2));
    if (w >= 2) {
        double head = 0.0, tail = 0.0;
        for (int i = 0; i < w; ++i) {
            head += res.curve[i].total / w;
            tail += res.curve[res.curve.size() - 1 - i].total / w;
        }
        require(tail < head, "train_predictor: loss did not improve");
    }
    return res;
}

double part_recovery(const SkinningWeights& pred, const std::vector<int>& labels) {
    require(static_cast<int>(labels.size()) == pred.V(),
            "part_recovery: label count differs from V");
    std::map<int, std::map<int, int>> votes;  // part -> handle -> count
    std::map<int, int> part_size;
    int labeled = 0;
    for (int i = 0; i < pred.V(); ++i) {
        if (labels[i] < 0) continue;
        int best = 0;
        for (int k = 1; k < pred.K(); ++k)
            if (pred.weights(i, k) > pred.weights(i, best)) best = k;
        ++votes[labels[i]][best];
        ++part_size[labels[i]];
        ++labeled;
    }
    require(labeled > 0, "part_recovery: no labeled vertices");

    // biggest parts claim their favorite handle first; one handle per part
    std::vector<int> order;
    for (const auto& [part, n] : part_size) order.push_back(part);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return part_size[a] != part_size[b] ? part_size[a] > part_size[b] : a < b;
    });
    std::vector<bool> claimed(pred.K(), false);
    int matched = 0;
    for (int part : order) {
        int best_handle = -1, best_votes = 0;
        for (const auto& [handle, n] : votes[part])
            if (!claimed[handle] && n > best_votes) {
                best_handle = handle;
                best_votes = n;
            }
        if (best_handle >= 0) {
            claimed[best_handle] = true;
            matched += best_votes;
        }
    }
    return static_cast<double>(matched) / labeled;
}

}  // namespace handleforge
