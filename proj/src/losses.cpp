#include "handleforge/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "handleforge/error.hpp"
#include "handleforge/rng.hpp"

namespace handleforge {

using nlohmann::json;

namespace {

constexpr double kProbFloor = 1e-8;  // skinning KL clamp
constexpr double kDiscClamp = 1e-7;  // adversarial probability clamp

Vec3 row3(const Mat& m, int r) { return Vec3(m(r, 0), m(r, 1), m(r, 2)); }

void add_row3(Mat& m, int r, const Vec3& v) {
    m(r, 0) += v.x();
    m(r, 1) += v.y();
    m(r, 2) += v.z();
}

}  // namespace

HandleAdjacency derive_adjacency(const Mesh& mesh, const SkinningWeights& s) {
    require(s.V() == mesh.vertex_count(), "derive_adjacency: weight rows differ from V");
    std::vector<int> owner(s.V());
    for (int i = 0; i < s.V(); ++i) {
        int best = 0;
        for (int k = 1; k < s.K(); ++k)
            if (s.weights(i, k) > s.weights(i, best)) best = k;
        owner[i] = best;
    }
    std::set<std::pair<int, int>> uniq;
    for (const auto& e : edge_set(mesh).edges) {
        const int a = owner[e[0]], b = owner[e[1]];
        if (a != b) uniq.insert({std::min(a, b), std::max(a, b)});
    }
    HandleAdjacency adj;
    adj.pairs.assign(uniq.begin(), uniq.end());
    return adj;
}

HandleAdjacency load_adjacency(const std::filesystem::path& path, int K) {
    std::ifstream in(path);
    if (!in) fail("load_adjacency: cannot open " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        fail("load_adjacency: " + path.string() + ": " + e.what());
    }
    if (!doc.contains("pairs") || !doc["pairs"].is_array())
        fail("load_adjacency: " + path.string() + ": missing \"pairs\" array");
    std::set<std::pair<int, int>> uniq;
    for (const auto& p : doc["pairs"]) {
        if (!p.is_array() || p.size() != 2)
            fail("load_adjacency: " + path.string() + ": each pair must be [i, j]");
        int i = p[0].get<int>(), j = p[1].get<int>();
        if (i == j || i < 0 || j < 0 || i >= K || j >= K)
            fail("load_adjacency: " + path.string() + ": bad pair (" + std::to_string(i) + ", " +
                 std::to_string(j) + ") for K=" + std::to_string(K));
        uniq.insert({std::min(i, j), std::max(i, j)});
    }
    HandleAdjacency adj;
    adj.pairs.assign(uniq.begin(), uniq.end());
    return adj;
}

double skinning_loss(const SkinningWeights& pred, const std::vector<int>& part_labels,
                     int sample_pairs, uint64_t seed, Mat* d_pred) {
    const int V = pred.V(), K = pred.K();
    require(static_cast<int>(part_labels.size()) == V,
            "skinning_loss: label count differs from V");
    require(sample_pairs > 0, "skinning_loss: need a positive pair count");
    std::vector<int> labeled;
    for (int i = 0; i < V; ++i)
        if (part_labels[i] >= 0) labeled.push_back(i);
    require(labeled.size() >= 2, "skinning_loss: need at least 2 labeled vertices");
    if (d_pred) *d_pred = Mat(V, K);

    RandomStream rng(seed);
    const int L = static_cast<int>(labeled.size());
    double total = 0.0;
    for (int p = 0; p < sample_pairs; ++p) {
        const int i = labeled[rng.uniform_int(0, L - 1)];
        int j = labeled[rng.uniform_int(0, L - 1)];
        while (j == i) j = labeled[rng.uniform_int(0, L - 1)];
        const double gamma = part_labels[i] == part_labels[j] ? 1.0 : -1.0;
        for (int k = 0; k < K; ++k) {
            const double si = pred.weights(i, k), sj = pred.weights(j, k);
            const double ci = std::clamp(si, kProbFloor, 1.0);
            const double cj = std::clamp(sj, kProbFloor, 1.0);
            const double log_ratio = std::log(ci) - std::log(cj);
            total += gamma * si * log_ratio;
            if (d_pred) {
                const double g = gamma / sample_pairs;
                const bool i_in = si > kProbFloor && si < 1.0;
                const bool j_in = sj > kProbFloor && sj < 1.0;
                (*d_pred)(i, k) += g * (log_ratio + (i_in ? 1.0 : 0.0));
                if (j_in) (*d_pred)(j, k) -= g * si / cj;
            }
        }
    }
    return total / sample_pairs;
}

double pose_loss(const Mesh& rest, const SyntheticRig& rig, const SkinningWeights& s,
                 const HandleSet& handles, const Pose& pose) {
    const PosedMesh posed = skeletal_pose(rest, rig, pose);
    const HandleFrame frame = fit_frame(rest.vertices, posed, s, handles, FitOptions{true});
    const Mat out = deform(rest.vertices, s, handles, frame);
    double acc = 0.0;
    for (size_t idx = 0; idx < out.size(); ++idx) {
        const double e = out[idx] - posed.positions[idx];
        acc += e * e;
    }
    return acc / rest.vertex_count();
}

double pose_loss_grad(const Mesh& rest, const SyntheticRig& rig, const SkinningWeights& s,
                      const Pose& pose, Mat& d_weights) {
    const int V = rest.vertex_count(), K = s.K();
    require(s.V() == V, "pose_loss: weight rows differ from V");
    const PosedMesh posed = skeletal_pose(rest, rig, pose);
    const Mat& X = rest.vertices;
    const Mat& P = posed.positions;
    d_weights = Mat(V, K);

    // The deformation that pose_loss scores collapses, handle by handle, to
    //   y_i = sum_k s_ik (R_k x_i + t_k)
    // with (R_k, t_k) the weighted rigid fit of the rest shape onto the posed
    // one under weight column k. Handle positions cancel, so the only
    // gradient paths are the blend itself and the fits.
    std::vector<RigidFit> fits;
    fits.reserve(K);
    std::vector<double> wcol(V);
    for (int k = 0; k < K; ++k) {
        for (int i = 0; i < V; ++i) wcol[i] = s.weights(i, k);
        fits.push_back(
            fit_rigid_weighted(X, P, wcol.data(), V, "pose fit, handle " + std::to_string(k)));
    }

    Mat g(V, 3);  // dL/dy
    double loss = 0.0;
    for (int i = 0; i < V; ++i) {
        const Vec3 x = row3(X, i);
        Vec3 y = Vec3::Zero();
        for (int k = 0; k < K; ++k) y += s.weights(i, k) * (fits[k].R * x + fits[k].t);
        const Vec3 e = y - row3(P, i);
        loss += e.squaredNorm();
        add_row3(g, i, (2.0 / V) * e);
    }
    loss /= V;

    std::vector<double> dwk(V);
    for (int k = 0; k < K; ++k) {
        Mat3 dR = Mat3::Zero();
        Vec3 dt = Vec3::Zero();
        for (int i = 0; i < V; ++i) {
            const Vec3 x = row3(X, i);
            const Vec3 gi = row3(g, i);
            d_weights(i, k) += gi.dot(fits[k].R * x + fits[k].t);
            dR += s.weights(i, k) * gi * x.transpose();
            dt += s.weights(i, k) * gi;
        }
        std::fill(dwk.begin(), dwk.end(), 0.0);
        fit_rigid_backward_weights(fits[k], X, P, V, dR, dt, dwk.data());
        for (int i = 0; i < V; ++i) d_weights(i, k) += dwk[i];
    }
    return loss;
}

double root_loss(const SkinningWeights& s, const Mat& rest_vertices, const Vec3& root,
                 Mat* d_weights) {
    const int V = s.V();
    require(rest_vertices.rows() == V && rest_vertices.cols() == 3,
            "root_loss: vertices must be V x 3 matching the weights");
    double W = 0.0;
    Vec3 c = Vec3::Zero();
    for (int i = 0; i < V; ++i) {
        const double w = s.weights(i, 0);
        W += w;
        c += w * row3(rest_vertices, i);
    }
    require(W > 1e-12, "root_loss: root handle has no weight support");
    c /= W;
    const Vec3 e = c - root;
    if (d_weights) {
        *d_weights = Mat(V, s.K());
        for (int i = 0; i < V; ++i)
            (*d_weights)(i, 0) = 2.0 * e.dot(row3(rest_vertices, i) - c) / W;
    }
    return e.squaredNorm();
}

double spring_loss(const Mat& traj, const HandleAdjacency& adj, double sigma,
                   const std::vector<bool>* active, Mat* d_traj) {
    require(traj.cols() % 3 == 0 && traj.cols() > 0, "spring_loss: trajectory columns must be 3K");
    const int K = traj.cols() / 3;
    const int rows = traj.rows();  // rest row + N motion frames
    require(rows >= 2, "spring_loss: trajectory needs the rest row plus at least one frame");
    if (active)
        require(static_cast<int>(active->size()) == K,
                "spring_loss: active mask size differs from K");
    if (d_traj) *d_traj = Mat(rows, traj.cols());

    auto hpos = [&](int n, int k) { return Vec3(traj(n, 3 * k), traj(n, 3 * k + 1), traj(n, 3 * k + 2)); };

    double loss = 0.0;
    std::vector<double> dist(rows), dd(rows);
    std::vector<Vec3> dir(rows);
    for (const auto& [i, j] : adj.pairs) {
        require(i >= 0 && i < j && j < K, "spring_loss: adjacency pair out of range for K=" +
                                              std::to_string(K));
        if (active) {
            if (!(*active)[i])
                fail("spring_loss: adjacency references inactive handle " + std::to_string(i));
            if (!(*active)[j])
                fail("spring_loss: adjacency references inactive handle " + std::to_string(j));
        }
        for (int n = 0; n < rows; ++n) {
            const Vec3 diff = hpos(n, i) - hpos(n, j);
            dist[n] = diff.norm();
            dir[n] = dist[n] > 1e-12 ? Vec3(diff / dist[n]) : Vec3::Zero();
            dd[n] = 0.0;
        }
        const double w0 = std::exp(-(dist[0] + sigma));
        for (int n = 1; n < rows; ++n) {
            const double rest_dev = dist[n] - dist[0];
            const double step_dev = dist[n] - dist[n - 1];
            loss += w0 * rest_dev * rest_dev + step_dev * step_dev;
            if (d_traj) {
                dd[n] += 2.0 * w0 * rest_dev + 2.0 * step_dev;
                dd[n - 1] -= 2.0 * step_dev;
                // d/d dist[0]: both explicitly and through the weight
                dd[0] += -w0 * rest_dev * rest_dev - 2.0 * w0 * rest_dev;
            }
        }
        if (d_traj) {
            for (int n = 0; n < rows; ++n) {
                const Vec3 gi = dd[n] * dir[n];
                (*d_traj)(n, 3 * i) += gi.x();
                (*d_traj)(n, 3 * i + 1) += gi.y();
                (*d_traj)(n, 3 * i + 2) += gi.z();
                (*d_traj)(n, 3 * j) -= gi.x();
                (*d_traj)(n, 3 * j + 1) -= gi.y();
                (*d_traj)(n, 3 * j + 2) -= gi.z();
            }
        }
    }
    return loss;
}

double arap_objective(const Mat& deformed, const EdgeSet& edges, const Mat& delta,
                      const Mat& delta_prev, double nu_v, Mat* d_deformed, Mat* d_delta) {
    require(deformed.cols() == 3, "arap_objective: deformed must be V x 3");
    require(delta.same_shape(delta_prev), "arap_objective: delta shapes differ");
    if (d_deformed) *d_deformed = Mat(deformed.rows(), 3);
    if (d_delta) *d_delta = Mat(delta.rows(), delta.cols());

    double loss = 0.0;
    for (int e = 0; e < edges.count(); ++e) {
        const int i = edges.edges[e][0], j = edges.edges[e][1];
        require(j < deformed.rows(), "arap_objective: edge index out of range");
        const Vec3 diff = row3(deformed, i) - row3(deformed, j);
        const double len = diff.norm();
        const double dev = len - edges.rest_lengths[e];
        loss += nu_v * dev * dev;
        if (d_deformed && len > 1e-12) {
            const Vec3 g = (2.0 * nu_v * dev / len) * diff;
            add_row3(*d_deformed, i, g);
            add_row3(*d_deformed, j, -g);
        }
    }
    for (size_t idx = 0; idx < delta.size(); ++idx) {
        const double dv = delta[idx] - delta_prev[idx];
        loss += dv * dv;
        if (d_delta) (*d_delta)[idx] = 2.0 * dv;
    }
    return loss;
}

double motion_loss(const Mat& x0, const Mat& x0_hat, const std::vector<uint8_t>& frame_valid,
                   Mat* d_x0_hat) {
    require(x0.same_shape(x0_hat), "motion_loss: tensor shapes differ");
    require(static_cast<int>(frame_valid.size()) == x0.rows(),
            "motion_loss: mask size differs from frame count");
    int n_valid = 0;
    for (uint8_t v : frame_valid) n_valid += v ? 1 : 0;
    require(n_valid > 0, "motion_loss: no valid frames");
    const double denom = static_cast<double>(n_valid) * x0.cols();
    if (d_x0_hat) *d_x0_hat = Mat(x0.rows(), x0.cols());

    double loss = 0.0;
    for (int r = 0; r < x0.rows(); ++r) {
        if (!frame_valid[r]) continue;
        for (int c = 0; c < x0.cols(); ++c) {
            const double e = x0_hat(r, c) - x0(r, c);
            loss += e * e;
            if (d_x0_hat) (*d_x0_hat)(r, c) = 2.0 * e / denom;
        }
    }
    return loss / denom;
}

Discriminator::Discriminator(int in_dim, uint64_t seed) : in_dim_(in_dim) {
    require(in_dim > 0, "discriminator: input dim must be positive");
    RandomStream rng(seed);
    nn::init_xavier(params_.create("W1", in_dim, 128), rng);
    params_.create("b1", 1, 128);
    nn::init_xavier(params_.create("W2", 128, 64), rng);
    params_.create("b2", 1, 64);
    nn::init_xavier(params_.create("W3", 64, 1), rng);
    params_.create("b3", 1, 1);
}

Mat Discriminator::forward(const Mat& batch, Cache& cache) const {
    require(batch.cols() == in_dim_, "discriminator: batch width differs from input dim");
    require(batch.rows() > 0, "discriminator: empty batch");
    cache.x = batch;
    cache.h1 = nn::relu(nn::linear(batch, params_.at("W1"), params_.at("b1")));
    cache.h2 = nn::relu(nn::linear(cache.h1, params_.at("W2"), params_.at("b2")));
    cache.probs = nn::sigmoid(nn::linear(cache.h2, params_.at("W3"), params_.at("b3")));
    return cache.probs;
}

Mat Discriminator::forward(const Mat& batch) const {
    Cache cache;
    return forward(batch, cache);
}

Mat Discriminator::backward(const Cache& cache, const Mat& d_probs) {
    // relu masks by sign, so the post-activation values select the same
    // entries as the pre-activation ones
    Mat dz3 = nn::sigmoid_backward(cache.probs, d_probs);
    Mat dh2 = nn::linear_backward(cache.h2, params_.at("W3"), params_.at("b3"), dz3);
    Mat dz2 = nn::relu_backward(cache.h2, dh2);
    Mat dh1 = nn::linear_backward(cache.h1, params_.at("W2"), params_.at("b2"), dz2);
    Mat dz1 = nn::relu_backward(cache.h1, dh1);
    return nn::linear_backward(cache.x, params_.at("W1"), params_.at("b1"), dz1);
}

namespace {

double clamp_prob(double p) { return std::clamp(p, kDiscClamp, 1.0 - kDiscClamp); }
bool prob_in_range(double p) { return p > kDiscClamp && p < 1.0 - kDiscClamp; }

}  // namespace

std::pair<double, double> adversarial_loss(const Discriminator& disc, const Mat& real,
                                           const Mat& fake) {
    const Mat pr = disc.forward(real);
    const Mat pf = disc.forward(fake);
    double d_loss = 0.0, g_loss = 0.0;
    for (int i = 0; i < pr.rows(); ++i) d_loss -= std::log(clamp_prob(pr(i, 0))) / pr.rows();
    for (int i = 0; i < pf.rows(); ++i) {
        d_loss -= std::log(1.0 - clamp_prob(pf(i, 0))) / pf.rows();
        g_loss -= std::log(clamp_prob(pf(i, 0))) / pf.rows();
    }
    return {d_loss, g_loss};
}

double adversarial_d_step(Discriminator& disc, const Mat& real, const Mat& fake) {
    Discriminator::Cache cr, cf;
    const Mat pr = disc.forward(real, cr);
    const Mat pf = disc.forward(fake, cf);
    const double Br = pr.rows(), Bf = pf.rows();
    double loss = 0.0;
    Mat dpr(pr.rows(), 1), dpf(pf.rows(), 1);
    for (int i = 0; i < pr.rows(); ++i) {
        const double p = pr(i, 0);
        loss -= std::log(clamp_prob(p)) / Br;
        dpr(i, 0) = prob_in_range(p) ? -1.0 / (Br * p) : 0.0;
    }
    for (int i = 0; i < pf.rows(); ++i) {
        const double p = pf(i, 0);
        loss -= std::log(1.0 - clamp_prob(p)) / Bf;
        dpf(i, 0) = prob_in_range(p) ? 1.0 / (Bf * (1.0 - p)) : 0.0;
    }
    disc.backward(cr, dpr);
    disc.backward(cf, dpf);
    return loss;
}

double adversarial_g_backward(Discriminator& disc, const Mat& fake, Mat& d_fake) {
    Discriminator::Cache cf;
    const Mat pf = disc.forward(fake, cf);
    const double Bf = pf.rows();
    double loss = 0.0;
    Mat dpf(pf.rows(), 1);
    for (int i = 0; i < pf.rows(); ++i) {
        const double p = pf(i, 0);
        loss -= std::log(clamp_prob(p)) / Bf;
        dpf(i, 0) = prob_in_range(p) ? -1.0 / (Bf * p) : 0.0;
    }
    d_fake = disc.backward(cf, dpf);
    return loss;
}

}  // namespace handleforge
