#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <vector>

#include "handleforge/error.hpp"
#include "handleforge/losses.hpp"
#include "handleforge/rng.hpp"
#include "handleforge/rotation.hpp"

using namespace handleforge;

namespace {

Mat random_stochastic(RandomStream& rng, int rows, int cols) {
    Mat w(rows, cols);
    for (int i = 0; i < rows; ++i) {
        double total = 0.0;
        for (int k = 0; k < cols; ++k) {
            w(i, k) = 0.05 + rng.uniform();  // interior of the simplex
            total += w(i, k);
        }
        for (int k = 0; k < cols; ++k) w(i, k) /= total;
    }
    return w;
}

Mat3 random_rotation(RandomStream& rng) {
    return rodrigues(Vec3(rng.normal(), rng.normal(), rng.normal()));
}

void rigid_rows(Mat& pts, const Mat3& R, const Vec3& t) {
    for (int i = 0; i < pts.rows(); ++i) {
        const Vec3 p = R * Vec3(pts(i, 0), pts(i, 1), pts(i, 2)) + t;
        for (int c = 0; c < 3; ++c) pts(i, c) = p[c];
    }
}

// two 4-vertex tetrahedral clusters, one near the origin, one near (2,0,0)
Mesh two_cluster_mesh() {
    Mesh mesh;
    mesh.vertices = Mat(8, 3);
    const double c0[4][3] = {{0, 0, 0}, {0.4, 0, 0}, {0, 0.4, 0}, {0, 0, 0.4}};
    const double c1[4][3] = {{2, 0, 0}, {2.4, 0, 0}, {2, 0.4, 0}, {2, 0, 0.4}};
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 3; ++c) {
            mesh.vertices(i, c) = c0[i][c];
            mesh.vertices(4 + i, c) = c1[i][c];
        }
    mesh.faces = {{0, 1, 2}, {0, 2, 3}, {4, 5, 6}, {4, 6, 7}};
    return mesh;
}

SyntheticRig two_part_rig() {
    SyntheticRig rig;
    rig.joints = Mat(2, 3);
    rig.joints(1, 0) = 1.5;  // root at origin, child at (1.5, 0, 0)
    rig.parents = {-1, 0};
    rig.skeletal_skinning = Mat(8, 2);
    for (int i = 0; i < 4; ++i) {
        rig.skeletal_skinning(i, 0) = 1.0;
        rig.skeletal_skinning(4 + i, 1) = 1.0;
    }
    return rig;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("adjacency derived from argmax ownership across edges") {
    Mesh mesh;
    mesh.vertices = Mat(4, 3);
    mesh.vertices(1, 0) = 1;
    mesh.vertices(2, 1) = 1;
    mesh.vertices(3, 0) = mesh.vertices(3, 1) = 1;
    mesh.faces = {{0, 1, 2}, {1, 3, 2}};
    SkinningWeights s{Mat(4, 3)};
    s.weights(0, 0) = 1;  // verts 0,1 -> handle 0
    s.weights(1, 0) = 1;
    s.weights(2, 1) = 1;  // vert 2 -> handle 1
    s.weights(3, 2) = 1;  // vert 3 -> handle 2
    HandleAdjacency adj = derive_adjacency(mesh, s);
    REQUIRE(adj.pairs.size() == 3);
    CHECK(adj.pairs[0] == std::pair<int, int>(0, 1));  // edges (0,2),(1,2)
    CHECK(adj.pairs[1] == std::pair<int, int>(0, 2));  // edge (1,3)
    CHECK(adj.pairs[2] == std::pair<int, int>(1, 2));  // edge (2,3)
}

TEST_CASE("adjacency override file") {
    const auto path = std::filesystem::temp_directory_path() / "hf_adj.json";
    {
        std::ofstream out(path);
        out << "{\"pairs\": [[2, 0], [1, 2], [0, 2]]}";
    }
    HandleAdjacency adj = load_adjacency(path, 3);
    REQUIRE(adj.pairs.size() == 2);  // (0,2) listed twice under different orders
    CHECK(adj.pairs[0] == std::pair<int, int>(0, 2));
    CHECK(adj.pairs[1] == std::pair<int, int>(1, 2));
    {
        std::ofstream out(path);
        out << "{\"pairs\": [[0, 5]]}";
    }
    CHECK_THROWS_WITH_AS(load_adjacency(path, 3), doctest::Contains("bad pair"), Error);
    std::filesystem::remove(path);
}

TEST_CASE("part-contrastive skinning values") {
    // identical one-hot rows, same part: zero
    SkinningWeights s{Mat(2, 2)};
    s.weights(0, 0) = s.weights(1, 0) = 1.0;
    CHECK(skinning_loss(s, {0, 0}, 64, 1) == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));

    // opposite one-hot rows, same part: every pair contributes log(1e8)
    s.weights = Mat(2, 2);
    s.weights(0, 0) = 1.0;
    s.weights(1, 1) = 1.0;
    CHECK(skinning_loss(s, {0, 0}, 64, 1) == doctest::Approx(std::log(1e8)).epsilon(1e-12));

    // different parts with distinct soft rows: negative (pushes apart)
    s.weights(0, 0) = 0.7;
    s.weights(0, 1) = 0.3;
    s.weights(1, 0) = 0.3;
    s.weights(1, 1) = 0.7;
    CHECK(skinning_loss(s, {0, 1}, 64, 1) < -0.1);

    CHECK_THROWS_WITH_AS(skinning_loss(s, {0, -1}, 64, 1), doctest::Contains("labeled"), Error);
}

TEST_CASE("skinning gradient matches finite differences") {
    RandomStream rng(70);
    const int V = 7, K = 3;
    SkinningWeights s{random_stochastic(rng, V, K)};
    std::vector<int> labels = {0, 0, 1, 1, 2, -1, 0};  // vertex 5 unlabeled
    Mat grad;
    const double base = skinning_loss(s, labels, 50, 9, &grad);
    CHECK(std::isfinite(base));
    const double h = 1e-6;
    for (int i = 0; i < V; ++i)
        for (int k = 0; k < K; ++k) {
            const double keep = s.weights(i, k);
            s.weights(i, k) = keep + h;
            const double up = skinning_loss(s, labels, 50, 9);
            s.weights(i, k) = keep - h;
            const double dn = skinning_loss(s, labels, 50, 9);
            s.weights(i, k) = keep;
            CHECK(grad(i, k) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5).scale(1.0));
        }
}

TEST_CASE("pose reproduction is zero at rest and for matching rigid parts") {
    RandomStream rng(71);
    Mesh mesh = two_cluster_mesh();
    SyntheticRig rig = two_part_rig();

    SkinningWeights soft{random_stochastic(rng, 8, 2)};
    HandleSet handles = handle_positions(soft, mesh.vertices);
    CHECK(pose_loss(mesh, rig, soft, handles, Pose::rest(2)) ==
          doctest::Approx(0.0).epsilon(1e-12).scale(1.0));

    // one-hot handles matching the skeletal parts reproduce any rigid pose
    SkinningWeights onehot{rig.skeletal_skinning};
    HandleSet oh_handles = handle_positions(onehot, mesh.vertices);
    Pose pose = Pose::rest(2);
    pose.joint_rot(1, 2) = 0.8;  // bend the limb about z
    pose.joint_rot(0, 1) = 0.3;  // and roll the whole body
    CHECK(pose_loss(mesh, rig, onehot, oh_handles, pose) ==
          doctest::Approx(0.0).epsilon(1e-10).scale(1.0));

    // soft weights cannot reproduce a articulated pose exactly
    CHECK(pose_loss(mesh, rig, soft, handles, pose) > 1e-4);
}

TEST_CASE("pose gradient path agrees with the deform path and finite differences") {
    RandomStream rng(72);
    Mesh mesh = two_cluster_mesh();
    SyntheticRig rig = two_part_rig();
    Pose pose = Pose::rest(2);
    pose.joint_rot(1, 1) = 0.6;
    pose.root_t = Vec3(0.1, -0.2, 0.05);

    SkinningWeights s{random_stochastic(rng, 8, 2)};
    HandleSet handles = handle_positions(s, mesh.vertices);

    Mat grad;
    const double via_fits = pose_loss_grad(mesh, rig, s, pose, grad);
    const double via_deform = pose_loss(mesh, rig, s, handles, pose);
    CHECK(via_fits == doctest::Approx(via_deform).epsilon(1e-12));

    Mat dummy;
    const double h = 1e-6;
    for (int i = 0; i < 8; ++i)
        for (int k = 0; k < 2; ++k) {
            const double keep = s.weights(i, k);
            s.weights(i, k) = keep + h;
            const double up = pose_loss_grad(mesh, rig, s, pose, dummy);
            s.weights(i, k) = keep - h;
            const double dn = pose_loss_grad(mesh, rig, s, pose, dummy);
            s.weights(i, k) = keep;
            CHECK(grad(i, k) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1.0));
        }
}

TEST_CASE("root placement loss and gradient") {
    Mat verts(3, 3);
    verts(0, 0) = 1.0;
    verts(1, 1) = 2.0;
    verts(2, 2) = 3.0;
    SkinningWeights s{Mat(3, 2)};
    s.weights(0, 0) = 1.0;
    s.weights(1, 1) = 1.0;
    s.weights(2, 1) = 1.0;

    // centroid of column 0 is exactly vertex 0
    CHECK(root_loss(s, verts, Vec3(1, 0, 0)) == 0.0);
    // unit offset: squared distance 1
    CHECK(root_loss(s, verts, Vec3(0, 0, 0)) == doctest::Approx(1.0));

    RandomStream rng(73);
    SkinningWeights soft{random_stochastic(rng, 3, 2)};
    Mat grad;
    const Vec3 b(0.3, -0.1, 0.4);
    root_loss(soft, verts, b, &grad);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 2; ++k) {
            const double keep = soft.weights(i, k);
            soft.weights(i, k) = keep + h;
            const double up = root_loss(soft, verts, b);
            soft.weights(i, k) = keep - h;
            const double dn = root_loss(soft, verts, b);
            soft.weights(i, k) = keep;
            CHECK(grad(i, k) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6).scale(1.0));
        }

    SkinningWeights empty{Mat(3, 2)};
    CHECK_THROWS_WITH_AS(root_loss(empty, verts, b), doctest::Contains("no weight support"),
                         Error);
}

TEST_CASE("spring energy hand values") {
    // static trajectory: zero
    RandomStream rng(74);
    Mat rest(1, 6);
    rng.fill_normal(rest.data(), rest.size());
    Mat traj(4, 6);
    for (int n = 0; n < 4; ++n)
        for (int c = 0; c < 6; ++c) traj(n, c) = rest(0, c);
    HandleAdjacency adj{{{0, 1}}};
    CHECK(spring_loss(traj, adj, 0.7) == 0.0);

    // rest length 1, single motion frame at length 2:
    // exp(-(1+sigma)) * (2-1)^2 + (2-1)^2
    Mat t2(2, 6);
    t2(0, 3) = 1.0;  // handle 1 at (1,0,0), handle 0 at origin
    t2(1, 3) = 2.0;
    CHECK(spring_loss(t2, adj, 0.0) == doctest::Approx(std::exp(-1.0) + 1.0).epsilon(1e-12));
    CHECK(spring_loss(t2, adj, 0.5) == doctest::Approx(std::exp(-1.5) + 1.0).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(spring_loss(Mat(1, 6), adj, 0.0), doctest::Contains("rest row"), Error);
    std::vector<bool> active = {true, false};
    CHECK_THROWS_WITH_AS(spring_loss(t2, adj, 0.0, &active),
                         doctest::Contains("inactive handle 1"), Error);
}

TEST_CASE("spring energy matches a longhand transcription") {
    RandomStream rng(75);
    const int K = 4, rows = 6;
    Mat traj(rows, 3 * K);
    rng.fill_normal(traj.data(), traj.size());
    HandleAdjacency adj{{{0, 1}, {1, 3}, {2, 3}}};
    const double sigma = 0.3;

    auto dist = [&](int n, int i, int j) {
        double acc = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = traj(n, 3 * i + c) - traj(n, 3 * j + c);
            acc += d * d;
        }
        return std::sqrt(acc);
    };
    double expected = 0.0;
    for (auto [i, j] : adj.pairs) {
        const double d0 = dist(0, i, j);
        for (int n = 1; n < rows; ++n) {
            expected += std::exp(-(d0 + sigma)) * (dist(n, i, j) - d0) * (dist(n, i, j) - d0);
            expected += (dist(n, i, j) - dist(n - 1, i, j)) * (dist(n, i, j) - dist(n - 1, i, j));
        }
    }
    CHECK(spring_loss(traj, adj, sigma) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("spring energy is rigid-motion invariant") {
    RandomStream rng(76);
    const int K = 3, rows = 5;
    Mat traj(rows, 3 * K);
    rng.fill_normal(traj.data(), traj.size());
    HandleAdjacency adj{{{0, 1}, {0, 2}}};
    const double base = spring_loss(traj, adj, 0.2);

    // a common rigid motion applied to every frame preserves all distances
    Mat moved = traj;
    const Mat3 R = random_rotation(rng);
    const Vec3 t(0.4, -1.0, 2.2);
    for (int n = 0; n < rows; ++n)
        for (int k = 0; k < K; ++k) {
            const Vec3 p = R * Vec3(traj(n, 3 * k), traj(n, 3 * k + 1), traj(n, 3 * k + 2)) + t;
            for (int c = 0; c < 3; ++c) moved(n, 3 * k + c) = p[c];
        }
    CHECK(spring_loss(moved, adj, 0.2) == doctest::Approx(base).epsilon(1e-8));

    // rigidly riding handles cost nothing
    Mat ride(rows, 3 * K);
    for (int n = 0; n < rows; ++n) {
        const Mat3 Rn = random_rotation(rng);
        const Vec3 tn(rng.normal(), rng.normal(), rng.normal());
        for (int k = 0; k < K; ++k) {
            const Vec3 p = Rn * Vec3(traj(0, 3 * k), traj(0, 3 * k + 1), traj(0, 3 * k + 2)) + tn;
            for (int c = 0; c < 3; ++c) ride(n, 3 * k + c) = p[c];
        }
    }
    CHECK(spring_loss(ride, adj, 0.2) == doctest::Approx(0.0).epsilon(1e-8).scale(1.0));
}

TEST_CASE("spring gradient matches finite differences") {
    RandomStream rng(77);
    const int K = 3, rows = 4;
    Mat traj(rows, 3 * K);
    rng.fill_normal(traj.data(), traj.size());
    HandleAdjacency adj{{{0, 1}, {1, 2}}};
    Mat grad;
    spring_loss(traj, adj, 0.4, nullptr, &grad);
    const double h = 1e-5;
    for (size_t idx = 0; idx < traj.size(); ++idx) {
        const double keep = traj[idx];
        traj[idx] = keep + h;
        const double up = spring_loss(traj, adj, 0.4);
        traj[idx] = keep - h;
        const double dn = spring_loss(traj, adj, 0.4);
        traj[idx] = keep;
        CHECK(grad[idx] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1.0));
    }
}

TEST_CASE("edge preservation objective") {
    // unit equilateral triangle
    Mesh mesh;
    mesh.vertices = Mat(3, 3);
    mesh.vertices(1, 0) = 1.0;
    mesh.vertices(2, 0) = 0.5;
    mesh.vertices(2, 1) = std::sqrt(3.0) / 2.0;
    mesh.faces = {{0, 1, 2}};
    EdgeSet edges = edge_set(mesh);
    REQUIRE(edges.count() == 3);

    Mat delta(2, 3), delta_prev(2, 3);
    CHECK(arap_objective(mesh.vertices, edges, delta, delta_prev, 10.0) == 0.0);

    // doubling every coordinate stretches each unit edge by exactly 1
    Mat doubled = mesh.vertices;
    doubled *= 2.0;
    CHECK(arap_objective(doubled, edges, delta, delta_prev, 10.0) ==
          doctest::Approx(30.0).epsilon(1e-12));
    CHECK(arap_objective(doubled, edges, delta, delta_prev, 1.0) ==
          doctest::Approx(3.0).epsilon(1e-12));

    // rigid motion costs nothing; the delta term is unaffected
    RandomStream rng(78);
    Mat moved = mesh.vertices;
    rigid_rows(moved, random_rotation(rng), Vec3(3, -1, 2));
    delta(0, 0) = 0.5;  // |delta - delta_prev|^2 = 0.25
    CHECK(arap_objective(moved, edges, delta, delta_prev, 10.0) ==
          doctest::Approx(0.25).epsilon(1e-8));
}

TEST_CASE("edge preservation gradients match finite differences") {
    RandomStream rng(79);
    Mesh mesh = two_cluster_mesh();
    EdgeSet edges = edge_set(mesh);
    Mat deformed = mesh.vertices;
    for (size_t i = 0; i < deformed.size(); ++i) deformed[i] += 0.2 * rng.normal();
    Mat delta(2, 3), delta_prev(2, 3);
    rng.fill_normal(delta.data(), delta.size());
    rng.fill_normal(delta_prev.data(), delta_prev.size());

    Mat d_def, d_delta;
    arap_objective(deformed, edges, delta, delta_prev, 10.0, &d_def, &d_delta);
    const double h = 1e-5;
    for (size_t idx = 0; idx < deformed.size(); ++idx) {
        const double keep = deformed[idx];
        deformed[idx] = keep + h;
        const double up = arap_objective(deformed, edges, delta, delta_prev, 10.0);
        deformed[idx] = keep - h;
        const double dn = arap_objective(deformed, edges, delta, delta_prev, 10.0);
        deformed[idx] = keep;
        CHECK(d_def[idx] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1.0));
    }
    for (size_t idx = 0; idx < delta.size(); ++idx) {
        const double keep = delta[idx];
        delta[idx] = keep + h;
        const double up = arap_objective(deformed, edges, delta, delta_prev, 10.0);
        delta[idx] = keep - h;
        const double dn = arap_objective(deformed, edges, delta, delta_prev, 10.0);
        delta[idx] = keep;
        CHECK(d_delta[idx] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6).scale(1.0));
    }
}

TEST_CASE("masked motion reconstruction error") {
    RandomStream rng(80);
    Mat x0(5, 4);
    rng.fill_normal(x0.data(), x0.size());
    std::vector<uint8_t> valid = {1, 1, 1, 0, 0};

    CHECK(motion_loss(x0, x0, valid) == 0.0);

    Mat shifted = x0;
    for (size_t i = 0; i < shifted.size(); ++i) shifted[i] += 1.0;
    CHECK(motion_loss(x0, shifted, valid) == doctest::Approx(1.0).epsilon(1e-12));

    // padded rows are ignored entirely
    Mat junk = shifted;
    junk(3, 0) = 1e9;
    junk(4, 2) = -1e9;
    CHECK(motion_loss(x0, junk, valid) == doctest::Approx(1.0).epsilon(1e-12));

    Mat pred(5, 4);
    rng.fill_normal(pred.data(), pred.size());
    Mat grad;
    motion_loss(x0, pred, valid, &grad);
    const double h = 1e-6;
    for (size_t idx = 0; idx < pred.size(); ++idx) {
        const double keep = pred[idx];
        pred[idx] = keep + h;
        const double up = motion_loss(x0, pred, valid);
        pred[idx] = keep - h;
        const double dn = motion_loss(x0, pred, valid);
        pred[idx] = keep;
        CHECK(grad[idx] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5).scale(1.0));
    }

    std::vector<uint8_t> none(5, 0);
    CHECK_THROWS_WITH_AS(motion_loss(x0, pred, none), doctest::Contains("no valid frames"),
                         Error);
}

TEST_CASE("uninformed and perfect discriminators hit the textbook values") {
    Discriminator disc(4, 90);
    for (auto* p : disc.params().all()) p->value.set_zero();  // all-zero net outputs 0.5
    RandomStream rng(81);
    Mat real(6, 4), fake(5, 4);
    rng.fill_normal(real.data(), real.size());
    rng.fill_normal(fake.data(), fake.size());
    auto [d_loss, g_loss] = adversarial_loss(disc, real, fake);
    CHECK(d_loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
    CHECK(g_loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    // wire a sign detector: input > 0 -> prob ~ 1, input < 0 -> prob ~ 0
    Discriminator sharp(1, 91);
    for (auto* p : sharp.params().all()) p->value.set_zero();
    sharp.params().at("W1").value(0, 0) = 1.0;   // positive branch
    sharp.params().at("W1").value(0, 1) = -1.0;  // negative branch
    sharp.params().at("W2").value(0, 0) = 1.0;
    sharp.params().at("W2").value(1, 1) = 1.0;
    sharp.params().at("W3").value(0, 0) = 8.0;
    sharp.params().at("W3").value(1, 0) = -8.0;
    Mat pos(3, 1), neg(3, 1);
    for (int i = 0; i < 3; ++i) {
        pos(i, 0) = 10.0 + i;
        neg(i, 0) = -10.0 - i;
    }
    auto [sharp_d, sharp_g] = adversarial_loss(sharp, pos, neg);
    CHECK(sharp_d < 1e-6);  // clamped perfection: about 2e-7
    CHECK(sharp_g > 10.0);
}

TEST_CASE("adversarial values match a longhand transcription") {
    Discriminator disc(6, 92);
    RandomStream rng(82);
    Mat real(7, 6), fake(4, 6);
    rng.fill_normal(real.data(), real.size());
    rng.fill_normal(fake.data(), fake.size());
    const Mat pr = disc.forward(real);
    const Mat pf = disc.forward(fake);
    double d_expected = 0.0, g_expected = 0.0;
    for (int i = 0; i < 7; ++i) d_expected -= std::log(pr(i, 0)) / 7.0;
    for (int i = 0; i < 4; ++i) {
        d_expected -= std::log(1.0 - pf(i, 0)) / 4.0;
        g_expected -= std::log(pf(i, 0)) / 4.0;
    }
    auto [d_loss, g_loss] = adversarial_loss(disc, real, fake);
    CHECK(d_loss == doctest::Approx(d_expected).epsilon(1e-12));
    CHECK(g_loss == doctest::Approx(g_expected).epsilon(1e-12));
}

TEST_CASE("discriminator step gradients match finite differences") {
    Discriminator disc(4, 93);
    RandomStream rng(83);
    Mat real(5, 4), fake(5, 4);
    rng.fill_normal(real.data(), real.size());
    rng.fill_normal(fake.data(), fake.size());

    disc.params().zero_grads();
    const double loss = adversarial_d_step(disc, real, fake);
    CHECK(loss == doctest::Approx(adversarial_loss(disc, real, fake).first).epsilon(1e-12));

    const double h = 1e-6;
    for (auto* p : disc.params().all()) {
        for (int probe = 0; probe < 8; ++probe) {
            const size_t idx = rng.next_u64() % p->value.size();
            const double keep = p->value[idx];
            p->value[idx] = keep + h;
            const double up = adversarial_loss(disc, real, fake).first;
            p->value[idx] = keep - h;
            const double dn = adversarial_loss(disc, real, fake).first;
            p->value[idx] = keep;
            CHECK(p->grad[idx] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1.0));
        }
    }
}

TEST_CASE("generator backward feeds the fake batch and only pollutes disc grads") {
    Discriminator disc(4, 94);
    RandomStream rng(84);
    Mat real(5, 4), fake(5, 4);
    rng.fill_normal(real.data(), real.size());
    rng.fill_normal(fake.data(), fake.size());

    Mat d_fake;
    const double g_loss = adversarial_g_backward(disc, fake, d_fake);
    CHECK(g_loss == doctest::Approx(adversarial_loss(disc, real, fake).second).epsilon(1e-12));
    REQUIRE(d_fake.same_shape(fake));

    const double h = 1e-6;
    for (size_t idx = 0; idx < fake.size(); ++idx) {
        const double keep = fake[idx];
        fake[idx] = keep + h;
        const double up = adversarial_loss(disc, real, fake).second;
        fake[idx] = keep - h;
        const double dn = adversarial_loss(disc, real, fake).second;
        fake[idx] = keep;
        CHECK(d_fake[idx] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1.0));
    }

    // the g pass leaves junk in the disc grads; zeroing before the d step
    // restores exactly the pure d-step gradients
    disc.params().zero_grads();
    adversarial_d_step(disc, real, fake);
    std::vector<double> pure;
    for (auto* p : disc.params().all())
        for (size_t i = 0; i < p->grad.size(); ++i) pure.push_back(p->grad[i]);

    adversarial_g_backward(disc, fake, d_fake);  // pollute
    disc.params().zero_grads();
    adversarial_d_step(disc, real, fake);
    size_t cursor = 0;
    bool same = true;
    for (auto* p : disc.params().all())
        for (size_t i = 0; i < p->grad.size(); ++i) same &= p->grad[i] == pure[cursor++];
    CHECK(same);
}

}  // TEST_SUITE
