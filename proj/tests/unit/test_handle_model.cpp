#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "handleforge/error.hpp"
#include "handleforge/handle_model.hpp"
#include "handleforge/rng.hpp"

using namespace handleforge;

namespace {

Mat random_vertices(RandomStream& rng, int V) {
    Mat m(V, 3);
    rng.fill_normal(m.data(), m.size());
    return m;
}

SkinningWeights random_weights(RandomStream& rng, int V, int K) {
    SkinningWeights s{Mat(V, K)};
    for (int i = 0; i < V; ++i) {
        double total = 0.0;
        for (int k = 0; k < K; ++k) {
            s.weights(i, k) = rng.uniform(0.05, 1.0);
            total += s.weights(i, k);
        }
        for (int k = 0; k < K; ++k) s.weights(i, k) /= total;
    }
    return s;
}

HandleFrame random_frame(RandomStream& rng, int K) {
    HandleFrame f = HandleFrame::identity(K);
    rng.fill_normal(f.t_local.data(), f.t_local.size(), 0.4);
    rng.fill_normal(f.r_local.data(), f.r_local.size());
    f.t_global = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.3;
    f.r_global = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.6;
    return f;
}

// Straight-line transcription of the blend equation, kept independent of
// the production path (no kernels, no frame_affines folding).
Mat blend_by_definition(const Mat& verts, const SkinningWeights& s, const HandleSet& handles,
                        const HandleFrame& frame) {
    Mat out(verts.rows(), 3);
    Mat3 Rg = rodrigues(frame.r_global);
    for (int i = 0; i < verts.rows(); ++i) {
        Vec3 v(verts(i, 0), verts(i, 1), verts(i, 2));
        Vec3 acc = Vec3::Zero();
        for (int k = 0; k < s.K(); ++k) {
            Mat3 Rk = rot6d_to_matrix(frame.r_local.row(k));
            Vec3 h(handles.positions(k, 0), handles.positions(k, 1), handles.positions(k, 2));
            Vec3 t(frame.t_local(k, 0), frame.t_local(k, 1), frame.t_local(k, 2));
            acc += s.weights(i, k) * (Rk * (v - h) + t + h);
        }
        Vec3 y = Rg * acc + frame.t_global;
        for (int c = 0; c < 3; ++c) out(i, c) = y[c];
    }
    return out;
}

HandleMotion two_frame_motion(RandomStream& rng, int K) {
    HandleMotion m;
    m.frames.push_back(random_frame(rng, K));
    m.frames.push_back(random_frame(rng, K));
    return m;
}

}  // namespace

TEST_SUITE("handle_model") {

TEST_CASE("handle positions are weighted centroids; empty handles masked") {
    RandomStream rng(21);
    Mat verts = random_vertices(rng, 12);
    SkinningWeights s = random_weights(rng, 12, 3);
    // make handle 2 unused
    for (int i = 0; i < 12; ++i) {
        double w2 = s.weights(i, 2);
        s.weights(i, 2) = 0.0;
        s.weights(i, 0) += w2;
    }
    validate_weights(s);
    HandleSet hs = handle_positions(s, verts);
    CHECK(hs.active[0]);
    CHECK(hs.active[1]);
    CHECK(!hs.active[2]);
    for (int k = 0; k < 2; ++k) {
        double total = 0.0;
        Vec3 acc = Vec3::Zero();
        for (int i = 0; i < 12; ++i) {
            total += s.weights(i, k);
            acc += s.weights(i, k) * Vec3(verts(i, 0), verts(i, 1), verts(i, 2));
        }
        acc /= total;
        for (int c = 0; c < 3; ++c) CHECK(hs.positions(k, c) == doctest::Approx(acc[c]).epsilon(1e-12));
    }
}

TEST_CASE("validate_weights rejects bad rows") {
    SkinningWeights s{Mat(2, 2)};
    s.weights(0, 0) = 0.5;
    s.weights(0, 1) = 0.5;
    s.weights(1, 0) = 0.9;
    s.weights(1, 1) = 0.2;  // sums to 1.1
    CHECK_THROWS_AS(validate_weights(s), Error);
    s.weights(1, 1) = -0.1;
    s.weights(1, 0) = 1.1;
    CHECK_THROWS_AS(validate_weights(s), Error);
}

TEST_CASE("identity frame is the identity map") {
    RandomStream rng(22);
    Mat verts = random_vertices(rng, 10);
    SkinningWeights s = random_weights(rng, 10, 4);
    HandleSet hs = handle_positions(s, verts);
    Mat out = deform(verts, s, hs, HandleFrame::identity(4));
    for (int i = 0; i < 10; ++i)
        for (int c = 0; c < 3; ++c) CHECK(out(i, c) == doctest::Approx(verts(i, c)).epsilon(1e-14));
}

TEST_CASE("pure local translation shifts every vertex") {
    RandomStream rng(23);
    Mat verts = random_vertices(rng, 8);
    SkinningWeights s = random_weights(rng, 8, 3);
    HandleSet hs = handle_positions(s, verts);
    HandleFrame f = HandleFrame::identity(3);
    for (int k = 0; k < 3; ++k) {
        f.t_local(k, 0) = 1.0;
        f.t_local(k, 1) = -2.0;
        f.t_local(k, 2) = 0.5;
    }
    Mat out = deform(verts, s, hs, f);
    for (int i = 0; i < 8; ++i) {
        CHECK(out(i, 0) == doctest::Approx(verts(i, 0) + 1.0).epsilon(1e-13));
        CHECK(out(i, 1) == doctest::Approx(verts(i, 1) - 2.0).epsilon(1e-13));
        CHECK(out(i, 2) == doctest::Approx(verts(i, 2) + 0.5).epsilon(1e-13));
    }
}

TEST_CASE("deform matches the equation written out longhand") {
    RandomStream rng(24);
    for (int t = 0; t < 5; ++t) {
        const int V = 15, K = 4;
        Mat verts = random_vertices(rng, V);
        SkinningWeights s = random_weights(rng, V, K);
        HandleSet hs = handle_positions(s, verts);
        HandleFrame f = random_frame(rng, K);
        Mat got = deform(verts, s, hs, f);
        Mat want = blend_by_definition(verts, s, hs, f);
        for (int i = 0; i < V; ++i)
            for (int c = 0; c < 3; ++c)
                CHECK(got(i, c) == doctest::Approx(want(i, c)).epsilon(1e-12));
    }
}

TEST_CASE("inactive handles renormalize the touched rows") {
    RandomStream rng(25);
    const int V = 9, K = 3;
    Mat verts = random_vertices(rng, V);
    SkinningWeights s = random_weights(rng, V, K);
    // zero out handle 2 so it gets masked
    for (int i = 0; i < V; ++i) {
        double keep = s.weights(i, 0) + s.weights(i, 1);
        s.weights(i, 0) += s.weights(i, 2) * (s.weights(i, 0) / keep);
        s.weights(i, 1) += s.weights(i, 2) * (s.weights(i, 1) / keep);
        s.weights(i, 2) = 0.0;
    }
    HandleSet hs = handle_positions(s, verts);
    REQUIRE(!hs.active[2]);

    // weights already renormalized by construction, so a frame moving only
    // handle 2 must leave the mesh at its identity image
    HandleFrame f = HandleFrame::identity(K);
    f.t_local(2, 0) = 99.0;
    Mat out = deform(verts, s, hs, f);
    for (int i = 0; i < V; ++i)
        for (int c = 0; c < 3; ++c) CHECK(out(i, c) == doctest::Approx(verts(i, c)).epsilon(1e-12));
}

TEST_CASE("subset deform equals full deform gathered") {
    RandomStream rng(26);
    const int V = 14, K = 5;
    Mat verts = random_vertices(rng, V);
    SkinningWeights s = random_weights(rng, V, K);
    HandleSet hs = handle_positions(s, verts);
    HandleFrame f = random_frame(rng, K);
    std::vector<int> ids = {0, 3, 7, 13};
    Mat sub = deform_subset(verts, ids, s, hs, f);
    Mat full = deform(verts, s, hs, f);
    for (size_t r = 0; r < ids.size(); ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(sub(static_cast<int>(r), c) == doctest::Approx(full(ids[r], c)).epsilon(1e-14));
}

TEST_CASE("deform backward matches finite differences") {
    RandomStream rng(27);
    const int V = 7, K = 3;
    Mat verts = random_vertices(rng, V);
    SkinningWeights s = random_weights(rng, V, K);
    HandleSet hs = handle_positions(s, verts);
    HandleFrame f = random_frame(rng, K);

    // scalar objective: <C, deform(...)> for a fixed random C
    Mat C(V, 3);
    rng.fill_normal(C.data(), C.size());
    auto value = [&](const SkinningWeights& sw, const HandleSet& hw, const HandleFrame& fw) {
        Mat out = deform(verts, sw, hw, fw);
        double acc = 0.0;
        for (size_t i = 0; i < out.size(); ++i) acc += out[i] * C[i];
        return acc;
    };

    DeformGrad g = deform_backward(verts, nullptr, s, hs, f, C, true, true);
    const double h = 1e-6;
    const double tol = 1e-5;

    for (int k = 0; k < K; ++k)
        for (int c = 0; c < 3; ++c) {
            HandleFrame fp = f, fm = f;
            fp.t_local(k, c) += h;
            fm.t_local(k, c) -= h;
            double fd = (value(s, hs, fp) - value(s, hs, fm)) / (2 * h);
            CHECK(g.d_t_local(k, c) == doctest::Approx(fd).epsilon(tol).scale(1.0));
        }
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < 6; ++c) {
            HandleFrame fp = f, fm = f;
            fp.r_local(k, c) += h;
            fm.r_local(k, c) -= h;
            double fd = (value(s, hs, fp) - value(s, hs, fm)) / (2 * h);
            CHECK(g.d_r_local(k, c) == doctest::Approx(fd).epsilon(tol).scale(1.0));
        }
    for (int c = 0; c < 3; ++c) {
        HandleFrame fp = f, fm = f;
        fp.t_global[c] += h;
        fm.t_global[c] -= h;
        double fd = (value(s, hs, fp) - value(s, hs, fm)) / (2 * h);
        CHECK(g.d_t_global[c] == doctest::Approx(fd).epsilon(tol).scale(1.0));

        fp = f;
        fm = f;
        fp.r_global[c] += h;
        fm.r_global[c] -= h;
        fd = (value(s, hs, fp) - value(s, hs, fm)) / (2 * h);
        CHECK(g.d_r_global[c] == doctest::Approx(fd).epsilon(tol).scale(1.0));
    }
    for (int i = 0; i < V; ++i)
        for (int k = 0; k < K; ++k) {
            SkinningWeights sp = s, sm = s;
            sp.weights(i, k) += h;
            sm.weights(i, k) -= h;
            double fd = (value(sp, hs, f) - value(sm, hs, f)) / (2 * h);
            CHECK(g.d_weights(i, k) == doctest::Approx(fd).epsilon(tol).scale(1.0));
        }
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < 3; ++c) {
            HandleSet hp = hs, hm = hs;
            hp.positions(k, c) += h;
            hm.positions(k, c) -= h;
            double fd = (value(s, hp, f) - value(s, hm, f)) / (2 * h);
            CHECK(g.d_handles(k, c) == doctest::Approx(fd).epsilon(tol).scale(1.0));
        }
}

TEST_CASE("subset backward only sees subset rows") {
    RandomStream rng(28);
    const int V = 10, K = 3;
    Mat verts = random_vertices(rng, V);
    SkinningWeights s = random_weights(rng, V, K);
    HandleSet hs = handle_positions(s, verts);
    HandleFrame f = random_frame(rng, K);
    std::vector<int> ids = {1, 4, 8};
    Mat C(3, 3);
    rng.fill_normal(C.data(), C.size());

    DeformGrad g = deform_backward(verts, &ids, s, hs, f, C, false, false);
    const double h = 1e-6;
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < 3; ++c) {
            HandleFrame fp = f, fm = f;
            fp.t_local(k, c) += h;
            fm.t_local(k, c) -= h;
            auto value = [&](const HandleFrame& fw) {
                Mat out = deform_subset(verts, ids, s, hs, fw);
                double acc = 0.0;
                for (size_t i = 0; i < out.size(); ++i) acc += out[i] * C[i];
                return acc;
            };
            double fd = (value(fp) - value(fm)) / (2 * h);
            CHECK(g.d_t_local(k, c) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        }
}

TEST_CASE("adaptation shifts local translations only") {
    RandomStream rng(29);
    HandleFrame f = random_frame(rng, 4);
    Mat delta(4, 3);
    rng.fill_normal(delta.data(), delta.size());
    HandleFrame g = apply_adaptation(f, delta);
    for (int k = 0; k < 4; ++k)
        for (int c = 0; c < 3; ++c)
            CHECK(g.t_local(k, c) == f.t_local(k, c) + delta(k, c));
    CHECK((g.t_global - f.t_global).norm() == 0.0);
    for (size_t i = 0; i < f.r_local.size(); ++i) CHECK(g.r_local[i] == f.r_local[i]);
}

TEST_CASE("trajectory: rest row plus per-frame rigid ride") {
    RandomStream rng(30);
    const int K = 3;
    Mat verts = random_vertices(rng, 6);
    SkinningWeights s = random_weights(rng, 6, K);
    HandleSet hs = handle_positions(s, verts);
    HandleMotion m = two_frame_motion(rng, K);

    Mat traj = handle_trajectory_with_rest(hs, m, false);
    REQUIRE(traj.rows() == 3);
    REQUIRE(traj.cols() == 9);
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < 3; ++c) CHECK(traj(0, 3 * k + c) == hs.positions(k, c));

    for (int n = 0; n < 2; ++n) {
        const HandleFrame& f = m.frames[n];
        Mat3 Rg = rodrigues(f.r_global);
        for (int k = 0; k < K; ++k) {
            Vec3 h(hs.positions(k, 0), hs.positions(k, 1), hs.positions(k, 2));
            Vec3 t(f.t_local(k, 0), f.t_local(k, 1), f.t_local(k, 2));
            Vec3 expect = Rg * (h + t) + f.t_global;
            for (int c = 0; c < 3; ++c)
                CHECK(traj(n + 1, 3 * k + c) == doctest::Approx(expect[c]).epsilon(1e-14));
        }
    }

    // a handle's own rotation must not move its trajectory point
    HandleMotion spun = m;
    double rz[6] = {0, 1, 0, -1, 0, 0};
    for (int c = 0; c < 6; ++c) spun.frames[0].r_local(1, c) = rz[c];
    Mat traj2 = handle_trajectory_with_rest(hs, spun, false);
    for (int i = 0; i < traj.rows(); ++i)
        for (int j = 0; j < traj.cols(); ++j) CHECK(traj2(i, j) == traj(i, j));

    // delta rides along when requested
    m.delta = {Mat(K, 3), Mat(K, 3)};
    m.delta[0](1, 0) = 0.25;
    Mat traj3 = handle_trajectory_with_rest(hs, m, true);
    Mat3 Rg = rodrigues(m.frames[0].r_global);
    Vec3 shift = Rg * Vec3(0.25, 0, 0);
    for (int c = 0; c < 3; ++c)
        CHECK(traj3(1, 3 + c) - traj(1, 3 + c) == doctest::Approx(shift[c]).epsilon(1e-13));
}

TEST_CASE("trajectory backward matches finite differences") {
    RandomStream rng(33);
    const int K = 3;
    Mat verts = random_vertices(rng, 6);
    SkinningWeights s = random_weights(rng, 6, K);
    HandleSet hs = handle_positions(s, verts);
    HandleMotion m = two_frame_motion(rng, K);
    m.delta = {Mat(K, 3), Mat(K, 3)};
    for (auto& d : m.delta) rng.fill_normal(d.data(), d.size(), 0.2);

    Mat probe(3, 9);  // linear functional L = <probe, traj> exposes every entry
    rng.fill_normal(probe.data(), probe.size());
    auto value = [&] {
        const Mat traj = handle_trajectory_with_rest(hs, m, true);
        double acc = 0.0;
        for (size_t i = 0; i < traj.size(); ++i) acc += probe[i] * traj[i];
        return acc;
    };

    TrajectoryGrad g = handle_trajectory_backward(hs, m, true, probe);
    const double h = 1e-6;
    auto fd = [&](double& x) {
        const double keep = x;
        x = keep + h;
        const double up = value();
        x = keep - h;
        const double dn = value();
        x = keep;
        return (up - dn) / (2 * h);
    };
    for (int n = 0; n < 2; ++n) {
        for (size_t i = 0; i < m.frames[n].t_local.size(); ++i)
            CHECK(g.d_t_local[n][i] ==
                  doctest::Approx(fd(m.frames[n].t_local[i])).epsilon(1e-6).scale(1.0));
        for (size_t i = 0; i < m.delta[n].size(); ++i)
            CHECK(g.d_delta[n][i] == doctest::Approx(fd(m.delta[n][i])).epsilon(1e-6).scale(1.0));
        for (int c = 0; c < 3; ++c) {
            CHECK(g.d_t_global[n][c] ==
                  doctest::Approx(fd(m.frames[n].t_global[c])).epsilon(1e-6).scale(1.0));
            CHECK(g.d_r_global[n][c] ==
                  doctest::Approx(fd(m.frames[n].r_global[c])).epsilon(1e-5).scale(1.0));
        }
    }

    // local rotations never move trajectory points, so they carry no grad path
    double before = value();
    m.frames[0].r_local(2, 1) += 0.3;
    CHECK(value() == before);
}

TEST_CASE("hmo round trip preserves every number") {
    RandomStream rng(31);
    HandleMotion m = two_frame_motion(rng, 4);
    m.fps = 24;
    m.delta = {Mat(4, 3), Mat(4, 3)};
    rng.fill_normal(m.delta[0].data(), m.delta[0].size());
    rng.fill_normal(m.delta[1].data(), m.delta[1].size());

    auto path = std::filesystem::temp_directory_path() / "hf_motion.hmo";
    save_hmo(m, path);
    HandleMotion back = load_hmo(path);

    REQUIRE(back.frame_count() == 2);
    CHECK(back.fps == 24);
    REQUIRE(back.has_delta());
    for (int n = 0; n < 2; ++n) {
        for (size_t i = 0; i < m.frames[n].t_local.size(); ++i)
            CHECK(back.frames[n].t_local[i] == m.frames[n].t_local[i]);
        for (size_t i = 0; i < m.frames[n].r_local.size(); ++i)
            CHECK(back.frames[n].r_local[i] == m.frames[n].r_local[i]);
        CHECK((back.frames[n].t_global - m.frames[n].t_global).norm() == 0.0);
        CHECK((back.frames[n].r_global - m.frames[n].r_global).norm() == 0.0);
        for (size_t i = 0; i < m.delta[n].size(); ++i) CHECK(back.delta[n][i] == m.delta[n][i]);
    }
}

TEST_CASE("motion validation limits") {
    HandleMotion m;
    CHECK_THROWS_AS(validate_motion(m), Error);
    for (int i = 0; i < kMaxMotionFrames + 1; ++i) m.frames.push_back(HandleFrame::identity(2));
    CHECK_THROWS_AS(validate_motion(m), Error);
    m.frames.resize(3);
    validate_motion(m);  // fine
    m.delta = {Mat(2, 3)};
    CHECK_THROWS_AS(validate_motion(m), Error);  // delta count != frames
    m.delta = {Mat(2, 3), Mat(2, 3), Mat(3, 3)};
    CHECK_THROWS_AS(validate_motion(m), Error);  // bad block shape
}

TEST_CASE("backward requires active handles") {
    RandomStream rng(32);
    const int V = 6, K = 3;
    Mat verts = random_vertices(rng, V);
    SkinningWeights s = random_weights(rng, V, K);
    for (int i = 0; i < V; ++i) {
        s.weights(i, 0) += s.weights(i, 2);
        s.weights(i, 2) = 0.0;
    }
    HandleSet hs = handle_positions(s, verts);
    Mat C(V, 3);
    CHECK_THROWS_AS(deform_backward(verts, nullptr, s, hs, HandleFrame::identity(K), C), Error);
}

}  // TEST_SUITE
