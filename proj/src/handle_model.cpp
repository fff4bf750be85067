#include "handleforge/handle_model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "handleforge/error.hpp"
#include "handleforge/kernels.hpp"

namespace handleforge {

using nlohmann::json;

namespace {

constexpr double kInactiveThreshold = 1e-8;

// Effective per-row weights after masking inactive handles. Returns the
// input unchanged when every handle is active.
Mat effective_weights(const SkinningWeights& s, const HandleSet& handles) {
    bool all_active = true;
    for (bool a : handles.active) all_active &= a;
    if (all_active) return s.weights;
    Mat w = s.weights;
    for (int i = 0; i < w.rows(); ++i) {
        double total = 0.0;
        for (int k = 0; k < w.cols(); ++k) {
            if (!handles.active[k]) w(i, k) = 0.0;
            total += w(i, k);
        }
        if (total < 1e-12) {
            // row supported only by masked handles; spread uniformly over
            // the active set
            int n_active = 0;
            for (bool a : handles.active) n_active += a;
            for (int k = 0; k < w.cols(); ++k) w(i, k) = handles.active[k] ? 1.0 / n_active : 0.0;
        } else {
            for (int k = 0; k < w.cols(); ++k) w(i, k) /= total;
        }
    }
    return w;
}

std::vector<double> frame_affines(const DecodedFrame& dec, const HandleFrame& frame,
                                  const HandleSet& handles) {
    const int K = frame.K();
    std::vector<double> aff(static_cast<size_t>(K) * 12);
    for (int k = 0; k < K; ++k) {
        const Mat3& R = dec.local_rot[k];
        const Vec3 h(handles.positions(k, 0), handles.positions(k, 1), handles.positions(k, 2));
        const Vec3 t(frame.t_local(k, 0), frame.t_local(k, 1), frame.t_local(k, 2));
        const Vec3 b = t + h - R * h;
        double* a = aff.data() + 12 * k;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) a[3 * r + c] = R(r, c);
        a[9] = b.x();
        a[10] = b.y();
        a[11] = b.z();
    }
    return aff;
}

Mat gather_rows(const Mat& m, const std::vector<int>& ids) {
    Mat out(static_cast<int>(ids.size()), m.cols());
    for (size_t r = 0; r < ids.size(); ++r)
        for (int c = 0; c < m.cols(); ++c) out(static_cast<int>(r), c) = m(ids[r], c);
    return out;
}

json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Mat mat_from_json(const json& j, int expect_cols, const char* what) {
    if (!j.is_array()) fail(std::string("hmo: ") + what + " must be an array");
    Mat m(static_cast<int>(j.size()), expect_cols);
    for (size_t i = 0; i < j.size(); ++i) {
        const json& row = j[i];
        if (!row.is_array() || static_cast<int>(row.size()) != expect_cols)
            fail(std::string("hmo: ") + what + " row " + std::to_string(i) + " must have " +
                 std::to_string(expect_cols) + " entries");
        for (int c = 0; c < expect_cols; ++c) m(static_cast<int>(i), c) = row[c].get<double>();
    }
    return m;
}

}  // namespace

void validate_weights(const SkinningWeights& s) {
    for (int i = 0; i < s.V(); ++i) {
        double total = 0.0;
        for (int k = 0; k < s.K(); ++k) {
            const double w = s.weights(i, k);
            if (!(w >= -1e-9 && w <= 1.0 + 1e-9))
                fail("skinning weights: entry (" + std::to_string(i) + "," + std::to_string(k) +
                     ") = " + std::to_string(w) + " outside [0,1]");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-6)
            fail("skinning weights: row " + std::to_string(i) + " sums to " +
                 std::to_string(total) + ", expected 1");
    }
}

HandleSet handle_positions(const SkinningWeights& s, const Mat& rest_vertices) {
    require(rest_vertices.rows() == s.V() && rest_vertices.cols() == 3,
            "handle_positions: vertex count mismatch");
    const int K = s.K();
    const int V = s.V();
    HandleSet hs;
    hs.positions = Mat(K, 3);
    hs.active.assign(K, true);

    Vec3 centroid = Vec3::Zero();
    for (int i = 0; i < V; ++i)
        centroid += Vec3(rest_vertices(i, 0), rest_vertices(i, 1), rest_vertices(i, 2));
    if (V > 0) centroid /= V;

    for (int k = 0; k < K; ++k) {
        double total = 0.0;
        Vec3 acc = Vec3::Zero();
        for (int i = 0; i < V; ++i) {
            const double w = s.weights(i, k);
            total += w;
            acc += w * Vec3(rest_vertices(i, 0), rest_vertices(i, 1), rest_vertices(i, 2));
        }
        if (total < kInactiveThreshold) {
            hs.active[k] = false;
            for (int c = 0; c < 3; ++c) hs.positions(k, c) = centroid[c];
        } else {
            acc /= total;
            for (int c = 0; c < 3; ++c) hs.positions(k, c) = acc[c];
        }
    }
    return hs;
}

HandleFrame HandleFrame::identity(int K) {
    HandleFrame f;
    f.t_local = Mat(K, 3);
    f.r_local = Mat(K, 6);
    for (int k = 0; k < K; ++k) {
        f.r_local(k, 0) = 1.0;  // identity 6D: first two columns of I
        f.r_local(k, 4) = 1.0;
    }
    return f;
}

DecodedFrame decode_frame(const HandleFrame& frame) {
    DecodedFrame dec;
    dec.local_rot.resize(frame.K());
    for (int k = 0; k < frame.K(); ++k) dec.local_rot[k] = rot6d_to_matrix(frame.r_local.row(k), k);
    dec.global_rot = rodrigues(frame.r_global);
    return dec;
}

void validate_motion(const HandleMotion& m) {
    require(!m.frames.empty(), "motion: no frames");
    require(m.frame_count() <= kMaxMotionFrames,
            "motion: " + std::to_string(m.frame_count()) + " frames exceeds the padded length " +
                std::to_string(kMaxMotionFrames));
    const int K = m.frames.front().K();
    for (const auto& f : m.frames)
        require(f.K() == K && f.r_local.rows() == K, "motion: inconsistent handle count across frames");
    if (m.has_delta()) {
        require(static_cast<int>(m.delta.size()) == m.frame_count(),
                "motion: delta block count differs from frame count");
        for (const auto& d : m.delta)
            require(d.rows() == K && d.cols() == 3, "motion: delta block must be K x 3");
    }
}

Mat deform(const Mat& rest_vertices, const SkinningWeights& s, const HandleSet& handles,
           const HandleFrame& frame) {
    require(rest_vertices.rows() == s.V(), "deform: vertex count mismatch");
    require(s.K() == handles.K() && s.K() == frame.K(), "deform: handle count mismatch");
    const int V = rest_vertices.rows();

    const DecodedFrame dec = decode_frame(frame);
    const Mat w = effective_weights(s, handles);
    const std::vector<double> aff = frame_affines(dec, frame, handles);

    Mat out(V, 3);
    kernels::lbs_blend(rest_vertices.data(), V, w.data(), s.K(), aff.data(), out.data());

    const Mat3& Rg = dec.global_rot;
    for (int i = 0; i < V; ++i) {
        const Vec3 u(out(i, 0), out(i, 1), out(i, 2));
        const Vec3 y = Rg * u + frame.t_global;
        for (int c = 0; c < 3; ++c) out(i, c) = y[c];
    }
    return out;
}

Mat deform_subset(const Mat& rest_vertices, const std::vector<int>& ids,
                  const SkinningWeights& s, const HandleSet& handles, const HandleFrame& frame) {
    SkinningWeights sub{gather_rows(s.weights, ids)};
    return deform(gather_rows(rest_vertices, ids), sub, handles, frame);
}

DeformGrad deform_backward(const Mat& rest_vertices, const std::vector<int>* ids,
                           const SkinningWeights& s, const HandleSet& handles,
                           const HandleFrame& frame, const Mat& d_out, bool want_weights,
                           bool want_handles) {
    for (bool a : handles.active)
        require(a, "deform_backward: inactive handles are not supported in training paths");

    const int K = frame.K();
    const DecodedFrame dec = decode_frame(frame);
    const Mat3& Rg = dec.global_rot;

    std::vector<int> all;
    if (!ids) {
        all.resize(rest_vertices.rows());
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        ids = &all;
    }
    require(d_out.rows() == static_cast<int>(ids->size()) && d_out.cols() == 3,
            "deform_backward: gradient shape mismatch");

    DeformGrad g;
    g.d_t_local = Mat(K, 3);
    g.d_r_local = Mat(K, 6);
    if (want_weights) g.d_weights = Mat(s.V(), K);
    if (want_handles) g.d_handles = Mat(K, 3);

    std::vector<Mat3> dR_local(K, Mat3::Zero());
    Mat3 dRg = Mat3::Zero();

    for (size_t r = 0; r < ids->size(); ++r) {
        const int i = (*ids)[r];
        const Vec3 v(rest_vertices(i, 0), rest_vertices(i, 1), rest_vertices(i, 2));
        const Vec3 gi(d_out(static_cast<int>(r), 0), d_out(static_cast<int>(r), 1),
                      d_out(static_cast<int>(r), 2));

        // recompute the pre-global blend for dRg
        Vec3 u = Vec3::Zero();
        for (int k = 0; k < K; ++k) {
            const double w = s.weights(i, k);
            if (w == 0.0) continue;
            const Vec3 h(handles.positions(k, 0), handles.positions(k, 1), handles.positions(k, 2));
            const Vec3 t(frame.t_local(k, 0), frame.t_local(k, 1), frame.t_local(k, 2));
            u += w * (dec.local_rot[k] * (v - h) + t + h);
        }

        g.d_t_global += gi;
        dRg += gi * u.transpose();
        const Vec3 du = Rg.transpose() * gi;

        for (int k = 0; k < K; ++k) {
            const double w = s.weights(i, k);
            const Vec3 h(handles.positions(k, 0), handles.positions(k, 1), handles.positions(k, 2));
            const Vec3 t(frame.t_local(k, 0), frame.t_local(k, 1), frame.t_local(k, 2));
            if (want_weights) {
                const Vec3 contrib = dec.local_rot[k] * (v - h) + t + h;
                g.d_weights(i, k) += du.dot(contrib);
            }
            if (w == 0.0) continue;
            for (int c = 0; c < 3; ++c) g.d_t_local(k, c) += w * du[c];
            dR_local[k] += w * du * (v - h).transpose();
            if (want_handles) {
                const Vec3 dh = w * ((Mat3::Identity() - dec.local_rot[k]).transpose() * du);
                for (int c = 0; c < 3; ++c) g.d_handles(k, c) += dh[c];
            }
        }
    }

    for (int k = 0; k < K; ++k) rot6d_backward(frame.r_local.row(k), dR_local[k], g.d_r_local.row(k));
    g.d_r_global = rodrigues_backward(frame.r_global, dRg);
    return g;
}

HandleFrame apply_adaptation(const HandleFrame& frame, const Mat& delta) {
    require(delta.rows() == frame.K() && delta.cols() == 3,
            "apply_adaptation: delta must be K x 3");
    HandleFrame out = frame;
    out.t_local += delta;
    return out;
}

Mat handle_trajectory_with_rest(const HandleSet& handles, const HandleMotion& motion,
                                bool include_delta) {
    validate_motion(motion);
    const int K = handles.K();
    require(motion.K() == K, "handle_trajectory: handle count mismatch");
    if (include_delta) require(motion.has_delta(), "handle_trajectory: motion carries no delta");

    Mat traj(motion.frame_count() + 1, 3 * K);
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < 3; ++c) traj(0, 3 * k + c) = handles.positions(k, c);

    for (int n = 0; n < motion.frame_count(); ++n) {
        const HandleFrame& f = motion.frames[n];
        const Mat3 Rg = rodrigues(f.r_global);
        for (int k = 0; k < K; ++k) {
            Vec3 t(f.t_local(k, 0), f.t_local(k, 1), f.t_local(k, 2));
            if (include_delta)
                t += Vec3(motion.delta[n](k, 0), motion.delta[n](k, 1), motion.delta[n](k, 2));
            const Vec3 h(handles.positions(k, 0), handles.positions(k, 1), handles.positions(k, 2));
            const Vec3 p = Rg * (t + h) + f.t_global;
            for (int c = 0; c < 3; ++c) traj(n + 1, 3 * k + c) = p[c];
        }
    }
    return traj;
}

TrajectoryGrad handle_trajectory_backward(const HandleSet& handles, const HandleMotion& motion,
                                          bool include_delta, const Mat& d_traj) {
    const int K = handles.K();
    const int N = motion.frame_count();
    require(motion.K() == K, "handle_trajectory: handle count mismatch");
    if (include_delta) require(motion.has_delta(), "handle_trajectory: motion carries no delta");
    require(d_traj.rows() == N + 1 && d_traj.cols() == 3 * K,
            "handle_trajectory_backward: gradient shape differs from the trajectory");

    TrajectoryGrad out;
    out.d_t_local.assign(N, Mat(K, 3));
    out.d_t_global.assign(N, Vec3::Zero());
    out.d_r_global.assign(N, Vec3::Zero());
    if (include_delta) out.d_delta.assign(N, Mat(K, 3));

    for (int n = 0; n < N; ++n) {
        const HandleFrame& f = motion.frames[n];
        const Mat3 Rg = rodrigues(f.r_global);
        Mat3 dRg = Mat3::Zero();
        for (int k = 0; k < K; ++k) {
            const Vec3 g(d_traj(n + 1, 3 * k), d_traj(n + 1, 3 * k + 1), d_traj(n + 1, 3 * k + 2));
            Vec3 t(f.t_local(k, 0), f.t_local(k, 1), f.t_local(k, 2));
            if (include_delta)
                t += Vec3(motion.delta[n](k, 0), motion.delta[n](k, 1), motion.delta[n](k, 2));
            const Vec3 h(handles.positions(k, 0), handles.positions(k, 1), handles.positions(k, 2));

            const Vec3 dt = Rg.transpose() * g;  // p = Rg (t + h) + tg
            for (int c = 0; c < 3; ++c) {
                out.d_t_local[n](k, c) = dt[c];
                if (include_delta) out.d_delta[n](k, c) = dt[c];
            }
            dRg += g * (t + h).transpose();
            out.d_t_global[n] += g;
        }
        out.d_r_global[n] = rodrigues_backward(f.r_global, dRg);
    }
    return out;
}

void save_hmo(const HandleMotion& motion, const std::filesystem::path& path) {
    validate_motion(motion);
    json j;
    j["fps"] = motion.fps;
    j["K"] = motion.K();
    json frames = json::array();
    for (const auto& f : motion.frames) {
        json jf;
        jf["t_local"] = mat_to_json(f.t_local);
        jf["r_local"] = mat_to_json(f.r_local);
        jf["t_global"] = {f.t_global.x(), f.t_global.y(), f.t_global.z()};
        jf["r_global"] = {f.r_global.x(), f.r_global.y(), f.r_global.z()};
        frames.push_back(std::move(jf));
    }
    j["frames"] = std::move(frames);
    if (motion.has_delta()) {
        json deltas = json::array();
        for (const auto& d : motion.delta) deltas.push_back(mat_to_json(d));
        j["delta"] = std::move(deltas);
    }
    std::ofstream out(path);
    if (!out) fail("save_hmo: cannot open " + path.string());
    out << j.dump(1) << "\n";
    if (!out) fail("save_hmo: write failure on " + path.string());
}

HandleMotion load_hmo(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("load_hmo: cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("load_hmo: " + path.string() + ": " + e.what());
    }
    HandleMotion m;
    m.fps = j.value("fps", 20);
    const int K = j.at("K").get<int>();
    for (const json& jf : j.at("frames")) {
        HandleFrame f;
        f.t_local = mat_from_json(jf.at("t_local"), 3, "t_local");
        f.r_local = mat_from_json(jf.at("r_local"), 6, "r_local");
        require(f.t_local.rows() == K && f.r_local.rows() == K,
                "load_hmo: frame handle count differs from header K");
        const auto& tg = jf.at("t_global");
        const auto& rg = jf.at("r_global");
        for (int c = 0; c < 3; ++c) {
            f.t_global[c] = tg.at(c).get<double>();
            f.r_global[c] = rg.at(c).get<double>();
        }
        m.frames.push_back(std::move(f));
    }
    if (j.contains("delta"))
        for (const json& jd : j.at("delta")) m.delta.push_back(mat_from_json(jd, 3, "delta"));
    validate_motion(m);
    return m;
}

}  // namespace handleforge
