#include "handleforge/motion_extraction.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "handleforge/error.hpp"

namespace handleforge {

using nlohmann::json;

void validate_rig(const SyntheticRig& rig, int V) {
    const int J = rig.J();
    require(J >= 1, "rig: no joints");
    require(static_cast<int>(rig.parents.size()) == J, "rig: parent list length differs from J");
    require(rig.parents[0] == -1, "rig: joint 0 must be the root (parent -1)");
    for (int j = 1; j < J; ++j)
        require(rig.parents[j] >= 0 && rig.parents[j] < J && rig.parents[j] != j,
                "rig: joint " + std::to_string(j) + " has invalid parent");
    // cycle check: every joint must reach the root within J hops
    for (int j = 0; j < J; ++j) {
        int cur = j, hops = 0;
        while (cur != 0) {
            cur = rig.parents[cur];
            if (++hops > J) fail("rig: parent graph has a cycle through joint " + std::to_string(j));
        }
    }
    require(rig.skeletal_skinning.rows() == V && rig.skeletal_skinning.cols() == J,
            "rig: skinning shape is not V x J");
    for (int i = 0; i < V; ++i) {
        double total = 0.0;
        for (int j = 0; j < J; ++j) {
            require(rig.skeletal_skinning(i, j) >= -1e-9, "rig: negative skinning weight");
            total += rig.skeletal_skinning(i, j);
        }
        require(std::abs(total - 1.0) < 1e-6,
                "rig: skinning row " + std::to_string(i) + " does not sum to 1");
    }
    for (int v : rig.limb_vertices)
        require(v >= 0 && v < V, "rig: limb vertex index out of range");
}

std::vector<int> dominant_parts(const Mat& skinning, double threshold) {
    std::vector<int> labels(skinning.rows(), -1);
    for (int i = 0; i < skinning.rows(); ++i) {
        int best = 0;
        for (int j = 1; j < skinning.cols(); ++j)
            if (skinning(i, j) > skinning(i, best)) best = j;
        if (skinning(i, best) > threshold) labels[i] = best;
    }
    return labels;
}

namespace {

struct Affine {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 operator()(const Vec3& x) const { return R * x + t; }
    Affine then_after(const Affine& outer) const {  // outer ∘ this
        return Affine{outer.R * R, outer.R * t + outer.t};
    }
};

}  // namespace

PosedMesh skeletal_pose(const Mesh& mesh, const SyntheticRig& rig, const Pose& pose) {
    const int V = mesh.vertex_count();
    const int J = rig.J();
    validate_rig(rig, V);
    require(pose.J() == J, "skeletal_pose: pose joint count differs from rig");

    // local transform of joint j: rotate about the joint's rest position
    std::vector<Affine> local(J);
    for (int j = 0; j < J; ++j) {
        const Vec3 c(rig.joints(j, 0), rig.joints(j, 1), rig.joints(j, 2));
        const Mat3 R = rodrigues(Vec3(pose.joint_rot(j, 0), pose.joint_rot(j, 1), pose.joint_rot(j, 2)));
        local[j] = Affine{R, c - R * c};
    }
    local[0].t += pose.root_t;

    // compose down the tree (parents may appear in any order)
    std::vector<Affine> world(J);
    std::vector<char> done(J, 0);
    for (int j = 0; j < J; ++j) {
        // walk up to the nearest resolved ancestor, then unwind
        std::vector<int> chain;
        int cur = j;
        while (!done[cur]) {
            chain.push_back(cur);
            if (rig.parents[cur] < 0) break;
            cur = rig.parents[cur];
        }
        for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
            const int n = *it;
            world[n] = rig.parents[n] < 0 ? local[n] : local[n].then_after(world[rig.parents[n]]);
            done[n] = 1;
        }
    }

    PosedMesh out;
    out.positions = Mat(V, 3);
    for (int i = 0; i < V; ++i) {
        const Vec3 v(mesh.vertices(i, 0), mesh.vertices(i, 1), mesh.vertices(i, 2));
        Vec3 acc = Vec3::Zero();
        for (int j = 0; j < J; ++j) {
            const double w = rig.skeletal_skinning(i, j);
            if (w != 0.0) acc += w * world[j](v);
        }
        for (int c = 0; c < 3; ++c) out.positions(i, c) = acc[c];
    }
    return out;
}

RigidFit fit_rigid_weighted(const Mat& src, const Mat& dst, const double* w, int n,
                            const std::string& what) {
    require(src.rows() == n && dst.rows() == n && src.cols() == 3 && dst.cols() == 3,
            what + ": point set shapes disagree");
    RigidFit fit;
    double W = 0.0;
    Vec3 sm = Vec3::Zero(), dm = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
        W += w[i];
        sm += w[i] * Vec3(src(i, 0), src(i, 1), src(i, 2));
        dm += w[i] * Vec3(dst(i, 0), dst(i, 1), dst(i, 2));
    }
    if (W <= 1e-12) fail(what + ": total weight vanishes");
    sm /= W;
    dm /= W;

    Mat3 M = Mat3::Zero();
    for (int i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        const Vec3 a = Vec3(src(i, 0), src(i, 1), src(i, 2)) - sm;
        const Vec3 b = Vec3(dst(i, 0), dst(i, 1), dst(i, 2)) - dm;
        M += w[i] * b * a.transpose();
    }

    Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sig = svd.singularValues();
    if (sig[1] <= 1e-12 + 1e-9 * sig[0])
        fail(what + ": rank-deficient support (collinear or degenerate weighting)");
    Mat3 D = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) D(2, 2) = -1.0;
    fit.R = svd.matrixU() * D * svd.matrixV().transpose();
    fit.t = dm - fit.R * sm;
    fit.src_mean = sm;
    fit.dst_mean = dm;
    fit.weight_sum = W;
    fit.M = M;
    return fit;
}

Mat3 polar_rotation_backward(const Mat3& M, const Mat3& R, const Mat3& dR) {
    // S = R^T M is symmetric on the solution manifold; perturbing M moves R
    // along R [w]x with (tr(S) I - S) w = axial(R^T dM). Transposing that
    // linear map gives dL/dM = R [q]x for q solving (tr(S) I - S) q = axial(R^T G).
    const Mat3 S = R.transpose() * M;
    const Mat3 Q = S.trace() * Mat3::Identity() - S;
    // symmetrize against fp noise before solving
    const Mat3 Qs = 0.5 * (Q + Q.transpose());
    Eigen::SelfAdjointEigenSolver<Mat3> eig(Qs);
    if (eig.eigenvalues().minCoeff() <= 1e-10 * std::max(1.0, std::abs(S.trace())))
        fail("polar_rotation_backward: rotation is not differentiable here (degenerate spectrum)");
    const Vec3 rhs = axial_pairing(R.transpose() * dR);
    const Vec3 q = eig.eigenvectors() *
                   (eig.eigenvectors().transpose() * rhs).cwiseQuotient(eig.eigenvalues());
    return R * skew(q);
}

void fit_rigid_backward_weights(const RigidFit& fit, const Mat& src, const Mat& dst, int n,
                                const Mat3& dR, const Vec3& dt, double* dw) {
    // t = dm - R sm, so dt feeds the rotation and both centroids
    Mat3 g_R = dR - dt * fit.src_mean.transpose();
    const Vec3 g_dm = dt;
    Vec3 g_sm = -fit.R.transpose() * dt;

    const Mat3 g_M = polar_rotation_backward(fit.M, fit.R, g_R);

    const double W = fit.weight_sum;
    for (int i = 0; i < n; ++i) {
        const Vec3 a = Vec3(src(i, 0), src(i, 1), src(i, 2)) - fit.src_mean;
        const Vec3 b = Vec3(dst(i, 0), dst(i, 1), dst(i, 2)) - fit.dst_mean;
        // dM/dw_i = (b_i - dm)(a_i - sm)^T exactly (weighted-covariance identity)
        double g = (g_M * a).dot(b);
        g += g_dm.dot(b) / W;
        g += g_sm.dot(a) / W;
        dw[i] += g;
    }
}

HandleFrame fit_frame(const Mat& rest_vertices, const PosedMesh& posed, const SkinningWeights& s,
                      const HandleSet& handles, const FitOptions& opts) {
    const int V = rest_vertices.rows();
    const int K = s.K();
    require(posed.positions.rows() == V && posed.positions.cols() == 3,
            "fit_frame: posed vertex count differs from rest");
    require(s.V() == V, "fit_frame: weight rows differ from V");
    require(handles.K() == K, "fit_frame: handle count differs from weight columns");

    HandleFrame frame = HandleFrame::identity(K);

    Mat local_target = posed.positions;
    if (!opts.local_only) {
        std::vector<double> ones(V, 1.0);
        RigidFit g = fit_rigid_weighted(rest_vertices, posed.positions, ones.data(), V,
                                        "fit_frame: global");
        frame.t_global = g.t;
        frame.r_global = log_so3(g.R);
        // remove the global factor: p' = Rg^T (p - tg)
        for (int i = 0; i < V; ++i) {
            const Vec3 p(posed.positions(i, 0), posed.positions(i, 1), posed.positions(i, 2));
            const Vec3 q = g.R.transpose() * (p - g.t);
            for (int c = 0; c < 3; ++c) local_target(i, c) = q[c];
        }
    }

    std::vector<double> col(V);
    for (int k = 0; k < K; ++k) {
        if (!handles.active[k]) continue;
        for (int i = 0; i < V; ++i) col[i] = s.weights(i, k);
        RigidFit f = fit_rigid_weighted(rest_vertices, local_target, col.data(), V,
                                        "fit_frame: handle " + std::to_string(k));
        const Vec3 h(handles.positions(k, 0), handles.positions(k, 1), handles.positions(k, 2));
        // residual form is R (v - h) + tau + h, so tau = (dm - R sm) - (I - R) h
        const Vec3 tau = f.t - (Mat3::Identity() - f.R) * h;
        for (int c = 0; c < 3; ++c) frame.t_local(k, c) = tau[c];
        matrix_to_rot6d(f.R, frame.r_local.row(k));
    }
    return frame;
}

HandleMotion fit_sequence(const Mat& rest_vertices, const std::vector<PosedMesh>& posed_seq,
                          const SkinningWeights& s, const HandleSet& handles, int fps,
                          const FitOptions& opts) {
    require(!posed_seq.empty(), "fit_sequence: empty sequence");
    HandleMotion motion;
    motion.fps = fps;
    for (size_t n = 0; n < posed_seq.size(); ++n) {
        try {
            motion.frames.push_back(fit_frame(rest_vertices, posed_seq[n], s, handles, opts));
        } catch (const Error& e) {
            fail("fit_sequence: frame " + std::to_string(n) + ": " + e.what());
        }
    }
    validate_motion(motion);
    return motion;
}

namespace {

json mat_rows(const Mat& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Mat rows_mat(const json& j, int cols, const char* what) {
    if (!j.is_array()) fail(std::string("rig: ") + what + " must be an array");
    Mat m(static_cast<int>(j.size()), cols);
    for (size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_array() || static_cast<int>(j[i].size()) != cols)
            fail(std::string("rig: ") + what + " row " + std::to_string(i) + " needs " +
                 std::to_string(cols) + " values");
        for (int c = 0; c < cols; ++c) m(static_cast<int>(i), c) = j[i][c].get<double>();
    }
    return m;
}

}  // namespace

void save_rig(const SyntheticRig& rig, const std::filesystem::path& path) {
    json j;
    j["joints"] = mat_rows(rig.joints);
    j["parents"] = rig.parents;
    j["skinning"] = mat_rows(rig.skeletal_skinning);
    j["limb_vertices"] = rig.limb_vertices;
    if (rig.pose.J() == rig.J() && rig.J() > 0) {
        j["pose"] = {{"joint_rot", mat_rows(rig.pose.joint_rot)},
                     {"root_t", {rig.pose.root_t.x(), rig.pose.root_t.y(), rig.pose.root_t.z()}}};
    }
    json seqs = json::array();
    for (const auto& seq : rig.sequences) {
        json js;
        js["name"] = seq.name;
        js["text"] = seq.text;
        js["fps"] = seq.fps;
        json poses = json::array();
        for (const auto& p : seq.poses)
            poses.push_back({{"joint_rot", mat_rows(p.joint_rot)},
                             {"root_t", {p.root_t.x(), p.root_t.y(), p.root_t.z()}}});
        js["poses"] = std::move(poses);
        seqs.push_back(std::move(js));
    }
    j["sequences"] = std::move(seqs);

    std::ofstream out(path);
    if (!out) fail("save_rig: cannot open " + path.string());
    out << j.dump(1) << "\n";
    if (!out) fail("save_rig: write failure on " + path.string());
}

namespace {

Pose pose_from_json(const json& jp) {
    Pose p;
    p.joint_rot = rows_mat(jp.at("joint_rot"), 3, "pose joint_rot");
    const auto& rt = jp.at("root_t");
    for (int c = 0; c < 3; ++c) p.root_t[c] = rt.at(c).get<double>();
    return p;
}

}  // namespace

SyntheticRig load_rig(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("load_rig: cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("load_rig: " + path.string() + ": " + e.what());
    }
    SyntheticRig rig;
    rig.joints = rows_mat(j.at("joints"), 3, "joints");
    rig.parents = j.at("parents").get<std::vector<int>>();
    rig.skeletal_skinning = rows_mat(j.at("skinning"), rig.joints.rows(), "skinning");
    if (j.contains("limb_vertices")) rig.limb_vertices = j["limb_vertices"].get<std::vector<int>>();
    rig.pose = j.contains("pose") ? pose_from_json(j["pose"]) : Pose::rest(rig.J());
    if (j.contains("sequences"))
        for (const json& js : j["sequences"]) {
            PoseSequence seq;
            seq.name = js.at("name").get<std::string>();
            seq.text = js.value("text", seq.name);
            seq.fps = js.value("fps", 20);
            for (const json& jp : js.at("poses")) seq.poses.push_back(pose_from_json(jp));
            rig.sequences.push_back(std::move(seq));
        }
    validate_rig(rig, rig.skeletal_skinning.rows());
    return rig;
}

}  // namespace handleforge
