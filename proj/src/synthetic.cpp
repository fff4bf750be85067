#include "handleforge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "handleforge/error.hpp"
#include "handleforge/rng.hpp"

namespace handleforge {

namespace {

double segment_dist(const Vec3& p, const Vec3& a, const Vec3& b) {
    Vec3 d = b - a;
    double len2 = d.squaredNorm();
    double t = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + t * d)).norm();
}

struct TubeBuilder {
    std::vector<double> verts;  // xyz triples
    std::vector<std::array<int, 3>> faces;

    int count() const { return static_cast<int>(verts.size() / 3); }

    int push(const Vec3& p) {
        verts.push_back(p.x());
        verts.push_back(p.y());
        verts.push_back(p.z());
        return count() - 1;
    }

    // Rings of `segs` vertices from `base` along unit `axis`, side quads
    // between consecutive rings, and a capped far end. Returns the first
    // vertex index of the first ring; the tip cap is the last one pushed.
    int tube(const Vec3& base, const Vec3& axis, double length, double radius,
             int rings, int segs) {
        // Orthonormal frame around the axis.
        Vec3 ref = std::abs(axis.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
        Vec3 u = axis.cross(ref).normalized();
        Vec3 w = axis.cross(u);
        int first = count();
        for (int r = 0; r < rings; ++r) {
            Vec3 c = base + axis * (length * r / (rings - 1));
            for (int s = 0; s < segs; ++s) {
                double a = 2.0 * M_PI * s / segs;
                push(c + radius * (std::cos(a) * u + std::sin(a) * w));
            }
        }
        for (int r = 0; r + 1 < rings; ++r) {
            for (int s = 0; s < segs; ++s) {
                int s1 = (s + 1) % segs;
                int a = first + r * segs + s;
                int b = first + r * segs + s1;
                int c = first + (r + 1) * segs + s1;
                int d = first + (r + 1) * segs + s;
                faces.push_back({a, b, c});
                faces.push_back({a, c, d});
            }
        }
        int tip = push(base + axis * length);
        for (int s = 0; s < segs; ++s) {
            int s1 = (s + 1) % segs;
            faces.push_back({tip, first + (rings - 1) * segs + s,
                             first + (rings - 1) * segs + s1});
        }
        return first;
    }
};

std::string ordinal(int i) {
    static const char* names[] = {"first", "second", "third",
                                  "fourth", "fifth", "sixth"};
    return names[i];
}

}  // namespace

SynthCharacter gen_character(const SynthConfig& cfg) {
    require(cfg.limbs >= 2 && cfg.limbs <= 6, "gen_character: limbs must be in [2, 6]");
    require(cfg.ring_segments >= 3, "gen_character: ring_segments must be >= 3");
    require(cfg.torso_rings >= 2 && cfg.limb_rings >= 2,
            "gen_character: tubes need at least two rings");
    require(cfg.seq_frames >= 2, "gen_character: seq_frames must be >= 2");

    RandomStream rng(cfg.seed);
    TubeBuilder tb;

    int segs = cfg.ring_segments;
    double half = 0.5 * cfg.torso_length;

    // Torso along +z, capped at both ends.
    int torso_first = tb.tube(Vec3(0, 0, -half), Vec3(0, 0, 1), cfg.torso_length,
                              cfg.torso_radius, cfg.torso_rings, segs);
    int torso_bottom_cap = tb.push(Vec3(0, 0, -half));
    for (int s = 0; s < segs; ++s) {
        int s1 = (s + 1) % segs;
        tb.faces.push_back({torso_bottom_cap, torso_first + s1, torso_first + s});
    }
    int torso_surface_count = cfg.torso_rings * segs;

    int J = 1 + cfg.limbs;
    Mat joints(J, 3);  // row 0 stays at the origin: root = torso center

    std::vector<int> limb_vertices;
    std::vector<Vec3> bone_a(J), bone_b(J);
    bone_a[0] = Vec3(0, 0, -half);
    bone_b[0] = Vec3(0, 0, half);

    std::vector<Vec3> limb_axis(cfg.limbs);
    for (int l = 0; l < cfg.limbs; ++l) {
        double phi = 2.0 * M_PI * l / cfg.limbs;
        double zoff = half * 0.6 * std::sin(2.39996 * (l + 1));  // spread attachments
        Vec3 attach(cfg.torso_radius * std::cos(phi), cfg.torso_radius * std::sin(phi), zoff);
        double tilt = rng.uniform(-0.35, 0.35);
        Vec3 axis = Vec3(std::cos(phi), std::sin(phi), tilt).normalized();
        double len = cfg.limb_length * (1.0 + cfg.proportion_jitter * rng.uniform(-1.0, 1.0));
        double rad = cfg.limb_radius * (1.0 + cfg.proportion_jitter * rng.uniform(-1.0, 1.0));

        int first = tb.tube(attach, axis, len, rad, cfg.limb_rings, segs);
        for (int v = first; v < tb.count(); ++v) limb_vertices.push_back(v);

        // Stitch the open base ring to the closest torso surface vertex so
        // the character is a single connected component with cross-part edges.
        int anchor = 0;
        double best = 1e300;
        for (int v = 0; v < torso_surface_count; ++v) {
            Vec3 p(tb.verts[3 * v], tb.verts[3 * v + 1], tb.verts[3 * v + 2]);
            double d = (p - attach).squaredNorm();
            if (d < best) {
                best = d;
                anchor = v;
            }
        }
        for (int s = 0; s < segs; ++s) {
            int s1 = (s + 1) % segs;
            tb.faces.push_back({first + s, first + s1, anchor});
        }

        joints(l + 1, 0) = attach.x();
        joints(l + 1, 1) = attach.y();
        joints(l + 1, 2) = attach.z();
        bone_a[l + 1] = attach;
        bone_b[l + 1] = attach + axis * len;
        limb_axis[l] = axis;
    }

    SynthCharacter out;
    int V = tb.count();
    out.mesh.vertices = Mat(V, 3);
    std::copy(tb.verts.begin(), tb.verts.end(), out.mesh.vertices.data());
    out.mesh.faces = std::move(tb.faces);
    compute_normals(out.mesh);
    validate_mesh(out.mesh);

    out.rig.joints = joints;
    out.rig.parents.assign(J, 0);
    out.rig.parents[0] = -1;
    out.rig.limb_vertices = std::move(limb_vertices);
    out.rig.pose = Pose::rest(J);

    // Gaussian fall-off from each bone segment; sharp enough that tube
    // surfaces bind almost entirely to their own bone.
    double sigma = 0.4 * cfg.torso_radius;
    double inv = 1.0 / (2.0 * sigma * sigma);
    out.rig.skeletal_skinning = Mat(V, J);
    for (int v = 0; v < V; ++v) {
        Vec3 p(out.mesh.vertices(v, 0), out.mesh.vertices(v, 1), out.mesh.vertices(v, 2));
        double sum = 0.0;
        for (int j = 0; j < J; ++j) {
            double d = segment_dist(p, bone_a[j], bone_b[j]);
            double w = std::exp(-d * d * inv);
            out.rig.skeletal_skinning(v, j) = w;
            sum += w;
        }
        for (int j = 0; j < J; ++j) out.rig.skeletal_skinning(v, j) /= sum;
    }
    validate_rig(out.rig, V);

    // One wave clip per limb plus a whole-body sway. Frame 0 is the rest
    // pose, so extracted motions start from identity.
    for (int l = 0; l < cfg.limbs; ++l) {
        PoseSequence seq;
        seq.name = "wave_limb_" + std::to_string(l + 1);
        seq.text = "a character waves its " + ordinal(l) + " limb";
        seq.fps = cfg.fps;
        Vec3 swing = limb_axis[l].cross(Vec3(0, 0, 1));
        if (swing.norm() < 1e-6) swing = Vec3(1, 0, 0);
        swing.normalize();
        double amp = rng.uniform(0.4, 0.8);
        for (int n = 0; n < cfg.seq_frames; ++n) {
            Pose pose = Pose::rest(J);
            double th = amp * std::sin(2.0 * M_PI * n / cfg.seq_frames);
            for (int c = 0; c < 3; ++c) pose.joint_rot(l + 1, c) = th * swing(c);
            seq.poses.push_back(pose);
        }
        out.rig.sequences.push_back(std::move(seq));
    }
    {
        PoseSequence seq;
        seq.name = "sway";
        seq.text = "a character sways its whole body from side to side";
        seq.fps = cfg.fps;
        for (int n = 0; n < cfg.seq_frames; ++n) {
            Pose pose = Pose::rest(J);
            double th = 0.25 * std::sin(2.0 * M_PI * n / cfg.seq_frames);
            pose.joint_rot(0, 0) = th;
            pose.root_t = Vec3(0, 0.05 * std::sin(4.0 * M_PI * n / cfg.seq_frames), 0);
            seq.poses.push_back(pose);
        }
        out.rig.sequences.push_back(std::move(seq));
    }
    return out;
}

}  // namespace handleforge
