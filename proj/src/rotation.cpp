#include "handleforge/rotation.hpp"

#include <cmath>
#include <string>

#include "handleforge/error.hpp"

namespace handleforge {

namespace {

constexpr double kDegenerate = 1e-12;

std::string handle_tag(int handle_index) {
    return handle_index >= 0 ? " (handle " + std::to_string(handle_index) + ")" : "";
}

}  // namespace

Mat3 rot6d_to_matrix(const double r[6], int handle_index) {
    const Vec3 u(r[0], r[1], r[2]);
    const Vec3 v(r[3], r[4], r[5]);
    const double n1 = u.norm();
    if (n1 < kDegenerate)
        fail("rot6d_to_matrix: first triple is zero" + handle_tag(handle_index));
    const Vec3 b1 = u / n1;
    const Vec3 w = v - b1.dot(v) * b1;
    const double n2 = w.norm();
    if (n2 < kDegenerate)
        fail("rot6d_to_matrix: triples are collinear" + handle_tag(handle_index));
    const Vec3 b2 = w / n2;
    const Vec3 b3 = b1.cross(b2);
    Mat3 R;
    R.col(0) = b1;
    R.col(1) = b2;
    R.col(2) = b3;
    return R;
}

void matrix_to_rot6d(const Mat3& R, double r[6]) {
    const Mat3 gram = R.transpose() * R;
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-4 || R.determinant() < 0.0)
        fail("matrix_to_rot6d: input is not a rotation matrix");
    for (int i = 0; i < 3; ++i) {
        r[i] = R(i, 0);
        r[3 + i] = R(i, 1);
    }
}

void rot6d_backward(const double r[6], const Mat3& dR, double dr[6]) {
    const Vec3 u(r[0], r[1], r[2]);
    const Vec3 v(r[3], r[4], r[5]);
    const double n1 = u.norm();
    const Vec3 b1 = u / n1;
    const double d = b1.dot(v);
    const Vec3 w = v - d * b1;
    const double n2 = w.norm();
    const Vec3 b2 = w / n2;

    const Vec3 g1 = dR.col(0);
    const Vec3 g2 = dR.col(1);
    const Vec3 g3 = dR.col(2);

    // b3 = b1 x b2
    Vec3 gb1 = g1 + b2.cross(g3);
    Vec3 gb2 = g2 + g3.cross(b1);

    // b2 = w / |w|
    const Vec3 gw = (gb2 - b2.dot(gb2) * b2) / n2;

    // w = v - (b1 . v) b1
    Vec3 gv = gw - b1.dot(gw) * b1;
    gb1 += -(gw.dot(b1)) * v - d * gw;

    // b1 = u / |u|
    const Vec3 gu = (gb1 - b1.dot(gb1) * b1) / n1;

    for (int i = 0; i < 3; ++i) {
        dr[i] = gu[i];
        dr[3 + i] = gv[i];
    }
}

Mat3 rodrigues(const Vec3& w) {
    const double theta2 = w.squaredNorm();
    const double theta = std::sqrt(theta2);
    double a, b;
    if (theta < 1e-4) {
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    const Mat3 K = skew(w);
    return Mat3::Identity() + a * K + b * (K * K);
}

Vec3 rodrigues_backward(const Vec3& w, const Mat3& dR) {
    const double theta2 = w.squaredNorm();
    const double theta = std::sqrt(theta2);
    const Mat3 K = skew(w);
    const Mat3 K2 = K * K;

    double a, b, ca, cb;  // ca = a'(theta)/theta, cb = b'(theta)/theta
    if (theta < 1e-4) {
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
        ca = -1.0 / 3.0 + theta2 / 30.0;
        cb = -1.0 / 12.0 + theta2 / 180.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
        ca = (theta * std::cos(theta) - std::sin(theta)) / (theta2 * theta);
        cb = (theta * std::sin(theta) - 2.0 * (1.0 - std::cos(theta))) / (theta2 * theta2);
    }

    const double gK = dR.cwiseProduct(K).sum();
    const double gK2 = dR.cwiseProduct(K2).sum();
    // d(theta-dependent coefficients): dtheta = (w/theta) . dw, folded into
    // ca/cb which stay finite at 0
    Vec3 g = (ca * gK + cb * gK2) * w;
    // a * <dR, d[w]x>
    g += a * axial_pairing(dR);
    // b * <dR, d[w]x K + K d[w]x>
    g += b * axial_pairing(dR * K.transpose() + K.transpose() * dR);
    return g;
}

Vec3 log_so3(const Mat3& R) {
    const double tr = R.trace();
    const double c = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
    const double theta = std::acos(c);
    if (theta < 1e-8) {
        // first-order: R ~ I + [w]x
        return 0.5 * axial_pairing(R);
    }
    if (theta > M_PI - 1e-5) {
        // near pi the skew part vanishes; recover the axis from the
        // symmetric part R = I + 2 b nn^T - ... via largest diagonal
        Mat3 S = 0.5 * (R + Mat3::Identity());
        int k = 0;
        for (int i = 1; i < 3; ++i)
            if (S(i, i) > S(k, k)) k = i;
        Vec3 n = S.col(k) / std::sqrt(std::max(S(k, k), 1e-12));
        n.normalize();
        // fix sign with the skew part when it is not exactly zero
        const Vec3 ax = axial_pairing(R);
        if (ax.dot(n) < 0.0) n = -n;
        return theta * n;
    }
    const Vec3 ax = 0.5 * axial_pairing(R) / std::sin(theta);
    return theta * ax;
}

}  // namespace handleforge
