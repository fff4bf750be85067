#pragma once

#include <Eigen/Dense>

namespace handleforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// 6D rotation features: the first two columns of a rotation matrix,
// decoded by Gram-Schmidt. Continuous, so safe to regress and to noise.

// Decode r[6] -> R. Throws on degenerate (zero or collinear) input; the
// handle index, when >= 0, is included in the message.
Mat3 rot6d_to_matrix(const double r[6], int handle_index = -1);

// First two columns of R, flattened column-major into r[6].
// Rejects inputs that are not orthonormal within 1e-4.
void matrix_to_rot6d(const Mat3& R, double r[6]);

// Reverse-mode: given dL/dR write dL/dr. Recomputes the forward chain.
void rot6d_backward(const double r[6], const Mat3& dR, double dr[6]);

// Axis-angle (Rodrigues) exponential and its reverse-mode derivative.
Mat3 rodrigues(const Vec3& w);
Vec3 rodrigues_backward(const Vec3& w, const Mat3& dR);

// Log map SO(3) -> axis-angle, robust near 0 and pi.
Vec3 log_so3(const Mat3& R);

inline Mat3 skew(const Vec3& w) {
    Mat3 m;
    m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return m;
}

// <G, [w]x> as a function of w: returns the axial extraction of G.
inline Vec3 axial_pairing(const Mat3& G) {
    return Vec3(G(2, 1) - G(1, 2), G(0, 2) - G(2, 0), G(1, 0) - G(0, 1));
}

}  // namespace handleforge
