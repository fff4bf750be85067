#include <doctest.h>

#include <cmath>

#include "handleforge/error.hpp"
#include "handleforge/rng.hpp"
#include "handleforge/rotation.hpp"

using namespace handleforge;

namespace {

Mat3 random_rotation(RandomStream& rng, double max_angle = 3.0) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    return rodrigues(axis * rng.uniform(0.05, max_angle));
}

void random_rot6d(RandomStream& rng, double r[6]) {
    for (int i = 0; i < 6; ++i) r[i] = rng.normal();
}

}  // namespace

TEST_SUITE("rotation") {

TEST_CASE("rot6d identity and quarter turn") {
    double rid[6] = {1, 0, 0, 0, 1, 0};
    CHECK((rot6d_to_matrix(rid) - Mat3::Identity()).norm() == doctest::Approx(0.0).epsilon(1e-15));

    // 90 degrees about z: columns (0,1,0) and (-1,0,0)
    double rz[6] = {0, 1, 0, -1, 0, 0};
    Mat3 R = rot6d_to_matrix(rz);
    Mat3 expect;
    expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    CHECK((R - expect).norm() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("rot6d decode is orthonormal for arbitrary input") {
    RandomStream rng(3);
    for (int t = 0; t < 50; ++t) {
        double r[6];
        random_rot6d(rng, r);
        Mat3 R = rot6d_to_matrix(r);
        CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-12);
        CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("rot6d encode/decode round trip") {
    RandomStream rng(4);
    for (int t = 0; t < 30; ++t) {
        Mat3 R = random_rotation(rng);
        double r[6];
        matrix_to_rot6d(R, r);
        CHECK((rot6d_to_matrix(r) - R).norm() < 1e-12);
    }
}

TEST_CASE("degenerate rot6d names the handle") {
    double bad[6] = {1, 0, 0, 2, 0, 0};  // parallel columns
    CHECK_THROWS_WITH_AS(rot6d_to_matrix(bad, 5), doctest::Contains("handle 5"), Error);
    double zero[6] = {0, 0, 0, 0, 1, 0};
    CHECK_THROWS_AS(rot6d_to_matrix(zero), Error);
}

TEST_CASE("matrix_to_rot6d rejects non-rotations") {
    Mat3 S = Mat3::Identity() * 2.0;
    double r[6];
    CHECK_THROWS_AS(matrix_to_rot6d(S, r), Error);
    Mat3 refl = Mat3::Identity();
    refl(2, 2) = -1.0;  // det -1
    CHECK_THROWS_AS(matrix_to_rot6d(refl, r), Error);
}

TEST_CASE("rot6d backward matches finite differences") {
    RandomStream rng(5);
    for (int t = 0; t < 20; ++t) {
        double r[6];
        random_rot6d(rng, r);
        Mat3 G;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) G(i, j) = rng.normal();

        double dr[6];
        rot6d_backward(r, G, dr);

        const double h = 1e-6;
        for (int i = 0; i < 6; ++i) {
            double rp[6], rm[6];
            std::copy(r, r + 6, rp);
            std::copy(r, r + 6, rm);
            rp[i] += h;
            rm[i] -= h;
            double fd = ((rot6d_to_matrix(rp).cwiseProduct(G)).sum() -
                         (rot6d_to_matrix(rm).cwiseProduct(G)).sum()) /
                        (2 * h);
            CHECK(dr[i] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        }
    }
}

TEST_CASE("rodrigues quarter turn and tiny-angle series") {
    Mat3 R = rodrigues(Vec3(0, 0, M_PI / 2));
    Mat3 expect;
    expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    CHECK((R - expect).norm() == doctest::Approx(0.0).epsilon(1e-14));

    CHECK((rodrigues(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);

    Vec3 tiny(1e-9, -2e-9, 3e-10);
    Mat3 Rt = rodrigues(tiny);
    Mat3 ref = Eigen::AngleAxisd(tiny.norm(), tiny.normalized()).toRotationMatrix();
    CHECK((Rt - ref).norm() < 1e-15);
    CHECK((Rt.transpose() * Rt - Mat3::Identity()).norm() < 1e-15);
}

TEST_CASE("rodrigues matches Eigen AngleAxis across magnitudes") {
    RandomStream rng(6);
    for (double mag : {1e-7, 1e-3, 0.5, 2.0, 3.1}) {
        Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        axis.normalize();
        Mat3 ours = rodrigues(axis * mag);
        Mat3 ref = Eigen::AngleAxisd(mag, axis).toRotationMatrix();
        CHECK((ours - ref).norm() < 1e-13);
    }
}

TEST_CASE("rodrigues backward matches finite differences") {
    RandomStream rng(7);
    for (double mag : {1e-5, 0.3, 1.5, 2.9}) {
        Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        axis.normalize();
        Vec3 w = axis * mag;
        Mat3 G;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) G(i, j) = rng.normal();

        Vec3 g = rodrigues_backward(w, G);
        const double h = 1e-6;
        for (int i = 0; i < 3; ++i) {
            Vec3 wp = w, wm = w;
            wp[i] += h;
            wm[i] -= h;
            double fd = ((rodrigues(wp) - rodrigues(wm)).cwiseProduct(G)).sum() / (2 * h);
            CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        }
    }
}

TEST_CASE("log_so3 round trips, including near pi") {
    RandomStream rng(8);
    for (double mag : {1e-8, 1e-4, 0.7, 2.0, 3.1, 3.14}) {
        Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        axis.normalize();
        Vec3 w = axis * mag;
        Vec3 back = log_so3(rodrigues(w));
        CHECK((back - w).norm() < 1e-7 * std::max(1.0, mag));
    }
    CHECK(log_so3(Mat3::Identity()).norm() == 0.0);
}

}  // TEST_SUITE
