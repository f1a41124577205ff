#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "kv/geometry.hpp"

using namespace kv;

namespace {

ProjectionGeometry test_geom() {
    ProjectionGeometry g;
    g.reference_plane.origin = {100, 120, 90};
    g.reference_plane.u = {1, 0, 0};
    g.reference_plane.v = {0, 0, 1};
    g.reference_plane.n = {0, -1, 0};
    return g;
}

Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> d(0, 1);
    Vec3 v;
    do {
        v = {d(rng), d(rng), d(rng)};
    } while (v.norm() < 1e-6);
    return v.normalized();
}

double matrix_angle_to_ref(const Mat3& m) {
    // angle between rotated e_z and e_z in the plane basis
    const Vec3 n = m * Vec3(0, 0, 1);
    return std::acos(std::clamp(n.dot(Vec3(0, 0, 1)), -1.0, 1.0)) * 180.0 / 3.14159265358979323846;
}

}  // namespace

TEST_CASE("pose_to_orientation identity keeps the reference axes") {
    const auto g = test_geom();
    const auto f = pose_to_orientation(CArmPose(), g);
    CHECK((f.u - g.reference_plane.u).norm() < 1e-15);
    CHECK((f.v - g.reference_plane.v).norm() < 1e-15);
    CHECK((f.n - g.reference_plane.n).norm() < 1e-15);
    CHECK((f.detector_origin - (g.reference_plane.origin + g.reference_plane.n * 300.0)).norm() <
          1e-9);
}

TEST_CASE("alpha=90 rotates the principal ray about the detector column axis") {
    const auto g = test_geom();
    const auto f = pose_to_orientation(CArmPose(90, 0, 0), g);
    const double theta = ray_angle(principal_ray(CArmPose(90, 0, 0), g),
                                   PrincipalRay{g.reference_plane.n});
    CHECK(theta == doctest::Approx(90.0).epsilon(1e-12));
    // the alpha rotation axis itself is untouched
    CHECK((f.u - g.reference_plane.u).norm() < 1e-12);
}

TEST_CASE("two-axis pose equals composing two single-axis orientation matrices") {
    // direct matrix-product oracle
    const Mat3 direct = pose_to_matrix(CArmPose(10, 20, 0));
    const Mat3 oracle = pose_to_matrix(CArmPose(0, 20, 0)) * pose_to_matrix(CArmPose(10, 0, 0));
    for (int i = 0; i < 9; ++i) CHECK(std::fabs(direct.m[i] - oracle.m[i]) < 1e-12);
}

TEST_CASE("principal ray angles") {
    const auto g = test_geom();
    const PrincipalRay ref{g.reference_plane.n};
    CHECK(ray_angle(principal_ray(CArmPose(), g), ref) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ray_angle(principal_ray(CArmPose(40, 0, 0), g), ref) ==
          doctest::Approx(40.0).epsilon(1e-12));

    // (30, 30): oracle via the rotated-normal dot product of pose_to_matrix
    const double expect = matrix_angle_to_ref(pose_to_matrix(CArmPose(30, 30, 0)));
    CHECK(ray_angle(principal_ray(CArmPose(30, 30, 0), g), ref) ==
          doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(41.40962210927086).epsilon(1e-9));
}

TEST_CASE("gamma never moves the principal ray") {
    const auto g = test_geom();
    for (const double a : {0.0, 17.0, -35.0})
        for (const double b : {0.0, -22.0, 40.0})
            for (const double gg : {0.0, 45.0, -120.0}) {
                const double theta = ray_angle(principal_ray(CArmPose(a, b, gg), g),
                                               principal_ray(CArmPose(a, b, 0), g));
                CHECK(theta < 1e-9);
            }
}

TEST_CASE("ray_angle metric axioms and error path") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1000; ++i) {
        const PrincipalRay a{random_unit(rng)}, b{random_unit(rng)};
        const double t1 = ray_angle(a, b);
        const double t2 = ray_angle(b, a);
        CHECK(t1 >= 0.0);
        CHECK(t1 <= 180.0);
        CHECK(t1 == doctest::Approx(t2).epsilon(1e-12));
    }
    const PrincipalRay v{Vec3(1, 0, 0)};
    CHECK(ray_angle(v, v) == doctest::Approx(0.0));
    CHECK(ray_angle(v, PrincipalRay{Vec3(0, 1, 0)}) == doctest::Approx(90.0));
    CHECK(ray_angle(v, PrincipalRay{Vec3(-1, 0, 0)}) == doctest::Approx(180.0));
    CHECK_THROWS_AS(ray_angle(v, PrincipalRay{Vec3(0.9, 0, 0)}), std::invalid_argument);
}

TEST_CASE("single-axis identity |theta| == |alpha| across the full range") {
    const auto g = test_geom();
    const PrincipalRay ref{g.reference_plane.n};
    for (double a = -180.0; a <= 180.0; a += 7.5) {
        const double theta = ray_angle(principal_ray(CArmPose(a, 0, 0), g), ref);
        CHECK(std::fabs(theta - std::fabs(wrap_angle_deg(a))) < 1e-9);
    }
}

TEST_CASE("encode/decode inplane") {
    auto sc = encode_inplane(0);
    CHECK(sc[0] == doctest::Approx(0.0));
    CHECK(sc[1] == doctest::Approx(1.0));
    sc = encode_inplane(90);
    CHECK(sc[0] == doctest::Approx(1.0));
    CHECK(sc[1] == doctest::Approx(0.0).epsilon(1e-12));
    sc = encode_inplane(-45);
    CHECK(sc[0] == doctest::Approx(-std::sqrt(2.0) / 2));
    CHECK(sc[1] == doctest::Approx(std::sqrt(2.0) / 2));

    CHECK(decode_inplane(0, 1) == doctest::Approx(0.0));
    CHECK(decode_inplane(1, 0) == doctest::Approx(90.0));
    CHECK_THROWS_AS(decode_inplane(0, 0), std::invalid_argument);

    // round-trip oracle on 1000 random angles
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> d(-179.9999, 180.0);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        const double gamma = d(rng);
        const auto e = encode_inplane(gamma);
        worst = std::max(worst, std::fabs(decode_inplane(e[0], e[1]) - gamma));
    }
    CHECK(worst < 1e-9);
    const auto e = encode_inplane(123.4);
    CHECK(e[0] * e[0] + e[1] * e[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("compose_correction basics") {
    const auto g = test_geom();
    const CArmPose p(25, 0, 0);
    SUBCASE("identity update is neutral") {
        const CArmPose r = compose_correction(p, CArmPose());
        CHECK(r.alpha == doctest::Approx(25.0).epsilon(1e-12));
        CHECK(std::fabs(r.beta) < 1e-12);
        CHECK(std::fabs(r.gamma) < 1e-12);
    }
    SUBCASE("single-axis inverse cancels") {
        const CArmPose r = compose_correction(p, CArmPose(-25, 0, 0));
        CHECK(std::fabs(r.alpha) < 1e-9);
        CHECK(std::fabs(r.beta) < 1e-9);
        CHECK(std::fabs(r.gamma) < 1e-9);
    }
    SUBCASE("matrix-inverse oracle cancels a general pose") {
        const CArmPose q(10, 20, 5, Vec3(3, -4, 1));
        const CArmPose qi = pose_inverse(q);
        const CArmPose r = compose_correction(q, qi);
        CHECK(std::fabs(r.alpha) < 1e-9);
        CHECK(std::fabs(r.beta) < 1e-9);
        CHECK(std::fabs(r.gamma) < 1e-9);
        CHECK(r.t.norm() < 1e-9);
        const double theta = ray_angle(principal_ray(r, g), PrincipalRay{g.reference_plane.n});
        CHECK(theta < 1e-6);
    }
}

TEST_CASE("pose_from_matrix round-trips poses with |alpha| < 90") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ad(-85, 85), bd(-179, 179);
    for (int i = 0; i < 500; ++i) {
        const CArmPose p(ad(rng), bd(rng), bd(rng));
        const CArmPose q = pose_from_matrix(pose_to_matrix(p));
        CHECK(angle_abs_diff_deg(p.alpha, q.alpha) < 1e-9);
        CHECK(angle_abs_diff_deg(p.beta, q.beta) < 1e-9);
        CHECK(angle_abs_diff_deg(p.gamma, q.gamma) < 1e-9);
    }
}

TEST_CASE("orientation matrices are orthonormal with determinant +1") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-180, 180);
    for (int i = 0; i < 1000; ++i) {
        const Mat3 m = pose_to_matrix(CArmPose(d(rng), d(rng), d(rng)));
        CHECK(std::fabs(m.det() - 1.0) < 1e-9);
        const Mat3 mtm = m.transposed() * m;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                CHECK(std::fabs(mtm.at(r, c) - (r == c ? 1.0 : 0.0)) < 1e-9);
    }
}

TEST_CASE("translation does not affect the principal ray") {
    const auto g = test_geom();
    const CArmPose a(12, -8, 30, Vec3(0, 0, 0));
    const CArmPose b(12, -8, 30, Vec3(40, -25, 10));
    CHECK(ray_angle(principal_ray(a, g), principal_ray(b, g)) < 1e-12);
}

TEST_CASE("mirror_pose is involutive and is a group isomorphism") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> d(-40, 40);
    for (int i = 0; i < 200; ++i) {
        const CArmPose a(d(rng), d(rng), d(rng), Vec3(d(rng), d(rng), 0));
        const CArmPose b(d(rng), d(rng), d(rng), Vec3(d(rng), d(rng), 0));
        const CArmPose m2 = mirror_pose(mirror_pose(a));
        CHECK(angle_abs_diff_deg(m2.alpha, a.alpha) < 1e-12);
        CHECK(angle_abs_diff_deg(m2.beta, a.beta) < 1e-12);
        CHECK(angle_abs_diff_deg(m2.gamma, a.gamma) < 1e-12);
        const CArmPose lhs = mirror_pose(compose_correction(a, b));
        const CArmPose rhs = compose_correction(mirror_pose(a), mirror_pose(b));
        CHECK(angle_abs_diff_deg(lhs.alpha, rhs.alpha) < 1e-9);
        CHECK(angle_abs_diff_deg(lhs.beta, rhs.beta) < 1e-9);
        CHECK(angle_abs_diff_deg(lhs.gamma, rhs.gamma) < 1e-9);
        CHECK((lhs.t - rhs.t).norm() < 1e-9);
    }
}

TEST_CASE("mirror_plane keeps a valid right-handed frame") {
    Plane p;
    p.origin = {30, 40, 50};
    p.u = {1, 0, 0};
    p.v = {0, 0, 1};
    p.n = {0, -1, 0};
    const Plane m = mirror_plane(p, 192.0);
    CHECK_NOTHROW(m.validate());
    CHECK(m.origin.x == doctest::Approx(162.0));
    const Plane mm = mirror_plane(m, 192.0);
    CHECK((mm.origin - p.origin).norm() < 1e-12);
    CHECK((mm.u - p.u).norm() < 1e-12);
    CHECK((mm.v - p.v).norm() < 1e-12);
    CHECK((mm.n - p.n).norm() < 1e-12);
}

TEST_CASE("geometry validation rejects bad setups") {
    ProjectionGeometry g = test_geom();
    g.source_to_isocenter = 1200;
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    g = test_geom();
    g.reference_plane.u = {1, 0.1, 0};
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}
