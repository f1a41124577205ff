#include "kv/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kv {

namespace {
constexpr double kPi = 3.14159265358979323846;
double deg2rad(double d) { return d * kPi / 180.0; }
double rad2deg(double r) { return r * 180.0 / kPi; }
}  // namespace

Vec3 Vec3::normalized() const {
    const double n = norm();
    if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
    return {x / n, y / n, z / n};
}

Mat3 Mat3::axis_angle(const Vec3& unit_axis, double angle_deg) {
    const Vec3 a = unit_axis;
    const double c = std::cos(deg2rad(angle_deg));
    const double s = std::sin(deg2rad(angle_deg));
    const double t = 1.0 - c;
    Mat3 r;
    r.m = {t * a.x * a.x + c,       t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y,
           t * a.x * a.y + s * a.z, t * a.y * a.y + c,       t * a.y * a.z - s * a.x,
           t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c};
    return r;
}

Mat3 Mat3::from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    Mat3 r;
    r.m = {c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z};
    return r;
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += at(i, k) * o.at(k, j);
            r.at(i, j) = s;
        }
    return r;
}

Vec3 Mat3::operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
    return r;
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

double wrap_angle_deg(double a) {
    a = std::fmod(a, 360.0);
    if (a <= -180.0) a += 360.0;
    if (a > 180.0) a -= 360.0;
    return a;
}

double angle_abs_diff_deg(double a, double b) {
    const double d = std::fabs(wrap_angle_deg(a - b));
    return d;
}

void CArmPose::normalize() {
    alpha = wrap_angle_deg(alpha);
    beta = wrap_angle_deg(beta);
    gamma = wrap_angle_deg(gamma);
}

bool CArmPose::is_identity(double tol) const {
    return std::fabs(alpha) <= tol && std::fabs(beta) <= tol && std::fabs(gamma) <= tol &&
           t.norm() <= tol;
}

void Plane::validate(double tol) const {
    const double eu = std::fabs(u.norm() - 1.0);
    const double ev = std::fabs(v.norm() - 1.0);
    const double en = std::fabs(n.norm() - 1.0);
    if (eu > tol || ev > tol || en > tol)
        throw std::invalid_argument("plane axes must be unit length");
    if (std::fabs(u.dot(v)) > tol || std::fabs(u.dot(n)) > tol || std::fabs(v.dot(n)) > tol)
        throw std::invalid_argument("plane axes must be orthogonal");
    if ((u.cross(v) - n).norm() > 1e-6)
        throw std::invalid_argument("plane axes must satisfy u x v = n");
}

void ProjectionGeometry::validate() const {
    if (!(source_to_isocenter > 0.0) || !(source_to_isocenter < source_to_detector))
        throw std::invalid_argument("require 0 < source_to_isocenter < source_to_detector");
    if (det_w <= 0 || det_h <= 0 || pitch_x <= 0 || pitch_y <= 0)
        throw std::invalid_argument("detector size and pixel pitch must be positive");
    reference_plane.validate();
}

Mat3 pose_to_matrix(const CArmPose& pose) {
    // Basis coordinates: u0 = e_x, v0 = e_y, n0 = e_z.
    const Mat3 ra = Mat3::axis_angle({1, 0, 0}, pose.alpha);
    const Mat3 rb = Mat3::axis_angle({0, 1, 0}, pose.beta);
    const Mat3 rg = Mat3::axis_angle({0, 0, 1}, pose.gamma);
    return rb * (ra * rg);
}

CArmPose pose_from_matrix(const Mat3& m, const Vec3& t) {
    // M = Ry(beta) Rx(alpha) Rz(gamma):
    //   M[1][2] = -sin(alpha)
    //   M[0][2] =  sin(beta) cos(alpha),  M[2][2] = cos(beta) cos(alpha)
    //   M[1][0] =  cos(alpha) sin(gamma), M[1][1] = cos(alpha) cos(gamma)
    const double sa = std::clamp(-m.at(1, 2), -1.0, 1.0);
    const double alpha = std::asin(sa);
    const double ca = std::cos(alpha);
    double beta, gamma;
    if (ca > 1e-9) {
        beta = std::atan2(m.at(0, 2), m.at(2, 2));
        gamma = std::atan2(m.at(1, 0), m.at(1, 1));
    } else {
        // gimbal (alpha = +/-90): only beta -/+ gamma is determined, since
        // row0 = [cos(beta -/+ gamma), +/-sin(beta -/+ gamma), 0]. Fold the
        // roll into beta and report gamma = 0.
        beta = std::atan2(sa * m.at(0, 1), m.at(0, 0));
        gamma = 0.0;
    }
    return CArmPose(rad2deg(alpha), rad2deg(beta), rad2deg(gamma), t);
}

PosedFrame pose_to_orientation(const CArmPose& pose, const ProjectionGeometry& geom) {
    geom.validate();
    const Plane& rp = geom.reference_plane;
    const Mat3 mb = pose_to_matrix(pose);

    // Map basis-coordinate rotation to world coordinates: Mw = A0 * Mb * A0^T
    const Mat3 a0 = Mat3::from_columns(rp.u, rp.v, rp.n);
    const Mat3 mw = a0 * mb * a0.transposed();

    PosedFrame f;
    f.rotation = mw;
    f.u = mw * rp.u;
    f.v = mw * rp.v;
    f.n = mw * rp.n;
    f.source = rp.origin - f.n * geom.source_to_isocenter;
    f.detector_origin = rp.origin + f.n * (geom.source_to_detector - geom.source_to_isocenter) -
                        f.u * pose.t.x - f.v * pose.t.y - f.n * pose.t.z;
    return f;
}

PrincipalRay principal_ray(const CArmPose& pose, const ProjectionGeometry& geom) {
    return {pose_to_orientation(pose, geom).n.normalized()};
}

double ray_angle(const PrincipalRay& a, const PrincipalRay& b) {
    if (std::fabs(a.direction.norm() - 1.0) > 1e-6 || std::fabs(b.direction.norm() - 1.0) > 1e-6)
        throw std::invalid_argument("ray_angle requires unit vectors");
    const double d = std::clamp(a.direction.dot(b.direction), -1.0, 1.0);
    return rad2deg(std::acos(d));
}

std::array<double, 2> encode_inplane(double gamma_deg) {
    return {std::sin(deg2rad(gamma_deg)), std::cos(deg2rad(gamma_deg))};
}

double decode_inplane(double s, double c) {
    if (s == 0.0 && c == 0.0)
        throw std::invalid_argument("decode_inplane: degenerate (0, 0) encoding");
    double g = rad2deg(std::atan2(s, c));
    if (g <= -180.0) g = 180.0;
    return g;
}

CArmPose compose_correction(const CArmPose& current, const CArmPose& update) {
    const Mat3 mc = pose_to_matrix(current);
    const Mat3 mu = pose_to_matrix(update);
    const Mat3 mr = mc * mu;
    // current.t lives in the current detector frame; bring it into the
    // resulting frame (relative rotation = mu) and add the update's own t.
    const Vec3 t = mu.transposed() * current.t + update.t;
    return pose_from_matrix(mr, t);
}

CArmPose pose_inverse(const CArmPose& p) {
    const Mat3 m = pose_to_matrix(p);
    const Vec3 t = -(m * p.t);
    return pose_from_matrix(m.transposed(), t);
}

CArmPose mirror_pose(const CArmPose& p) {
    return CArmPose(p.alpha, -p.beta, -p.gamma, Vec3(-p.t.x, p.t.y, p.t.z));
}

Plane mirror_plane(const Plane& p, double x_extent) {
    const auto sx = [x_extent](const Vec3& w) { return Vec3(x_extent - w.x, w.y, w.z); };
    const auto sv = [](const Vec3& w) { return Vec3(-w.x, w.y, w.z); };
    Plane r;
    r.origin = sx(p.origin);
    r.u = -sv(p.u);
    r.v = sv(p.v);
    r.n = sv(p.n);
    return r;
}

}  // namespace kv
