#pragma once

#include <array>
#include <cmath>
#include <string>

namespace kv {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3() = default;
    Vec3(double xx, double yy, double zz) : x(xx), y(yy), z(zz) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const;
};

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    static Mat3 axis_angle(const Vec3& unit_axis, double angle_deg);
    static Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2);

    double at(int r, int c) const { return m[r * 3 + c]; }
    double& at(int r, int c) { return m[r * 3 + c]; }
    Mat3 operator*(const Mat3& o) const;
    Vec3 operator*(const Vec3& v) const;
    Mat3 transposed() const;
    double det() const;
};

// C-arm pose offset relative to a reference standard plane: orbital rotation
// alpha, angular rotation beta, in-plane (detector roll) gamma, all in
// degrees, plus a detector-frame translation t in millimetres. Angles are
// kept normalized to (-180, 180].
struct CArmPose {
    double alpha = 0;  // about the detector column axis (u)
    double beta = 0;   // about the detector row axis (v)
    double gamma = 0;  // roll about the principal ray (n)
    Vec3 t;            // (t_u, t_v, t_n) mm in the posed detector frame

    CArmPose() = default;
    CArmPose(double a, double b, double g, const Vec3& tt = Vec3()) : alpha(a), beta(b), gamma(g), t(tt) {
        normalize();
    }
    void normalize();
    bool is_identity(double tol = 1e-12) const;
};

// Oriented 3D plane: origin plus right-handed orthonormal axes (u, v, n)
// with u x v = n. For a detector plane, u runs along image columns
// (increasing x), v along image rows (increasing y), n along the principal
// ray from source to detector.
struct Plane {
    Vec3 origin;
    Vec3 u{1, 0, 0};
    Vec3 v{0, 1, 0};
    Vec3 n{0, 0, 1};

    void validate(double tol = 1e-9) const;  // throws std::invalid_argument
};

struct PrincipalRay {
    Vec3 direction;  // unit within 1e-9
};

// Intrinsic + extrinsic description of the imaging chain.
struct ProjectionGeometry {
    double source_to_detector = 1000.0;  // mm
    double source_to_isocenter = 700.0;  // mm
    int det_w = 256, det_h = 256;        // pixels
    double pitch_x = 1.2, pitch_y = 1.2; // mm / pixel
    Plane reference_plane;               // origin = isocenter

    void validate() const;  // throws std::invalid_argument
};

// Pose convention: gamma is applied innermost (a roll about the ray of the
// (alpha, beta)-posed view), then alpha about the reference column axis,
// then beta about the reference row axis:
//     M = R(v0, beta) * R(u0, alpha) * R(n0, gamma)
// With this order gamma is an exact in-plane image rotation for every
// (alpha, beta), and the principal ray depends on (alpha, beta) only.
// Matrices below are expressed in the reference-plane basis (u0, v0, n0).
Mat3 pose_to_matrix(const CArmPose& pose);

// Inverse of pose_to_matrix's Euler factorization. alpha is recovered in
// [-90, 90]; at the |alpha| = 90 gimbal the roll is folded into beta.
CArmPose pose_from_matrix(const Mat3& m, const Vec3& t = Vec3());

// World-frame orientation of the posed detector: rotated plane axes plus the
// detector origin (centre of the detector panel, after translation t).
struct PosedFrame {
    Vec3 u, v, n;        // world-frame detector axes
    Vec3 source;         // X-ray source position
    Vec3 detector_origin;// detector centre
    Mat3 rotation;       // world rotation taking reference axes to posed axes
};
PosedFrame pose_to_orientation(const CArmPose& pose, const ProjectionGeometry& geom);

PrincipalRay principal_ray(const CArmPose& pose, const ProjectionGeometry& geom);

// theta = arccos(<a, b>) in degrees, clamped dot. Throws
// std::invalid_argument if either norm deviates from 1 by more than 1e-6.
double ray_angle(const PrincipalRay& a, const PrincipalRay& b);

// In-plane angle <-> (sin, cos). decode uses atan2 and returns (-180, 180];
// (0, 0) input throws std::invalid_argument.
std::array<double, 2> encode_inplane(double gamma_deg);
double decode_inplane(double s, double c);

// Applies `update` as a delta in the frame already posed by `current`:
// M(result) = M(current) * M(update). Translations are accumulated in the
// resulting detector frame.
CArmPose compose_correction(const CArmPose& current, const CArmPose& update);

// Exact inverse: compose_correction(p, pose_inverse(p)) is the identity.
CArmPose pose_inverse(const CArmPose& p);

// Pose as seen after mirroring the scene and the reference plane across the
// sagittal plane (laterality change): alpha is preserved, beta and gamma
// change sign, and the detector-frame translation mirrors its u component.
CArmPose mirror_pose(const CArmPose& p);

// Reflection of a plane across x = x_extent - x (vertical sagittal plane).
// The u axis flips sign so the frame stays right-handed; projections through
// a mirrored plane are exactly the horizontally flipped projections of the
// original scene.
Plane mirror_plane(const Plane& p, double x_extent);

double wrap_angle_deg(double a);          // to (-180, 180]
double angle_abs_diff_deg(double a, double b);  // wrapped, in [0, 180]

}  // namespace kv
