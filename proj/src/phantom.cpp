#include "kv/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include "kv/core/png_io.hpp"
#include "kv/core/utils.hpp"

namespace fs = std::filesystem;

namespace kv {

std::string to_string(Laterality l) { return l == Laterality::left ? "left" : "right"; }
std::string to_string(ViewKind v) { return v == ViewKind::ap ? "ap" : "lateral"; }

Laterality laterality_from_string(const std::string& s) {
    if (s == "left") return Laterality::left;
    if (s == "right") return Laterality::right;
    throw std::invalid_argument("unknown laterality: " + s);
}

ViewKind view_from_string(const std::string& s) {
    if (s == "ap" || s == "a.-p." || s == "a.p.") return ViewKind::ap;
    if (s == "lateral") return ViewKind::lateral;
    throw std::invalid_argument("unknown view: " + s);
}

const char* label_name(std::uint8_t label) {
    switch (label) {
        case kLabelBackground: return "background";
        case kLabelCondyleLeft: return "condyle_left";
        case kLabelCondyleRight: return "condyle_right";
        case kLabelTibia: return "tibia";
        case kLabelFibula: return "fibula";
        case kLabelPatella: return "patella";
        default: return "unknown";
    }
}

// ---------------------------------------------------------------------------
// Analytic solids

namespace {

struct SampledParams {
    double shaft_r, condyle_r, condyle_sep, tibia_r, plateau_r, fibula_r, fibula_head_r;
    double pat_rx, pat_ry, pat_rz, gap, soft_r;
};

double draw(std::mt19937_64& rng, const ParamRange& r) {
    std::uniform_real_distribution<double> d(r.lo, r.hi);
    return r.lo == r.hi ? r.lo : d(rng);
}

struct ZCylinder {
    double cx, cy, r, z0, z1;
    // shear: the axis drifts by (kx, ky) per mm of height relative to z_ref,
    // cross sections stay circular
    double kx = 0, ky = 0, z_ref = 0;
    bool contains(const Vec3& p) const {
        if (p.z < z0 || p.z > z1) return false;
        const double dx = p.x - (cx + kx * (p.z - z_ref));
        const double dy = p.y - (cy + ky * (p.z - z_ref));
        return dx * dx + dy * dy <= r * r;
    }
};

struct XCylinder {
    double cy, cz, r, x0, x1;
    bool contains(const Vec3& p) const {
        if (p.x < x0 || p.x > x1) return false;
        const double dy = p.y - cy, dz = p.z - cz;
        return dy * dy + dz * dz <= r * r;
    }
};

struct Sphere {
    Vec3 c;
    double r;
    bool contains(const Vec3& p) const { return (p - c).dot(p - c) <= r * r; }
};

struct Ellipsoid {
    Vec3 c, semi;
    bool contains(const Vec3& p) const {
        const double dx = (p.x - c.x) / semi.x, dy = (p.y - c.y) / semi.y,
                     dz = (p.z - c.z) / semi.z;
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

}  // namespace

struct PhantomSolids::Impl {
    PhantomSpec spec;
    SampledParams pr;
    double ext;  // cubic world extent, mm
    double cx, cy, joint_z;

    ZCylinder femur_shaft;
    Sphere condyle_a, condyle_b;  // a: -x side, b: +x side
    ZCylinder tibia_body, tibia_plateau;
    ZCylinder fibula_shaft;
    Sphere fibula_head;
    Ellipsoid patella;
    ZCylinder soft;
    XCylinder screw;  // metal, attenuation only

    Mat3 flex_inv;  // inverse flexion rotation for the tibia/fibula group
    Vec3 flex_center;
    bool has_flexion = false;

    Vec3 tf_point(const Vec3& p) const {  // into the tibia/fibula group frame
        if (!has_flexion) return p;
        return flex_inv * (p - flex_center) + flex_center;
    }

    bool in_femur(const Vec3& p) const {
        return femur_shaft.contains(p) || condyle_a.contains(p) || condyle_b.contains(p);
    }
    bool in_tibia(const Vec3& p) const {
        const Vec3 q = tf_point(p);
        return tibia_body.contains(q) || tibia_plateau.contains(q);
    }
    bool in_fibula(const Vec3& p) const {
        const Vec3 q = tf_point(p);
        return fibula_shaft.contains(q) || fibula_head.contains(q);
    }
    bool in_patella(const Vec3& p) const { return patella.contains(p); }
    bool in_metal(const Vec3& p) const {
        return spec.include_metal && screw.contains(tf_point(p));
    }
};

PhantomSolids::PhantomSolids(const PhantomSpec& spec) {
    auto impl = std::make_shared<Impl>();
    impl->spec = spec;
    std::mt19937_64 rng(mix_seed(spec.seed, 0x9a));
    SampledParams& pr = impl->pr;
    pr.shaft_r = draw(rng, spec.shaft_radius);
    pr.condyle_r = draw(rng, spec.condyle_radius);
    pr.condyle_sep = draw(rng, spec.condyle_half_sep);
    pr.tibia_r = draw(rng, spec.tibia_radius);
    pr.plateau_r = draw(rng, spec.plateau_radius);
    pr.fibula_r = draw(rng, spec.fibula_radius);
    pr.fibula_head_r = draw(rng, spec.fibula_head_radius);
    pr.pat_rx = draw(rng, spec.patella_rx);
    pr.pat_ry = draw(rng, spec.patella_ry);
    pr.pat_rz = draw(rng, spec.patella_rz);
    pr.gap = draw(rng, spec.joint_gap);
    pr.soft_r = draw(rng, spec.soft_radius);

    const double ext = spec.grid * spec.spacing_mm;
    impl->ext = ext;
    const double cx = ext / 2.0, cy = ext / 2.0;
    impl->cx = cx;
    impl->cy = cy;
    const double joint_z = 0.42 * ext;
    impl->joint_z = joint_z;

    const double condyle_z = joint_z + pr.gap / 2.0 + pr.condyle_r;
    const double condyle_y = cy - 3.0;
    impl->condyle_a = {Vec3(cx - pr.condyle_sep, condyle_y, condyle_z), pr.condyle_r};
    impl->condyle_b = {Vec3(cx + pr.condyle_sep, condyle_y, condyle_z), pr.condyle_r};
    impl->femur_shaft = {cx, cy - 2.0, pr.shaft_r, condyle_z + 0.3 * pr.condyle_r, ext - 6.0};

    const double tibia_top = joint_z - pr.gap / 2.0;
    impl->tibia_plateau = {cx, cy - 1.0, pr.plateau_r, tibia_top - 8.0, tibia_top};
    impl->tibia_body = {cx, cy - 1.0, pr.tibia_r, 8.0, tibia_top - 8.0};

    // Fibula sits lateral (-x for a left knee) and posterior; close enough in
    // x that the tibia plateau superimposes the medial edge of its head in
    // the a.-p. projection, far enough in y that the solids never touch.
    const double fib_x = cx - 24.0;
    const double fib_y = cy - 14.0;
    const double head_z = tibia_top - 12.0;
    impl->fibula_head = {Vec3(fib_x, fib_y, head_z), pr.fibula_head_r};
    impl->fibula_shaft = {fib_x, fib_y, pr.fibula_r, 8.0, head_z, -0.06, -0.03, head_z};

    // Patella floats anterior of the femur with a small clearance derived
    // from the sampled radii, so valid specs never collide.
    const double femur_front = std::max(condyle_y + pr.condyle_r, cy - 2.0 + pr.shaft_r);
    impl->patella = {Vec3(cx, femur_front + pr.pat_ry + 2.0, joint_z + 12.0),
                     Vec3(pr.pat_rx, pr.pat_ry, pr.pat_rz)};

    impl->soft = {cx, cy, pr.soft_r, 2.0, ext - 2.0};

    impl->screw = {cy - 1.0, joint_z - 30.0, 2.5, cx - 24.0, cx + 24.0};

    if (spec.flexion_deg != 0.0) {
        impl->has_flexion = true;
        impl->flex_center = Vec3(cx, condyle_y, joint_z);
        impl->flex_inv = Mat3::axis_angle(Vec3(1, 0, 0), -spec.flexion_deg);
    }
    impl_ = std::move(impl);
}

std::uint8_t PhantomSolids::label_at(const Vec3& p) const {
    const auto& s = *impl_;
    if (s.in_femur(p)) {
        // provisional single femur id; the condyle split assigns 1/2
        return p.x < s.cx ? kLabelCondyleLeft : kLabelCondyleRight;
    }
    if (s.in_tibia(p)) return kLabelTibia;
    if (s.in_fibula(p)) return kLabelFibula;
    if (s.in_patella(p)) return kLabelPatella;
    return kLabelBackground;
}

double PhantomSolids::atten_at(const Vec3& p) const {
    const auto& s = *impl_;
    if (s.in_metal(p)) return s.spec.atten.metal;
    if (s.in_femur(p) || s.in_tibia(p) || s.in_fibula(p) || s.in_patella(p))
        return s.spec.atten.bone;
    if (s.soft.contains(p)) return s.spec.atten.soft;
    return 0.0;
}

bool PhantomSolids::metal_at(const Vec3& p) const { return impl_->in_metal(p); }

Vec3 PhantomSolids::joint_center() const {
    return {impl_->cx, impl_->cy, impl_->joint_z};
}

Vec3 PhantomSolids::shaft_axis_point() const {
    return {impl_->femur_shaft.cx, impl_->femur_shaft.cy, impl_->joint_z};
}

Vec3 PhantomSolids::shaft_axis_dir() const { return {0, 0, 1}; }

std::vector<std::string> PhantomSolids::colliding_structures(const Vec3& p) const {
    const auto& s = *impl_;
    std::vector<std::string> hit;
    if (s.in_femur(p)) hit.push_back("femur");
    if (s.in_tibia(p)) hit.push_back("tibia");
    if (s.in_fibula(p)) hit.push_back("fibula");
    if (s.in_patella(p)) hit.push_back("patella");
    return hit;
}

// ---------------------------------------------------------------------------
// Generation

GridU8 split_femur_condyles(const GridU8& labels, const Vec3& spacing, const Vec3& axis_point,
                            const Vec3& axis_dir) {
    if (axis_dir.norm() < 1e-12)
        throw std::invalid_argument("split_femur_condyles: degenerate shaft axis");
    const Vec3 d = axis_dir.normalized();
    // medial-lateral direction with the axis component removed; the split
    // plane contains the shaft axis.
    Vec3 ml = Vec3(1, 0, 0) - d * d.x;
    if (ml.norm() < 1e-9)
        throw std::invalid_argument("split_femur_condyles: axis parallel to medial-lateral");
    ml = ml.normalized();

    GridU8 out = labels;
    for (int k = 0; k < labels.nz; ++k)
        for (int j = 0; j < labels.ny; ++j)
            for (int i = 0; i < labels.nx; ++i) {
                const std::uint8_t l = labels.at(i, j, k);
                if (l != kLabelCondyleLeft && l != kLabelCondyleRight) continue;
                const Vec3 p((i + 0.5) * spacing.x, (j + 0.5) * spacing.y, (k + 0.5) * spacing.z);
                const double side = (p - axis_point).dot(ml);
                out.at(i, j, k) = side < 0.0 ? kLabelCondyleLeft : kLabelCondyleRight;
            }
    return out;
}

PhantomVolume generate_phantom(const PhantomSpec& spec) {
    if (spec.grid <= 0 || spec.spacing_mm <= 0)
        throw std::invalid_argument("generate_phantom: grid and spacing must be positive");
    const PhantomSolids solids(spec);

    const int n = spec.grid;
    const double s = spec.spacing_mm;
    PhantomVolume vol;
    vol.spacing = {s, s, s};
    vol.laterality = Laterality::left;
    vol.seed = spec.seed;
    vol.atten = GridF(n, n, n);
    vol.labels = GridU8(n, n, n);

    // Collision scan on voxel centres; report the first offending pair.
    std::set<std::pair<std::string, std::string>> collisions;
    for (int k = 0; k < n && collisions.empty(); ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                const Vec3 p((i + 0.5) * s, (j + 0.5) * s, (k + 0.5) * s);
                auto hit = solids.colliding_structures(p);
                if (hit.size() > 1) {
                    collisions.insert({hit[0], hit[1]});
                }
            }
    if (!collisions.empty()) {
        std::ostringstream os;
        os << "phantom structures overlap:";
        for (const auto& [a, b] : collisions) os << " " << a << "+" << b;
        throw PhantomGenerationError(os.str());
    }

    parallel_for(n, default_workers(), [&](std::int64_t k) {
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                const Vec3 p((i + 0.5) * s, (j + 0.5) * s, (k + 0.5) * s);
                vol.labels.at(i, j, int(k)) = solids.label_at(p);
                // 2x2x2 supersampled attenuation softens voxel edges, which
                // keeps the line integrals close to their analytic values.
                double acc = 0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const Vec3 q((i + 0.25 + 0.5 * dx) * s, (j + 0.25 + 0.5 * dy) * s,
                                         (k + 0.25 + 0.5 * dz) * s);
                            acc += solids.atten_at(q);
                        }
                vol.atten.at(i, j, int(k)) = float(acc / 8.0);
            }
    });

    vol.labels = split_femur_condyles(vol.labels, vol.spacing, solids.shaft_axis_point(),
                                      solids.shaft_axis_dir());

    // Reference standard planes. Both share the joint centre as origin and
    // the superior axis as image-row axis; the lateral plane is skewed so the
    // two standard views are not orthogonal.
    const Vec3 c = solids.joint_center();
    vol.plane_ap.origin = c;
    vol.plane_ap.u = {1, 0, 0};
    vol.plane_ap.v = {0, 0, 1};
    vol.plane_ap.n = {0, -1, 0};

    const Mat3 skew = Mat3::axis_angle({0, 0, 1}, spec.plane_skew_deg);
    vol.plane_lateral.origin = c;
    vol.plane_lateral.u = skew * Vec3(0, -1, 0);
    vol.plane_lateral.v = {0, 0, 1};
    vol.plane_lateral.n = skew * Vec3(-1, 0, 0);
    vol.plane_ap.validate();
    vol.plane_lateral.validate();

    if (spec.laterality == Laterality::right) return align_laterality(vol, Laterality::right);
    return vol;
}

PhantomVolume crop_field_of_view(const PhantomVolume& vol, double margin_mm) {
    if (margin_mm < 0) throw std::invalid_argument("crop_field_of_view: margin must be >= 0");
    const auto& lb = vol.labels;
    int lo[3] = {lb.nx, lb.ny, lb.nz};
    int hi[3] = {-1, -1, -1};
    for (int k = 0; k < lb.nz; ++k)
        for (int j = 0; j < lb.ny; ++j)
            for (int i = 0; i < lb.nx; ++i)
                if (lb.at(i, j, k) != kLabelBackground) {
                    lo[0] = std::min(lo[0], i);
                    lo[1] = std::min(lo[1], j);
                    lo[2] = std::min(lo[2], k);
                    hi[0] = std::max(hi[0], i);
                    hi[1] = std::max(hi[1], j);
                    hi[2] = std::max(hi[2], k);
                }
    if (hi[0] < 0) return vol;  // nothing labelled

    const double sp[3] = {vol.spacing.x, vol.spacing.y, vol.spacing.z};
    const int dims[3] = {lb.nx, lb.ny, lb.nz};
    int a[3], b[3];
    for (int d = 0; d < 3; ++d) {
        const int m = int(std::ceil(margin_mm / sp[d]));
        a[d] = std::max(0, lo[d] - m);
        b[d] = std::min(dims[d] - 1, hi[d] + m);
    }

    PhantomVolume out;
    out.spacing = vol.spacing;
    out.laterality = vol.laterality;
    out.seed = vol.seed;
    out.atten = GridF(b[0] - a[0] + 1, b[1] - a[1] + 1, b[2] - a[2] + 1);
    out.labels = GridU8(out.atten.nx, out.atten.ny, out.atten.nz);
    for (int k = 0; k < out.atten.nz; ++k)
        for (int j = 0; j < out.atten.ny; ++j)
            for (int i = 0; i < out.atten.nx; ++i) {
                out.atten.at(i, j, k) = vol.atten.at(i + a[0], j + a[1], k + a[2]);
                out.labels.at(i, j, k) = vol.labels.at(i + a[0], j + a[1], k + a[2]);
            }
    const Vec3 shift(a[0] * sp[0], a[1] * sp[1], a[2] * sp[2]);
    out.plane_ap = vol.plane_ap;
    out.plane_ap.origin = vol.plane_ap.origin - shift;
    out.plane_lateral = vol.plane_lateral;
    out.plane_lateral.origin = vol.plane_lateral.origin - shift;
    return out;
}

PhantomVolume align_laterality(const PhantomVolume& vol, Laterality target) {
    if (vol.laterality == target) return vol;
    PhantomVolume out;
    out.spacing = vol.spacing;
    out.laterality = target;
    out.seed = vol.seed;
    out.atten = GridF(vol.atten.nx, vol.atten.ny, vol.atten.nz);
    out.labels = GridU8(vol.labels.nx, vol.labels.ny, vol.labels.nz);
    const int nx = vol.atten.nx;
    for (int k = 0; k < vol.atten.nz; ++k)
        for (int j = 0; j < vol.atten.ny; ++j)
            for (int i = 0; i < nx; ++i) {
                out.atten.at(i, j, k) = vol.atten.at(nx - 1 - i, j, k);
                std::uint8_t l = vol.labels.at(nx - 1 - i, j, k);
                if (l == kLabelCondyleLeft) l = kLabelCondyleRight;
                else if (l == kLabelCondyleRight) l = kLabelCondyleLeft;
                out.labels.at(i, j, k) = l;
            }
    const double xext = nx * vol.spacing.x;
    out.plane_ap = mirror_plane(vol.plane_ap, xext);
    out.plane_lateral = mirror_plane(vol.plane_lateral, xext);
    return out;
}

// ---------------------------------------------------------------------------
// I/O

namespace {
void write_plane(std::ostream& os, const char* name, const Plane& p) {
    os << "plane " << name << " " << p.origin.x << " " << p.origin.y << " " << p.origin.z << " "
       << p.u.x << " " << p.u.y << " " << p.u.z << " " << p.v.x << " " << p.v.y << " " << p.v.z
       << " " << p.n.x << " " << p.n.y << " " << p.n.z << "\n";
}

Plane parse_plane(const std::vector<std::string>& tok) {
    if (tok.size() != 14) throw std::runtime_error("phantom manifest: bad plane line");
    Plane p;
    const auto f = [&](int i) { return std::stod(tok[i]); };
    p.origin = {f(2), f(3), f(4)};
    p.u = {f(5), f(6), f(7)};
    p.v = {f(8), f(9), f(10)};
    p.n = {f(11), f(12), f(13)};
    return p;
}
}  // namespace

void save_phantom(const PhantomVolume& vol, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream f(fs::path(dir) / "phantom.txt");
        if (!f) throw std::runtime_error("cannot write phantom manifest in " + dir);
        f.precision(17);
        f << "kneeview-phantom v1\n";
        f << "dims " << vol.atten.nx << " " << vol.atten.ny << " " << vol.atten.nz << "\n";
        f << "spacing " << vol.spacing.x << " " << vol.spacing.y << " " << vol.spacing.z << "\n";
        f << "laterality " << to_string(vol.laterality) << "\n";
        f << "seed " << vol.seed << "\n";
        write_plane(f, "ap", vol.plane_ap);
        write_plane(f, "lateral", vol.plane_lateral);
    }
    {
        std::ofstream f(fs::path(dir) / "atten.raw", std::ios::binary);
        f.write(reinterpret_cast<const char*>(vol.atten.v.data()),
                std::streamsize(vol.atten.v.size() * sizeof(float)));
        if (!f) throw std::runtime_error("cannot write attenuation grid in " + dir);
    }
    {
        std::ofstream f(fs::path(dir) / "labels.raw", std::ios::binary);
        f.write(reinterpret_cast<const char*>(vol.labels.v.data()),
                std::streamsize(vol.labels.v.size()));
        if (!f) throw std::runtime_error("cannot write label grid in " + dir);
    }
}

PhantomVolume load_phantom(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "phantom.txt");
    if (!f) throw std::runtime_error("cannot open phantom manifest in " + dir);
    PhantomVolume vol;
    std::string line;
    std::getline(f, line);
    if (line != "kneeview-phantom v1") throw std::runtime_error("bad phantom manifest: " + dir);
    int nx = 0, ny = 0, nz = 0;
    while (std::getline(f, line)) {
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        if (tok[0] == "dims") {
            nx = std::stoi(tok[1]);
            ny = std::stoi(tok[2]);
            nz = std::stoi(tok[3]);
        } else if (tok[0] == "spacing") {
            vol.spacing = {std::stod(tok[1]), std::stod(tok[2]), std::stod(tok[3])};
        } else if (tok[0] == "laterality") {
            vol.laterality = laterality_from_string(tok[1]);
        } else if (tok[0] == "seed") {
            vol.seed = std::stoull(tok[1]);
        } else if (tok[0] == "plane") {
            if (tok[1] == "ap") vol.plane_ap = parse_plane(tok);
            else vol.plane_lateral = parse_plane(tok);
        }
    }
    if (nx <= 0) throw std::runtime_error("phantom manifest missing dims: " + dir);
    vol.atten = GridF(nx, ny, nz);
    vol.labels = GridU8(nx, ny, nz);
    {
        std::ifstream g(fs::path(dir) / "atten.raw", std::ios::binary);
        g.read(reinterpret_cast<char*>(vol.atten.v.data()),
               std::streamsize(vol.atten.v.size() * sizeof(float)));
        if (!g) throw std::runtime_error("attenuation grid truncated in " + dir);
    }
    {
        std::ifstream g(fs::path(dir) / "labels.raw", std::ios::binary);
        g.read(reinterpret_cast<char*>(vol.labels.v.data()),
               std::streamsize(vol.labels.v.size()));
        if (!g) throw std::runtime_error("label grid truncated in " + dir);
    }
    return vol;
}

}  // namespace kv
