#include "kv/projector.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "kv/core/png_io.hpp"
#include "kv/core/utils.hpp"

namespace kv {

int MaskStack::channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return int(i);
    return -1;
}

std::vector<MaskChannelSpec> view_channels(ViewKind view) {
    if (view == ViewKind::ap) {
        return {{"femur", {kLabelCondyleLeft, kLabelCondyleRight}},
                {"tibia", {kLabelTibia}},
                {"fibula", {kLabelFibula}},
                {"patella", {kLabelPatella}}};
    }
    return {{"condyle_left", {kLabelCondyleLeft}},
            {"condyle_right", {kLabelCondyleRight}},
            {"tibia", {kLabelTibia}},
            {"fibula", {kLabelFibula}},
            {"patella", {kLabelPatella}}};
}

ProjectionGeometry default_geometry(const Plane& reference) {
    ProjectionGeometry g;
    g.reference_plane = reference;
    g.validate();
    return g;
}

ProjectionGeometry default_geometry(const PhantomVolume& vol, ViewKind view) {
    return default_geometry(vol.plane(view));
}

namespace {

struct RayMarchSetup {
    Vec3 source;
    Vec3 det_corner;   // world position of pixel (0, 0)
    Vec3 du, dv;       // per-pixel steps along the detector
    double ext[3];
    float inv_sp[3];
    float dt;
};

RayMarchSetup make_setup(const PhantomVolume& vol, const CArmPose& pose,
                         const ProjectionGeometry& geom, const RenderOptions& opts) {
    const PosedFrame f = pose_to_orientation(pose, geom);
    RayMarchSetup s;
    s.source = f.source;
    const double cx = (geom.det_w - 1) / 2.0, cy = (geom.det_h - 1) / 2.0;
    s.du = f.u * geom.pitch_x;
    s.dv = f.v * geom.pitch_y;
    s.det_corner = f.detector_origin - s.du * cx - s.dv * cy;
    const Vec3 e = vol.extent();
    s.ext[0] = e.x;
    s.ext[1] = e.y;
    s.ext[2] = e.z;
    s.inv_sp[0] = float(1.0 / vol.spacing.x);
    s.inv_sp[1] = float(1.0 / vol.spacing.y);
    s.inv_sp[2] = float(1.0 / vol.spacing.z);
    const double min_sp = std::min({vol.spacing.x, vol.spacing.y, vol.spacing.z});
    if (opts.step_scale <= 0) throw std::invalid_argument("render: step_scale must be > 0");
    s.dt = float(opts.step_scale * min_sp);
    return s;
}

// Slab intersection of the ray p(t) = o + d*t with the volume box.
inline bool box_clip(const Vec3& o, const Vec3& d, const double ext[3], double& t0, double& t1) {
    t0 = 0.0;
    t1 = std::numeric_limits<double>::max();
    const double ov[3] = {o.x, o.y, o.z};
    const double dv[3] = {d.x, d.y, d.z};
    for (int a = 0; a < 3; ++a) {
        if (std::fabs(dv[a]) < 1e-12) {
            if (ov[a] < 0.0 || ov[a] > ext[a]) return false;
            continue;
        }
        double ta = (0.0 - ov[a]) / dv[a];
        double tb = (ext[a] - ov[a]) / dv[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t0 < t1;
}

// Zero-padded trilinear sample over voxel centres.
inline float sample_trilinear(const GridF& g, float gx, float gy, float gz) {
    // continuous voxel coordinates: centre of voxel i is at i
    const float fx = gx - 0.5f, fy = gy - 0.5f, fz = gz - 0.5f;
    const int ix = int(std::floor(fx)), iy = int(std::floor(fy)), iz = int(std::floor(fz));
    const float dx = fx - ix, dy = fy - iy, dz = fz - iz;
    const int nx = g.nx, ny = g.ny, nz = g.nz;
    if (ix >= 0 && iy >= 0 && iz >= 0 && ix + 1 < nx && iy + 1 < ny && iz + 1 < nz) {
        const float* p = g.v.data() + std::size_t(iz) * ny * nx + std::size_t(iy) * nx + ix;
        const std::size_t sy = nx, sz = std::size_t(ny) * nx;
        const float c00 = p[0] + dx * (p[1] - p[0]);
        const float c10 = p[sy] + dx * (p[sy + 1] - p[sy]);
        const float c01 = p[sz] + dx * (p[sz + 1] - p[sz]);
        const float c11 = p[sz + sy] + dx * (p[sz + sy + 1] - p[sz + sy]);
        const float c0 = c00 + dy * (c10 - c00);
        const float c1 = c01 + dy * (c11 - c01);
        return c0 + dz * (c1 - c0);
    }
    // border: treat out-of-range neighbours as zero
    float acc = 0.0f;
    for (int c = 0; c < 8; ++c) {
        const int jx = ix + (c & 1), jy = iy + ((c >> 1) & 1), jz = iz + (c >> 2);
        if (jx < 0 || jy < 0 || jz < 0 || jx >= nx || jy >= ny || jz >= nz) continue;
        const float wx = (c & 1) ? dx : 1.0f - dx;
        const float wy = ((c >> 1) & 1) ? dy : 1.0f - dy;
        const float wz = (c >> 2) ? dz : 1.0f - dz;
        acc += wx * wy * wz * g.at(jx, jy, jz);
    }
    return acc;
}

struct ChannelTable {
    // voxel label -> channel bitmask (labels can feed merged channels)
    std::uint32_t bits[256] = {};
};

ChannelTable make_table(const std::vector<MaskChannelSpec>& channels) {
    if (channels.size() > 31) throw std::invalid_argument("render_masks: too many channels");
    ChannelTable t;
    for (std::size_t c = 0; c < channels.size(); ++c)
        for (const auto l : channels[c].labels) t.bits[l] |= (1u << c);
    return t;
}

// One shared march per pixel; integral and/or occupancy bits.
void march_all(const PhantomVolume& vol, const CArmPose& pose, const ProjectionGeometry& geom,
               const RenderOptions& opts, ImageF* integral_out,
               const std::vector<MaskChannelSpec>* channels, std::vector<std::uint32_t>* bits_out) {
    geom.validate();
    const RayMarchSetup st = make_setup(vol, pose, geom, opts);
    const int w = geom.det_w, h = geom.det_h;
    if (integral_out) *integral_out = ImageF(w, h, 0.0f);
    ChannelTable table;
    const bool want_masks = channels != nullptr;
    if (want_masks) {
        table = make_table(*channels);
        bits_out->assign(std::size_t(w) * h, 0u);
    }
    const GridU8& labels = vol.labels;
    const GridF& atten = vol.atten;
    const int threads = opts.threads > 0 ? opts.threads : default_workers();
    std::atomic<std::int64_t> hit_count{0};

    parallel_for(h, threads, [&](std::int64_t row) {
        std::int64_t row_hits = 0;
        for (int col = 0; col < w; ++col) {
            const Vec3 target = st.det_corner + st.du * double(col) + st.dv * double(row);
            const Vec3 dir_full = target - st.source;
            const double len = dir_full.norm();
            const Vec3 dir = dir_full * (1.0 / len);
            double t0, t1;
            if (!box_clip(st.source, dir, st.ext, t0, t1)) continue;
            ++row_hits;
            const int nsteps = int(std::ceil((t1 - t0) / st.dt));
            const float ox = float(st.source.x), oy = float(st.source.y), oz = float(st.source.z);
            const float dx = float(dir.x), dy = float(dir.y), dz = float(dir.z);
            float acc = 0.0f;
            std::uint32_t bits = 0;
            const float tbase = float(t0) + 0.5f * st.dt;
            for (int sidx = 0; sidx < nsteps; ++sidx) {
                const float t = tbase + st.dt * float(sidx);
                const float px = ox + dx * t, py = oy + dy * t, pz = oz + dz * t;
                const float gx = px * st.inv_sp[0], gy = py * st.inv_sp[1],
                            gz = pz * st.inv_sp[2];
                if (integral_out) acc += sample_trilinear(atten, gx, gy, gz);
                if (want_masks && gx >= 0.0f && gy >= 0.0f && gz >= 0.0f) {
                    const int ix = int(gx), iy = int(gy), iz = int(gz);
                    if (ix < labels.nx && iy < labels.ny && iz < labels.nz)
                        bits |= table.bits[labels.at(ix, iy, iz)];
                }
            }
            if (integral_out) integral_out->at(col, int(row)) = acc * st.dt;
            if (want_masks) (*bits_out)[std::size_t(row) * w + col] = bits;
        }
        hit_count.fetch_add(row_hits, std::memory_order_relaxed);
    });

    if (hit_count.load() == 0)
        throw EmptyProjectionError("volume lies completely outside the view frustum");
}

ImageF integral_to_transmission(const ImageF& integral) {
    ImageF out(integral.w, integral.h);
    for (std::size_t i = 0; i < integral.size(); ++i) out.px[i] = std::exp(-integral.px[i]);
    return out;
}

ImageF normalize_inverted(const ImageF& transmission) {
    float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
    for (const float v : transmission.px) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    ImageF out(transmission.w, transmission.h, 0.0f);
    const float range = hi - lo;
    if (range <= 0.0f) return out;  // flat input: normalization degenerates to all zeros
    for (std::size_t i = 0; i < out.size(); ++i) out.px[i] = (hi - transmission.px[i]) / range;
    return out;
}

MaskStack bits_to_stack(const std::vector<MaskChannelSpec>& channels,
                        const std::vector<std::uint32_t>& bits, int w, int h,
                        const CArmPose& pose) {
    MaskStack ms;
    ms.pose = pose;
    ms.channels.reserve(channels.size());
    for (std::size_t c = 0; c < channels.size(); ++c) {
        ms.names.push_back(channels[c].name);
        ImageU8 img(w, h);
        const std::uint32_t bit = 1u << c;
        for (std::size_t i = 0; i < bits.size(); ++i) img.px[i] = (bits[i] & bit) ? 1 : 0;
        ms.channels.push_back(std::move(img));
    }
    return ms;
}

}  // namespace

ImageF render_transmission(const PhantomVolume& vol, const CArmPose& pose,
                           const ProjectionGeometry& geom, const RenderOptions& opts) {
    ImageF integral;
    march_all(vol, pose, geom, opts, &integral, nullptr, nullptr);
    return integral_to_transmission(integral);
}

Projection render_drr(const PhantomVolume& vol, const CArmPose& pose,
                      const ProjectionGeometry& geom, const RenderOptions& opts) {
    Projection p;
    p.pose = pose;
    p.pixels = normalize_inverted(render_transmission(vol, pose, geom, opts));
    return p;
}

MaskStack render_masks(const PhantomVolume& vol, const CArmPose& pose,
                       const ProjectionGeometry& geom,
                       const std::vector<MaskChannelSpec>& channels, const RenderOptions& opts) {
    std::vector<std::uint32_t> bits;
    march_all(vol, pose, geom, opts, nullptr, &channels, &bits);
    return bits_to_stack(channels, bits, geom.det_w, geom.det_h, pose);
}

std::pair<Projection, MaskStack> render_sample(const PhantomVolume& vol, const CArmPose& pose,
                                               const ProjectionGeometry& geom,
                                               const std::vector<MaskChannelSpec>& channels,
                                               const RenderOptions& opts) {
    ImageF integral;
    std::vector<std::uint32_t> bits;
    march_all(vol, pose, geom, opts, &integral, &channels, &bits);
    Projection p;
    p.pose = pose;
    p.pixels = normalize_inverted(integral_to_transmission(integral));
    return {std::move(p), bits_to_stack(channels, bits, geom.det_w, geom.det_h, pose)};
}

void save_projection_png(const Projection& proj, const std::string& path) {
    write_png_gray(path, proj.pixels);
}

void save_mask_pngs(const MaskStack& masks, const std::string& dir_prefix) {
    for (std::size_t c = 0; c < masks.channels.size(); ++c) {
        ImageU8 img(masks.channels[c].w, masks.channels[c].h);
        for (std::size_t i = 0; i < img.size(); ++i)
            img.px[i] = masks.channels[c].px[i] ? 255 : 0;
        write_png_gray(dir_prefix + "mask_" + masks.names[c] + ".png", img);
    }
}

}  // namespace kv
