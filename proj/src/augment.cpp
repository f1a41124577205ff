#include "kv/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "kv/core/imageops.hpp"
#include "kv/core/utils.hpp"

namespace kv {

// ---------------------------------------------------------------------------
// imageops (rotation lives here with the augmentations that own it)

namespace {

constexpr double kPi = 3.14159265358979323846;

void rot_coeffs(double angle_deg, double& c, double& s) {
    c = std::cos(angle_deg * kPi / 180.0);
    s = std::sin(angle_deg * kPi / 180.0);
    // snap so that exact right angles become exact permutations
    const auto snap = [](double& v) {
        for (const double target : {-1.0, 0.0, 1.0})
            if (std::fabs(v - target) < 1e-12) v = target;
    };
    snap(c);
    snap(s);
}

}  // namespace

ImageF rotate_bilinear(const ImageF& img, double angle_deg) {
    double c, s;
    rot_coeffs(angle_deg, c, s);
    const double cx = (img.w - 1) / 2.0, cy = (img.h - 1) / 2.0;
    ImageF out(img.w, img.h, 0.0f);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            // inverse map: source = R(-angle) * (q - centre) + centre
            const double qx = x - cx, qy = y - cy;
            const double sx = c * qx + s * qy + cx;
            const double sy = -s * qx + c * qy + cy;
            const int ix = int(std::floor(sx)), iy = int(std::floor(sy));
            const double dx = sx - ix, dy = sy - iy;
            double acc = 0.0;
            for (int b = 0; b < 4; ++b) {
                const int jx = ix + (b & 1), jy = iy + (b >> 1);
                if (jx < 0 || jy < 0 || jx >= img.w || jy >= img.h) continue;
                const double w = ((b & 1) ? dx : 1.0 - dx) * ((b >> 1) ? dy : 1.0 - dy);
                acc += w * img.at(jx, jy);
            }
            out.at(x, y) = float(acc);
        }
    }
    return out;
}

ImageU8 rotate_nearest(const ImageU8& img, double angle_deg) {
    double c, s;
    rot_coeffs(angle_deg, c, s);
    const double cx = (img.w - 1) / 2.0, cy = (img.h - 1) / 2.0;
    ImageU8 out(img.w, img.h, 0);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double qx = x - cx, qy = y - cy;
            const int sx = int(std::lround(c * qx + s * qy + cx));
            const int sy = int(std::lround(-s * qx + c * qy + cy));
            if (sx < 0 || sy < 0 || sx >= img.w || sy >= img.h) continue;
            out.at(x, y) = img.at(sx, sy);
        }
    }
    return out;
}

ImageF downsample2_avg(const ImageF& img) {
    ImageF out(img.w / 2, img.h / 2);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out.at(x, y) = 0.25f * (img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) +
                                    img.at(2 * x, 2 * y + 1) + img.at(2 * x + 1, 2 * y + 1));
    return out;
}

ImageU8 downsample2_max(const ImageU8& img) {
    ImageU8 out(img.w / 2, img.h / 2);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out.at(x, y) = std::max({img.at(2 * x, 2 * y), img.at(2 * x + 1, 2 * y),
                                     img.at(2 * x, 2 * y + 1), img.at(2 * x + 1, 2 * y + 1)});
    return out;
}

double dice_coefficient(const ImageU8& a, const ImageU8& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("dice: shape mismatch");
    std::int64_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool va = a.px[i] != 0, vb = b.px[i] != 0;
        inter += (va && vb) ? 1 : 0;
        na += va;
        nb += vb;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(inter) / double(na + nb);
}

bool mask_centroid(const ImageU8& m, double& cx, double& cy) {
    double sx = 0, sy = 0;
    std::int64_t n = 0;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(x, y)) {
                sx += x;
                sy += y;
                ++n;
            }
    if (n == 0) return false;
    cx = sx / double(n);
    cy = sy / double(n);
    return true;
}

float image_mean(const ImageF& img) {
    double acc = 0;
    for (const float v : img.px) acc += v;
    return img.size() ? float(acc / double(img.size())) : 0.0f;
}

// ---------------------------------------------------------------------------
// augmentations

namespace {

void swap_condyle_channels(MaskStack& masks) {
    const int a = masks.channel_index("condyle_left");
    const int b = masks.channel_index("condyle_right");
    if (a >= 0 && b >= 0) std::swap(masks.channels[a], masks.channels[b]);
}

}  // namespace

Sample rotate_inplane(const Sample& s, double gamma_deg) {
    if (std::fabs(gamma_deg) > 180.0)
        throw std::invalid_argument("rotate_inplane: |gamma| must be <= 180");
    Sample out = s;
    // pose gamma corresponds to image content rotated by -gamma, so adding
    // gamma to the label means rotating the image by -gamma
    out.image = rotate_bilinear(s.image, -gamma_deg);
    for (auto& ch : out.masks.channels) ch = rotate_nearest(ch, -gamma_deg);
    out.pose_offset.gamma = wrap_angle_deg(s.pose_offset.gamma + gamma_deg);
    // an in-plane roll also turns where the detector shift points
    const double c = std::cos(gamma_deg * kPi / 180.0), sn = std::sin(gamma_deg * kPi / 180.0);
    const double tx = s.pose_offset.t.x, ty = s.pose_offset.t.y;
    out.pose_offset.t.x = c * tx + sn * ty;
    out.pose_offset.t.y = -sn * tx + c * ty;
    out.target_update = pose_inverse(out.pose_offset);
    return out;
}

Sample translate_detector(const Sample& s, int shift_x, int shift_y, double pitch_x,
                          double pitch_y) {
    if (std::abs(shift_x) > s.image.w / 4 || std::abs(shift_y) > s.image.h / 4)
        throw std::invalid_argument("translate_detector: |shift| must be <= 25% of image size");
    Sample out = s;
    out.image = translate_image(s.image, shift_x, shift_y);
    for (auto& ch : out.masks.channels) ch = translate_image(ch, shift_x, shift_y);
    out.pose_offset.t.x += shift_x * pitch_x;
    out.pose_offset.t.y += shift_y * pitch_y;
    out.target_update = pose_inverse(out.pose_offset);
    return out;
}

Sample dropout_region(const Sample& s, const std::vector<DropRect>& rects) {
    if (rects.size() > 3) throw std::invalid_argument("dropout_region: at most 3 rectangles");
    for (const auto& r : rects) {
        if (r.x < 0 || r.y < 0 || r.w <= 0 || r.h <= 0 || r.x + r.w > s.image.w ||
            r.y + r.h > s.image.h)
            throw std::invalid_argument("dropout_region: rectangle out of bounds");
        if (double(r.w) * r.h > 0.2 * double(s.image.w) * s.image.h + 1e-9)
            throw std::invalid_argument("dropout_region: rectangle exceeds 20% of image area");
    }
    Sample out = s;
    const float fill = image_mean(s.image);
    for (const auto& r : rects)
        for (int y = r.y; y < r.y + r.h; ++y)
            for (int x = r.x; x < r.x + r.w; ++x) out.image.at(x, y) = fill;
    return out;
}

Sample dropout_full_image(const Sample& s) {
    Sample out = s;
    const float fill = image_mean(s.image);
    std::fill(out.image.px.begin(), out.image.px.end(), fill);
    return out;
}

Sample overlay_transparent_edge(const Sample& s, const EdgeLine& line, double opacity) {
    if (opacity < 0.0 || opacity > 1.0)
        throw std::invalid_argument("overlay_transparent_edge: opacity must be in [0, 1]");
    Sample out = s;
    const float scale = float(1.0 - opacity * 0.5);
    for (int y = 0; y < s.image.h; ++y)
        for (int x = 0; x < s.image.w; ++x) {
            const double side = (x - line.px) * line.nx + (y - line.py) * line.ny;
            if (side > 0.0) out.image.at(x, y) = s.image.at(x, y) * scale;
        }
    return out;
}

Sample overlay_border(const Sample& s, int width, float value) {
    if (width < 0 || width >= std::min(s.image.w, s.image.h) / 2)
        throw std::invalid_argument("overlay_border: width must be < min(image size)/2");
    Sample out = s;
    for (int y = 0; y < s.image.h; ++y)
        for (int x = 0; x < s.image.w; ++x)
            if (x < width || y < width || x >= s.image.w - width || y >= s.image.h - width)
                out.image.at(x, y) = value;
    return out;
}

Sample flip_laterality_forced(const Sample& s) {
    Sample out = s;
    out.image = flip_horizontal(s.image);
    for (auto& ch : out.masks.channels) ch = flip_horizontal(ch);
    swap_condyle_channels(out.masks);
    out.laterality = s.laterality == Laterality::left ? Laterality::right : Laterality::left;
    out.pose_offset = mirror_pose(s.pose_offset);
    out.target_update = pose_inverse(out.pose_offset);
    return out;
}

Sample flip_laterality(const Sample& s, std::mt19937_64& rng, double p) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("flip_laterality: p must be in [0, 1]");
    std::uniform_real_distribution<double> d(0.0, 1.0);
    if (d(rng) >= p) return s;
    return flip_laterality_forced(s);
}

// ---------------------------------------------------------------------------
// config-driven sampling and replay

AugmentConfig AugmentConfig::from_config(const Config& cfg, const std::string& prefix) {
    AugmentConfig a;
    a.p_rotate = cfg.get_double(prefix + "p_rotate", a.p_rotate);
    a.rot_max_deg = cfg.get_double(prefix + "rot_max_deg", a.rot_max_deg);
    a.p_translate = cfg.get_double(prefix + "p_translate", a.p_translate);
    a.shift_frac = cfg.get_double(prefix + "shift_frac", a.shift_frac);
    a.p_flip = cfg.get_double(prefix + "p_flip", a.p_flip);
    a.p_dropout = cfg.get_double(prefix + "p_dropout", a.p_dropout);
    a.dropout_max_rects = cfg.get_int(prefix + "dropout_max_rects", a.dropout_max_rects);
    a.p_edge = cfg.get_double(prefix + "p_edge", a.p_edge);
    a.edge_opacity_lo = cfg.get_double(prefix + "edge_opacity_lo", a.edge_opacity_lo);
    a.edge_opacity_hi = cfg.get_double(prefix + "edge_opacity_hi", a.edge_opacity_hi);
    a.p_border = cfg.get_double(prefix + "p_border", a.p_border);
    a.border_lo = cfg.get_int(prefix + "border_lo", a.border_lo);
    a.border_hi = cfg.get_int(prefix + "border_hi", a.border_hi);
    return a;
}

std::string AugmentConfig::describe() const {
    std::ostringstream os;
    os << "p_rotate=" << p_rotate << " rot_max_deg=" << rot_max_deg << " p_translate="
       << p_translate << " shift_frac=" << shift_frac << " p_flip=" << p_flip
       << " p_dropout=" << p_dropout << " dropout_max_rects=" << dropout_max_rects
       << " p_edge=" << p_edge << " edge_opacity=" << edge_opacity_lo << ".." << edge_opacity_hi
       << " p_border=" << p_border << " border=" << border_lo << ".." << border_hi;
    return os.str();
}

AugmentRecord draw_augment(const AugmentConfig& cfg, int image_w, int image_h,
                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    AugmentRecord r;
    r.seed = seed;
    if (u01(rng) < cfg.p_rotate) {
        r.rotate = true;
        r.rot_deg = uniform_in(rng, -cfg.rot_max_deg, cfg.rot_max_deg);
    }
    if (u01(rng) < cfg.p_translate) {
        const int mx = int(cfg.shift_frac * image_w), my = int(cfg.shift_frac * image_h);
        r.translate = true;
        r.shift_x = int(std::llround(uniform_in(rng, -double(mx), double(mx))));
        r.shift_y = int(std::llround(uniform_in(rng, -double(my), double(my))));
    }
    r.flip = u01(rng) < cfg.p_flip;
    if (u01(rng) < cfg.p_dropout) {
        std::uniform_int_distribution<int> nd(1, std::max(1, cfg.dropout_max_rects));
        const int count = nd(rng);
        for (int i = 0; i < count; ++i) {
            DropRect d;
            d.w = std::max(2, int(uniform_in(rng, 0.05, 0.42) * image_w));
            d.h = std::max(2, int(0.2 * image_w * image_h / double(d.w)));
            d.h = std::min(d.h, std::max(2, int(uniform_in(rng, 0.05, 0.42) * image_h)));
            d.x = int(uniform_in(rng, 0.0, double(image_w - d.w)));
            d.y = int(uniform_in(rng, 0.0, double(image_h - d.h)));
            r.dropouts.push_back(d);
        }
    }
    if (u01(rng) < cfg.p_edge) {
        r.edge = true;
        const double ang = uniform_in(rng, 0.0, 360.0) * kPi / 180.0;
        r.edge_line.nx = std::cos(ang);
        r.edge_line.ny = std::sin(ang);
        // anchor the line off-centre so a strip of the image is affected
        r.edge_line.px = image_w / 2.0 + uniform_in(rng, 0.15, 0.4) * image_w *
                                             (u01(rng) < 0.5 ? -1.0 : 1.0);
        r.edge_line.py = image_h / 2.0 + uniform_in(rng, -0.3, 0.3) * image_h;
        r.edge_opacity = uniform_in(rng, cfg.edge_opacity_lo, cfg.edge_opacity_hi);
    }
    if (u01(rng) < cfg.p_border) {
        r.border = true;
        std::uniform_int_distribution<int> bw(cfg.border_lo, cfg.border_hi);
        r.border_width = bw(rng);
        r.border_value = float(uniform_in(rng, 0.0, 0.25));
    }
    return r;
}

Sample apply_augment(const Sample& s, const AugmentRecord& r, double pitch_x, double pitch_y) {
    Sample out = s;
    if (r.rotate) out = rotate_inplane(out, r.rot_deg);
    if (r.translate) out = translate_detector(out, r.shift_x, r.shift_y, pitch_x, pitch_y);
    if (r.flip) out = flip_laterality_forced(out);
    if (!r.dropouts.empty()) out = dropout_region(out, r.dropouts);
    if (r.edge) out = overlay_transparent_edge(out, r.edge_line, r.edge_opacity);
    if (r.border) out = overlay_border(out, r.border_width, r.border_value);
    out.augment = r;
    return out;
}

std::string AugmentRecord::serialize() const {
    std::ostringstream os;
    os.precision(17);
    os << "seed:" << seed;
    if (rotate) os << ";rot:" << rot_deg;
    if (translate) os << ";shift:" << shift_x << "," << shift_y;
    if (flip) os << ";flip:1";
    for (const auto& d : dropouts) os << ";drop:" << d.x << "," << d.y << "," << d.w << "," << d.h;
    if (edge)
        os << ";edge:" << edge_line.px << "," << edge_line.py << "," << edge_line.nx << ","
           << edge_line.ny << "," << edge_opacity;
    if (border) os << ";border:" << border_width << "," << border_value;
    return os.str();
}

AugmentRecord AugmentRecord::parse(const std::string& text) {
    AugmentRecord r;
    std::istringstream is(text);
    std::string part;
    while (std::getline(is, part, ';')) {
        const auto colon = part.find(':');
        if (colon == std::string::npos) throw std::runtime_error("bad augment record: " + text);
        const std::string key = part.substr(0, colon);
        const std::string val = part.substr(colon + 1);
        std::istringstream vs(val);
        char comma;
        if (key == "seed") r.seed = std::stoull(val);
        else if (key == "rot") {
            r.rotate = true;
            r.rot_deg = std::stod(val);
        } else if (key == "shift") {
            r.translate = true;
            vs >> r.shift_x >> comma >> r.shift_y;
        } else if (key == "flip") r.flip = true;
        else if (key == "drop") {
            DropRect d;
            vs >> d.x >> comma >> d.y >> comma >> d.w >> comma >> d.h;
            r.dropouts.push_back(d);
        } else if (key == "edge") {
            r.edge = true;
            vs >> r.edge_line.px >> comma >> r.edge_line.py >> comma >> r.edge_line.nx >> comma >>
                r.edge_line.ny >> comma >> r.edge_opacity;
        } else if (key == "border") {
            r.border = true;
            vs >> r.border_width >> comma >> r.border_value;
        } else throw std::runtime_error("bad augment record key: " + key);
    }
    return r;
}

}  // namespace kv
