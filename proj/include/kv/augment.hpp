#pragma once

#include <random>
#include <string>
#include <vector>

#include "kv/core/config.hpp"
#include "kv/sample.hpp"

namespace kv {

// Each augmentation returns a transformed copy with the pose labels kept
// consistent: geometric ops update (gamma, t) and re-derive target_update;
// intensity-only ops never touch masks or labels.

// Rotates image (bilinear) and masks (nearest) about the image centre and
// adds `gamma_deg` to the in-plane label. The detector shift component of the
// pose turns with the roll.
Sample rotate_inplane(const Sample& s, double gamma_deg);

// Shifts content by whole pixels with zero fill; t moves by shift * pitch.
Sample translate_detector(const Sample& s, int shift_x, int shift_y, double pitch_x,
                          double pitch_y);

// Fills the rectangles with the image mean. Masks and pose labels unchanged.
// At most 3 rectangles, each at most 20% of the image area, all in bounds.
Sample dropout_region(const Sample& s, const std::vector<DropRect>& rects);

// Whole-image variant used by the reliability-flag checks.
Sample dropout_full_image(const Sample& s);

// Blends the half-plane (q - p).n > 0 toward half brightness:
// out = (1 - opacity) * in + opacity * in * 0.5.
Sample overlay_transparent_edge(const Sample& s, const EdgeLine& line, double opacity);

// Paints a frame of the given width with a constant value.
Sample overlay_border(const Sample& s, int width, float value);

// With probability p: horizontal mirror of image and masks, condyle channels
// swapped, laterality toggled, and the pose remapped through the sagittal
// mirror (alpha kept, beta and gamma negated, t_u negated).
Sample flip_laterality(const Sample& s, std::mt19937_64& rng, double p);
Sample flip_laterality_forced(const Sample& s);

struct AugmentConfig {
    double p_rotate = 1.0;
    double rot_max_deg = 45.0;
    double p_translate = 1.0;
    double shift_frac = 0.15;
    double p_flip = 0.5;
    double p_dropout = 0.5;
    int dropout_max_rects = 3;
    double p_edge = 0.3;
    double edge_opacity_lo = 0.2;
    double edge_opacity_hi = 0.7;
    double p_border = 0.3;
    int border_lo = 2;
    int border_hi = 12;

    static AugmentConfig from_config(const Config& cfg, const std::string& prefix);
    std::string describe() const;
};

// Draws op parameters for one sample; the seed alone reproduces the record.
AugmentRecord draw_augment(const AugmentConfig& cfg, int image_w, int image_h, std::uint64_t seed);

// Applies a record in the fixed order rotate -> translate -> flip ->
// dropout -> edge -> border, so geometric label updates precede intensity
// corruption. Bitwise reproducible for a fixed (input, record) pair.
Sample apply_augment(const Sample& s, const AugmentRecord& r, double pitch_x, double pitch_y);

}  // namespace kv
