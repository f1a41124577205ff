#pragma once

#include "kv/core/image.hpp"

namespace kv {

// Rotation about the image centre ((w-1)/2, (h-1)/2), positive angle turns
// content counter-clockwise in (x right, y down) pixel coordinates. Samples
// falling outside are zero. Exact multiples of 90 degrees become lossless
// pixel permutations (the rotation coefficients snap to {-1, 0, 1}).
ImageF rotate_bilinear(const ImageF& img, double angle_deg);
ImageU8 rotate_nearest(const ImageU8& img, double angle_deg);

template <typename T>
Image<T> flip_horizontal(const Image<T>& img) {
    Image<T> out(img.w, img.h);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) out.at(x, y) = img.at(img.w - 1 - x, y);
    return out;
}

// Content moves by (dx, dy) pixels; vacated pixels are zero.
template <typename T>
Image<T> translate_image(const Image<T>& img, int dx, int dy) {
    Image<T> out(img.w, img.h, T(0));
    for (int y = 0; y < img.h; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= img.h) continue;
        for (int x = 0; x < img.w; ++x) {
            const int sx = x - dx;
            if (sx < 0 || sx >= img.w) continue;
            out.at(x, y) = img.at(sx, sy);
        }
    }
    return out;
}

ImageF downsample2_avg(const ImageF& img);
ImageU8 downsample2_max(const ImageU8& img);

double dice_coefficient(const ImageU8& a, const ImageU8& b);

// Centroid of nonzero pixels; returns false when the mask is empty.
bool mask_centroid(const ImageU8& m, double& cx, double& cy);

float image_mean(const ImageF& img);

}  // namespace kv
