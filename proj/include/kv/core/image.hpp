#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace kv {

// Row-major 2D grid, y*width + x.
template <typename T>
struct Image {
    int w = 0;
    int h = 0;
    std::vector<T> px;

    Image() = default;
    Image(int width, int height, T fill = T(0)) : w(width), h(height), px(std::size_t(width) * height, fill) {}

    T& at(int x, int y) { return px[std::size_t(y) * w + x]; }
    const T& at(int x, int y) const { return px[std::size_t(y) * w + x]; }
    T* row(int y) { return px.data() + std::size_t(y) * w; }
    const T* row(int y) const { return px.data() + std::size_t(y) * w; }
    std::size_t size() const { return px.size(); }
    bool same_shape(const Image& o) const { return w == o.w && h == o.h; }
};

using ImageF = Image<float>;
using ImageU8 = Image<std::uint8_t>;

// x-fastest 3D grid: index = x + nx*(y + ny*z).
template <typename T>
struct Grid3 {
    int nx = 0, ny = 0, nz = 0;
    std::vector<T> v;

    Grid3() = default;
    Grid3(int x, int y, int z, T fill = T(0)) : nx(x), ny(y), nz(z), v(std::size_t(x) * y * z, fill) {}

    T& at(int x, int y, int z) { return v[std::size_t(z) * ny * nx + std::size_t(y) * nx + x]; }
    const T& at(int x, int y, int z) const { return v[std::size_t(z) * ny * nx + std::size_t(y) * nx + x]; }
    std::size_t size() const { return v.size(); }
};

using GridF = Grid3<float>;
using GridU8 = Grid3<std::uint8_t>;

}  // namespace kv
