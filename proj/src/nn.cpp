#include "kv/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "kv/core/utils.hpp"

namespace kv::nn {

std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(std::vector<int> s) : shape(std::move(s)), v(numel_of(shape), T(0)) {}

template <typename T>
std::int64_t Tensor<T>::numel() const {
    return static_cast<std::int64_t>(v.size());
}

template <typename T>
void Tensor<T>::ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), T(0));
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (!g.empty()) std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
void Layer<T>::require_forward(const char* who) const {
    if (!forward_done_)
        throw std::logic_error(std::string(who) + ": backward called before forward");
}

namespace {

template <typename T>
void shape_error(const std::string& layer, const std::vector<int>& got,
                 const std::string& expected) {
    throw std::invalid_argument(layer + ": input shape " + shape_str(got) + ", expected " +
                                expected);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int ksize)
    : in_ch(in_channels), out_ch(out_channels), k(ksize) {
    if (ksize != 3 && ksize != 1) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
    weight = Tensor<T>({out_ch, in_ch, k, k});
    bias = Tensor<T>({out_ch});
    weight.ensure_grad();
    bias.ensure_grad();
}

template <typename T>
void Conv2d<T>::init_kaiming(std::mt19937_64& rng) {
    const double fan_in = double(in_ch) * k * k;
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto& w : weight.v) w = T(d(rng));
    std::fill(bias.v.begin(), bias.v.end(), T(0));
}

template <typename T>
std::string Conv2d<T>::describe() const {
    std::ostringstream os;
    os << "conv" << k << "x" << k << " " << in_ch << "->" << out_ch;
    return os.str();
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
    if (x.shape.size() != 4 || x.shape[1] != in_ch)
        shape_error<T>(describe(), x.shape, "[N," + std::to_string(in_ch) + ",H,W]");
    const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
    const int pad = k / 2;
    Tensor<T> y({n, out_ch, h, w});
    const std::int64_t plane = std::int64_t(h) * w;

    parallel_for(std::int64_t(n) * out_ch, default_workers(), [&](std::int64_t idx) {
        const int ni = int(idx / out_ch);
        const int co = int(idx % out_ch);
        T* dst0 = y.v.data() + (std::int64_t(ni) * out_ch + co) * plane;
        const T bval = bias.v[co];
        for (std::int64_t i = 0; i < plane; ++i) dst0[i] = bval;
        for (int ci = 0; ci < in_ch; ++ci) {
            const T* src0 = x.v.data() + (std::int64_t(ni) * in_ch + ci) * plane;
            const T* wk = weight.v.data() + ((std::int64_t(co) * in_ch + ci) * k) * k;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const T wv = wk[ky * k + kx];
                    const int dy_off = ky - pad, dx_off = kx - pad;
                    const int y0 = std::max(0, -dy_off), y1 = h - std::max(0, dy_off);
                    const int x0 = std::max(0, -dx_off), x1 = w - std::max(0, dx_off);
                    for (int yy = y0; yy < y1; ++yy) {
                        const T* src = src0 + std::int64_t(yy + dy_off) * w + dx_off;
                        T* dst = dst0 + std::int64_t(yy) * w;
                        for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
                    }
                }
            }
        }
    });
    x_ = x;
    this->forward_done_ = true;
    return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
    this->require_forward("Conv2d");
    const int n = x_.shape[0], h = x_.shape[2], w = x_.shape[3];
    if (dy.shape != std::vector<int>{n, out_ch, h, w})
        shape_error<T>(describe() + " backward", dy.shape, "[N,out,H,W] of forward");
    const int pad = k / 2;
    const std::int64_t plane = std::int64_t(h) * w;
    Tensor<T> dx({n, in_ch, h, w});

    // d input: correlate dy with the spatially flipped kernel.
    parallel_for(std::int64_t(n) * in_ch, default_workers(), [&](std::int64_t idx) {
        const int ni = int(idx / in_ch);
        const int ci = int(idx % in_ch);
        T* dst0 = dx.v.data() + (std::int64_t(ni) * in_ch + ci) * plane;
        for (int co = 0; co < out_ch; ++co) {
            const T* src0 = dy.v.data() + (std::int64_t(ni) * out_ch + co) * plane;
            const T* wk = weight.v.data() + ((std::int64_t(co) * in_ch + ci) * k) * k;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const T wv = wk[ky * k + kx];
                    // input position (yy, xx) receives dy at (yy - (ky-pad), xx - (kx-pad))
                    const int dy_off = -(ky - pad), dx_off = -(kx - pad);
                    const int y0 = std::max(0, -dy_off), y1 = h - std::max(0, dy_off);
                    const int x0 = std::max(0, -dx_off), x1 = w - std::max(0, dx_off);
                    for (int yy = y0; yy < y1; ++yy) {
                        const T* src = src0 + std::int64_t(yy + dy_off) * w + dx_off;
                        T* dst = dst0 + std::int64_t(yy) * w;
                        for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
                    }
                }
            }
        }
    });

    // d weight / d bias: per-sample partials, then an ordered reduction so the
    // result is independent of the worker count.
    const std::int64_t wn = weight.numel();
    std::vector<T> dw_part(std::size_t(n) * wn, T(0));
    std::vector<T> db_part(std::size_t(n) * out_ch, T(0));
    parallel_for(n, default_workers(), [&](std::int64_t ni) {
        T* dwp = dw_part.data() + ni * wn;
        T* dbp = db_part.data() + ni * out_ch;
        for (int co = 0; co < out_ch; ++co) {
            const T* gy0 = dy.v.data() + (std::int64_t(ni) * out_ch + co) * plane;
            T acc_b = T(0);
            for (std::int64_t i = 0; i < plane; ++i) acc_b += gy0[i];
            dbp[co] += acc_b;
            for (int ci = 0; ci < in_ch; ++ci) {
                const T* src0 = x_.v.data() + (std::int64_t(ni) * in_ch + ci) * plane;
                T* dwk = dwp + ((std::int64_t(co) * in_ch + ci) * k) * k;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const int dy_off = ky - pad, dx_off = kx - pad;
                        const int y0 = std::max(0, -dy_off), y1 = h - std::max(0, dy_off);
                        const int x0 = std::max(0, -dx_off), x1 = w - std::max(0, dx_off);
                        T acc = T(0);
                        for (int yy = y0; yy < y1; ++yy) {
                            const T* src = src0 + std::int64_t(yy + dy_off) * w + dx_off;
                            const T* gy = gy0 + std::int64_t(yy) * w;
                            for (int xx = x0; xx < x1; ++xx) acc += gy[xx] * src[xx];
                        }
                        dwk[ky * k + kx] += acc;
                    }
                }
            }
        }
    });
    weight.ensure_grad();
    bias.ensure_grad();
    for (int ni = 0; ni < n; ++ni) {
        const T* dwp = dw_part.data() + std::int64_t(ni) * wn;
        for (std::int64_t i = 0; i < wn; ++i) weight.g[i] += dwp[i];
        const T* dbp = db_part.data() + std::int64_t(ni) * out_ch;
        for (int co = 0; co < out_ch; ++co) bias.g[co] += dbp[co];
    }
    this->forward_done_ = false;
    return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
    if (x.shape.size() != 4) shape_error<T>("maxpool2", x.shape, "[N,C,H,W]");
    const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) shape_error<T>("maxpool2", x.shape, "H,W >= 2");
    in_shape_ = x.shape;
    Tensor<T> y({n, c, oh, ow});
    argmax_.assign(y.v.size(), 0);
    const std::int64_t planes = std::int64_t(n) * c;
    parallel_for(planes, default_workers(), [&](std::int64_t p) {
        const T* src = x.v.data() + p * h * w;
        T* dst = y.v.data() + p * oh * ow;
        std::int64_t* am = argmax_.data() + p * oh * ow;
        for (int yy = 0; yy < oh; ++yy) {
            for (int xx = 0; xx < ow; ++xx) {
                const std::int64_t base = std::int64_t(2 * yy) * w + 2 * xx;
                std::int64_t best = base;
                T bv = src[base];
                const std::int64_t cand[3] = {base + 1, base + w, base + w + 1};
                for (const auto ci : cand) {
                    if (src[ci] > bv) {
                        bv = src[ci];
                        best = ci;
                    }
                }
                dst[std::int64_t(yy) * ow + xx] = bv;
                am[std::int64_t(yy) * ow + xx] = p * h * w + best;
            }
        }
    });
    this->forward_done_ = true;
    return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& dy) {
    this->require_forward("MaxPool2d");
    Tensor<T> dx(in_shape_);
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[argmax_[i]] += dy.v[i];
    this->forward_done_ = false;
    return dx;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x) {
    if (x.shape.size() != 4) shape_error<T>("gap", x.shape, "[N,C,H,W]");
    in_shape_ = x.shape;
    const int n = x.shape[0], c = x.shape[1];
    const std::int64_t plane = std::int64_t(x.shape[2]) * x.shape[3];
    Tensor<T> y({n, c});
    for (std::int64_t p = 0; p < std::int64_t(n) * c; ++p) {
        const T* src = x.v.data() + p * plane;
        T acc = T(0);
        for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
        y.v[p] = acc / T(plane);
    }
    this->forward_done_ = true;
    return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy) {
    this->require_forward("GlobalAvgPool");
    Tensor<T> dx(in_shape_);
    const std::int64_t plane = std::int64_t(in_shape_[2]) * in_shape_[3];
    for (std::size_t p = 0; p < dy.v.size(); ++p) {
        const T gv = dy.v[p] / T(plane);
        T* dst = dx.v.data() + p * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = gv;
    }
    this->forward_done_ = false;
    return dx;
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(int in_features, int out_features) : in_f(in_features), out_f(out_features) {
    weight = Tensor<T>({out_f, in_f});
    bias = Tensor<T>({out_f});
    weight.ensure_grad();
    bias.ensure_grad();
}

template <typename T>
void Dense<T>::init_kaiming(std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / double(in_f));
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto& w : weight.v) w = T(d(rng));
    std::fill(bias.v.begin(), bias.v.end(), T(0));
}

template <typename T>
std::string Dense<T>::describe() const {
    return "dense " + std::to_string(in_f) + "->" + std::to_string(out_f);
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x) {
    if (x.shape.size() != 2 || x.shape[1] != in_f)
        shape_error<T>(describe(), x.shape, "[N," + std::to_string(in_f) + "]");
    const int n = x.shape[0];
    Tensor<T> y({n, out_f});
    for (int ni = 0; ni < n; ++ni) {
        const T* xi = x.v.data() + std::int64_t(ni) * in_f;
        T* yi = y.v.data() + std::int64_t(ni) * out_f;
        for (int o = 0; o < out_f; ++o) {
            const T* wr = weight.v.data() + std::int64_t(o) * in_f;
            T acc = bias.v[o];
            for (int i = 0; i < in_f; ++i) acc += wr[i] * xi[i];
            yi[o] = acc;
        }
    }
    x_ = x;
    this->forward_done_ = true;
    return y;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& dy) {
    this->require_forward("Dense");
    const int n = x_.shape[0];
    if (dy.shape != std::vector<int>{n, out_f})
        shape_error<T>(describe() + " backward", dy.shape, "[N,out] of forward");
    Tensor<T> dx({n, in_f});
    weight.ensure_grad();
    bias.ensure_grad();
    for (int ni = 0; ni < n; ++ni) {
        const T* xi = x_.v.data() + std::int64_t(ni) * in_f;
        const T* gy = dy.v.data() + std::int64_t(ni) * out_f;
        T* gx = dx.v.data() + std::int64_t(ni) * in_f;
        for (int o = 0; o < out_f; ++o) {
            const T g = gy[o];
            const T* wr = weight.v.data() + std::int64_t(o) * in_f;
            T* gw = weight.g.data() + std::int64_t(o) * in_f;
            for (int i = 0; i < in_f; ++i) {
                gx[i] += g * wr[i];
                gw[i] += g * xi[i];
            }
            bias.g[o] += g;
        }
    }
    this->forward_done_ = false;
    return dx;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > T(0) ? x.v[i] : T(0);
    x_ = x;
    this->forward_done_ = true;
    return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& dy) {
    this->require_forward("ReLU");
    Tensor<T> dx(x_.shape);
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = x_.v[i] > T(0) ? dy.v[i] : T(0);
    this->forward_done_ = false;
    return dx;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = T(1) / (T(1) + std::exp(-x.v[i]));
    y_ = y;
    this->forward_done_ = true;
    return y;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& dy) {
    this->require_forward("Sigmoid");
    Tensor<T> dx(y_.shape);
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = dy.v[i] * y_.v[i] * (T(1) - y_.v[i]);
    this->forward_done_ = false;
    return dx;
}

// ---------------------------------------------------------------------------
// UpsampleNearest2

template <typename T>
Tensor<T> UpsampleNearest2<T>::forward(const Tensor<T>& x) {
    if (x.shape.size() != 4) shape_error<T>("upsample2", x.shape, "[N,C,H,W]");
    in_shape_ = x.shape;
    const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    Tensor<T> y({n, c, 2 * h, 2 * w});
    for (std::int64_t p = 0; p < std::int64_t(n) * c; ++p) {
        const T* src = x.v.data() + p * h * w;
        T* dst = y.v.data() + p * 4 * h * w;
        for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
                const T v = src[std::int64_t(yy) * w + xx];
                T* d = dst + std::int64_t(2 * yy) * 2 * w + 2 * xx;
                d[0] = v;
                d[1] = v;
                d[2 * w] = v;
                d[2 * w + 1] = v;
            }
        }
    }
    this->forward_done_ = true;
    return y;
}

template <typename T>
Tensor<T> UpsampleNearest2<T>::backward(const Tensor<T>& dy) {
    this->require_forward("UpsampleNearest2");
    const int n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    Tensor<T> dx(in_shape_);
    for (std::int64_t p = 0; p < std::int64_t(n) * c; ++p) {
        const T* src = dy.v.data() + p * 4 * h * w;
        T* dst = dx.v.data() + p * h * w;
        for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
                const T* s = src + std::int64_t(2 * yy) * 2 * w + 2 * xx;
                dst[std::int64_t(yy) * w + xx] = s[0] + s[1] + s[2 * w] + s[2 * w + 1];
            }
        }
    }
    this->forward_done_ = false;
    return dx;
}

// ---------------------------------------------------------------------------
// concat / split

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.size() != 4 || b.shape.size() != 4 || a.shape[0] != b.shape[0] ||
        a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3])
        throw std::invalid_argument("concat_channels: incompatible shapes " +
                                    shape_str(a.shape) + " vs " + shape_str(b.shape));
    const int n = a.shape[0], ca = a.shape[1], cb = b.shape[1];
    const std::int64_t plane = std::int64_t(a.shape[2]) * a.shape[3];
    Tensor<T> y({n, ca + cb, a.shape[2], a.shape[3]});
    for (int ni = 0; ni < n; ++ni) {
        std::memcpy(y.v.data() + (std::int64_t(ni) * (ca + cb)) * plane,
                    a.v.data() + std::int64_t(ni) * ca * plane, sizeof(T) * ca * plane);
        std::memcpy(y.v.data() + (std::int64_t(ni) * (ca + cb) + ca) * plane,
                    b.v.data() + std::int64_t(ni) * cb * plane, sizeof(T) * cb * plane);
    }
    return y;
}

template <typename T>
void split_channels(const Tensor<T>& dy, int ca, Tensor<T>& da, Tensor<T>& db) {
    const int n = dy.shape[0], ct = dy.shape[1];
    const int cb = ct - ca;
    const std::int64_t plane = std::int64_t(dy.shape[2]) * dy.shape[3];
    da = Tensor<T>({n, ca, dy.shape[2], dy.shape[3]});
    db = Tensor<T>({n, cb, dy.shape[2], dy.shape[3]});
    for (int ni = 0; ni < n; ++ni) {
        std::memcpy(da.v.data() + std::int64_t(ni) * ca * plane,
                    dy.v.data() + (std::int64_t(ni) * ct) * plane, sizeof(T) * ca * plane);
        std::memcpy(db.v.data() + std::int64_t(ni) * cb * plane,
                    dy.v.data() + (std::int64_t(ni) * ct + ca) * plane, sizeof(T) * cb * plane);
    }
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x) {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& dy) {
    Tensor<T> g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

template <typename T>
std::vector<Tensor<T>*> Sequential<T>::parameters() {
    std::vector<Tensor<T>*> ps;
    for (auto& l : layers_)
        for (auto* p : l->parameters()) ps.push_back(p);
    return ps;
}

template <typename T>
std::string Sequential<T>::describe() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < layers_.size(); ++i) os << (i ? " | " : "") << layers_[i]->describe();
    return os.str();
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
LossValue<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape != target.shape)
        throw std::invalid_argument("bce_loss: shape mismatch " + shape_str(pred.shape) + " vs " +
                                    shape_str(target.shape));
    const T eps = T(1e-7);
    const std::int64_t n = pred.numel();
    LossValue<T> out;
    out.grad = Tensor<T>(pred.shape);
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T p = std::clamp(pred.v[i], eps, T(1) - eps);
        const T t = target.v[i];
        acc += -(double(t) * std::log(double(p)) + (1.0 - double(t)) * std::log(1.0 - double(p)));
        out.grad.v[i] = (p - t) / (p * (T(1) - p)) / T(n);
    }
    out.value = T(acc / double(n));
    return out;
}

template <typename T>
LossValue<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape != target.shape)
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(pred.shape) + " vs " +
                                    shape_str(target.shape));
    const std::int64_t n = pred.numel();
    LossValue<T> out;
    out.grad = Tensor<T>(pred.shape);
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = double(pred.v[i]) - double(target.v[i]);
        acc += d * d;
        out.grad.v[i] = T(2) * T(d) / T(n);
    }
    out.value = T(acc / double(n));
    return out;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
void adam_step(AdamState<T>& state, const std::vector<Tensor<T>*>& params) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.vv.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->v.size(), T(0));
            state.vv[i].assign(params[i]->v.size(), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: parameter count changed");
    state.step += 1;
    const T b1 = state.beta1, b2 = state.beta2;
    const T bc1 = T(1) - T(std::pow(double(b1), double(state.step)));
    const T bc2 = T(1) - T(std::pow(double(b2), double(state.step)));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& p = *params[pi];
        if (p.g.size() != p.v.size())
            throw std::invalid_argument("adam_step: parameter missing gradient");
        auto& m = state.m[pi];
        auto& v = state.vv[pi];
        if (m.size() != p.v.size()) throw std::invalid_argument("adam_step: moment shape mismatch");
        for (std::size_t i = 0; i < p.v.size(); ++i) {
            const T g = p.g[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            p.v[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what) {
    for (std::size_t i = 0; i < t.v.size(); ++i) {
        if (!std::isfinite(double(t.v[i])))
            throw std::runtime_error("non-finite value in " + what + " at flat index " +
                                     std::to_string(i));
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const std::string& topology,
                     const std::vector<Tensor<float>*>& params) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path);
    f << "kneeview-checkpoint v1\n";
    f << "topology " << fnv1a_hex(topology) << "\n";
    f << "params " << params.size() << "\n";
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = *params[i];
        f << "param " << i << " " << t.numel() << " "
          << fnv1a_hex(t.v.data(), t.v.size() * sizeof(float)) << "\n";
    }
    f << "data\n";
    for (const auto* t : params)
        f.write(reinterpret_cast<const char*>(t->v.data()),
                std::streamsize(t->v.size() * sizeof(float)));
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, const std::string& expected_topology,
                     const std::vector<Tensor<float>*>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string line;
    std::getline(f, line);
    if (line != "kneeview-checkpoint v1")
        throw std::runtime_error("bad checkpoint magic in " + path);
    std::getline(f, line);
    {
        const auto tok = split_ws(line);
        if (tok.size() != 2 || tok[0] != "topology")
            throw std::runtime_error("bad checkpoint topology line");
        if (tok[1] != fnv1a_hex(expected_topology))
            throw std::runtime_error("checkpoint topology mismatch: " + path +
                                     " does not match the requested network");
    }
    std::getline(f, line);
    const auto ptok = split_ws(line);
    if (ptok.size() != 2 || ptok[0] != "params" ||
        std::stoul(ptok[1]) != params.size())
        throw std::runtime_error("checkpoint parameter count mismatch");
    std::vector<std::pair<std::int64_t, std::string>> blobs;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::getline(f, line);
        const auto tok = split_ws(line);
        if (tok.size() != 4 || tok[0] != "param")
            throw std::runtime_error("bad checkpoint param line: " + line);
        blobs.emplace_back(std::stoll(tok[2]), tok[3]);
    }
    std::getline(f, line);
    if (line != "data") throw std::runtime_error("bad checkpoint data marker");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = *params[i];
        if (t.numel() != blobs[i].first)
            throw std::runtime_error("checkpoint blob size mismatch for param " +
                                     std::to_string(i));
        f.read(reinterpret_cast<char*>(t.v.data()), std::streamsize(t.v.size() * sizeof(float)));
        if (!f) throw std::runtime_error("checkpoint truncated: " + path);
        if (fnv1a_hex(t.v.data(), t.v.size() * sizeof(float)) != blobs[i].second)
            throw std::runtime_error("checkpoint checksum failure for param " + std::to_string(i));
    }
}

// ---------------------------------------------------------------------------

#define KV_INSTANTIATE(T)                                                                 \
    template struct Tensor<T>;                                                            \
    template class Layer<T>;                                                              \
    template class Conv2d<T>;                                                             \
    template class MaxPool2d<T>;                                                          \
    template class GlobalAvgPool<T>;                                                      \
    template class Dense<T>;                                                              \
    template class ReLU<T>;                                                               \
    template class Sigmoid<T>;                                                            \
    template class UpsampleNearest2<T>;                                                   \
    template class Sequential<T>;                                                         \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);               \
    template void split_channels(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);          \
    template LossValue<T> bce_loss(const Tensor<T>&, const Tensor<T>&);                   \
    template LossValue<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                   \
    template void adam_step(AdamState<T>&, const std::vector<Tensor<T>*>&);               \
    template void check_finite(const Tensor<T>&, const std::string&);

KV_INSTANTIATE(float)
KV_INSTANTIATE(double)

#undef KV_INSTANTIATE

}  // namespace kv::nn
