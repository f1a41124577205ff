#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>

#include "kv/nn.hpp"

using namespace kv::nn;

namespace {

// Central finite differences of a scalar function of one tensor entry.
template <typename F>
double numeric_grad(F&& loss_fn, double& slot, double h = 1e-5) {
    const double keep = slot;
    slot = keep + h;
    const double lp = loss_fn();
    slot = keep - h;
    const double lm = loss_fn();
    slot = keep;
    return (lp - lm) / (2.0 * h);
}

TensorD random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    TensorD t(std::move(shape));
    std::normal_distribution<double> d(0.0, scale);
    for (auto& v : t.v) v = d(rng);
    return t;
}

// Checks analytic grads of a layer (input + parameters) against central
// differences through a fixed quadratic readout loss sum(y * c).
void check_layer_gradients(Layer<double>& layer, const TensorD& input, std::mt19937_64& rng,
                           double tol = 1e-6) {
    TensorD x = input;
    TensorD y0 = layer.forward(x);
    TensorD coeff = random_tensor(y0.shape, rng);

    const auto loss_of = [&]() {
        // non-destructive re-forward with current values
        TensorD out = layer.forward(x);
        double acc = 0;
        for (std::size_t i = 0; i < out.v.size(); ++i)
            acc += out.v[i] * coeff.v[i] + 0.5 * out.v[i] * out.v[i];
        return acc;
    };

    // analytic pass
    TensorD y = layer.forward(x);
    TensorD dy(y.shape);
    for (std::size_t i = 0; i < y.v.size(); ++i) dy.v[i] = coeff.v[i] + y.v[i];
    for (auto* p : layer.parameters()) {
        p->ensure_grad();
        p->zero_grad();
    }
    TensorD dx = layer.backward(dy);

    const auto rel_err = [](double a, double n) {
        const double denom = std::max({std::fabs(a), std::fabs(n), 1e-8});
        return std::fabs(a - n) / denom;
    };

    // input gradients (subsample for speed)
    const std::size_t stride_x = std::max<std::size_t>(1, x.v.size() / 48);
    for (std::size_t i = 0; i < x.v.size(); i += stride_x) {
        const double num = numeric_grad(loss_of, x.v[i]);
        CHECK(rel_err(dx.v[i], num) < tol);
    }
    // parameter gradients
    for (auto* p : layer.parameters()) {
        const std::size_t stride_p = std::max<std::size_t>(1, p->v.size() / 48);
        for (std::size_t i = 0; i < p->v.size(); i += stride_p) {
            const double num = numeric_grad(loss_of, p->v[i]);
            CHECK(rel_err(p->g[i], num) < tol);
        }
    }
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    TensorF t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK_FALSE(t.has_grad());
    t.ensure_grad();
    CHECK(t.has_grad());
    CHECK_THROWS_AS(TensorF({2, 0, 3}), std::invalid_argument);
}

TEST_CASE("dense identity passthrough") {
    Dense<float> d(3, 3);
    for (int i = 0; i < 3; ++i) d.weight.v[i * 3 + i] = 1.0f;
    TensorF x({2, 3});
    for (int i = 0; i < 6; ++i) x.v[i] = float(i) * 0.5f - 1.0f;
    const TensorF y = d.forward(x);
    for (int i = 0; i < 6; ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]));
}

TEST_CASE("sigmoid(0) is exactly one half") {
    Sigmoid<float> s;
    TensorF x({1, 1});
    x.v[0] = 0.0f;
    CHECK(s.forward(x).v[0] == 0.5f);
}

TEST_CASE("impulse convolution reproduces the input interior") {
    Conv2d<float> c(1, 1, 3);
    c.weight.v[4] = 1.0f;  // centre tap
    TensorF x({1, 1, 6, 6});
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> d(-1, 1);
    for (auto& v : x.v) v = d(rng);
    const TensorF y = c.forward(x);
    for (std::size_t i = 0; i < x.v.size(); ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]));
}

TEST_CASE("forward rejects wrong shapes naming the layer") {
    Conv2d<float> c(2, 4, 3);
    TensorF bad({1, 3, 8, 8});
    try {
        c.forward(bad);
        FAIL("expected shape error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("conv3x3 2->4") != std::string::npos);
    }
}

TEST_CASE("backward before forward is a state error") {
    Conv2d<float> c(1, 1, 3);
    TensorF dy({1, 1, 4, 4});
    CHECK_THROWS_AS(c.backward(dy), std::logic_error);
}

TEST_CASE("zero upstream gradient produces zero grads") {
    Dense<float> d(4, 2);
    std::mt19937_64 rng(2);
    d.init_kaiming(rng);
    TensorF x({3, 4});
    for (auto& v : x.v) v = 1.0f;
    d.forward(x);
    const TensorF dx = d.backward(TensorF({3, 2}));
    for (const float v : dx.v) CHECK(v == 0.0f);
    for (const float v : d.weight.g) CHECK(v == 0.0f);
}

TEST_CASE("dense + MSE matches the closed-form gradient") {
    // single sample: d loss / d W = 2 (Wx + b - y) x^T / n_out
    Dense<double> d(3, 2);
    std::mt19937_64 rng(5);
    d.init_kaiming(rng);
    TensorD x({1, 3});
    x.v = {0.5, -1.0, 2.0};
    TensorD target({1, 2});
    target.v = {0.25, -0.75};
    const TensorD pred = d.forward(x);
    const auto loss = mse_loss(pred, target);
    d.weight.zero_grad();
    d.bias.zero_grad();
    d.backward(loss.grad);
    for (int o = 0; o < 2; ++o) {
        const double resid = pred.v[o] - target.v[o];
        for (int i = 0; i < 3; ++i)
            CHECK(d.weight.g[o * 3 + i] == doctest::Approx(2.0 * resid * x.v[i] / 2.0).epsilon(1e-12));
        CHECK(d.bias.g[o] == doctest::Approx(2.0 * resid / 2.0).epsilon(1e-12));
    }
}

TEST_CASE("finite-difference gradient checks per layer type") {
    std::mt19937_64 rng(42);
    SUBCASE("conv3x3") {
        Conv2d<double> c(2, 3, 3);
        c.init_kaiming(rng);
        check_layer_gradients(c, random_tensor({2, 2, 5, 6}, rng), rng);
    }
    SUBCASE("conv1x1") {
        Conv2d<double> c(3, 2, 1);
        c.init_kaiming(rng);
        check_layer_gradients(c, random_tensor({1, 3, 4, 4}, rng), rng);
    }
    SUBCASE("dense") {
        Dense<double> d(7, 4);
        d.init_kaiming(rng);
        check_layer_gradients(d, random_tensor({3, 7}, rng), rng);
    }
    SUBCASE("relu") {
        ReLU<double> r;
        // keep values away from the kink
        TensorD x = random_tensor({2, 3, 4, 4}, rng);
        for (auto& v : x.v)
            if (std::fabs(v) < 0.05) v = 0.1;
        check_layer_gradients(r, x, rng);
    }
    SUBCASE("sigmoid") {
        Sigmoid<double> s;
        check_layer_gradients(s, random_tensor({2, 5}, rng), rng);
    }
    SUBCASE("maxpool") {
        MaxPool2d<double> m;
        // well-separated values so the argmax is stable under +/- h
        TensorD x({1, 2, 6, 6});
        std::uniform_real_distribution<double> d(0, 1);
        for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = d(rng) + 3.0 * double(i % 7);
        check_layer_gradients(m, x, rng);
    }
    SUBCASE("global average pool") {
        GlobalAvgPool<double> g;
        check_layer_gradients(g, random_tensor({2, 3, 4, 4}, rng), rng);
    }
    SUBCASE("upsample") {
        UpsampleNearest2<double> u;
        check_layer_gradients(u, random_tensor({1, 2, 3, 3}, rng), rng);
    }
}

TEST_CASE("full 4-layer toy net against central finite differences") {
    std::mt19937_64 rng(77);
    Sequential<double> net;
    {
        auto c1 = std::make_unique<Conv2d<double>>(1, 3, 3);
        c1->init_kaiming(rng);
        net.add(std::move(c1));
        net.add(std::make_unique<ReLU<double>>());
        net.add(std::make_unique<MaxPool2d<double>>());
        net.add(std::make_unique<GlobalAvgPool<double>>());
        auto d1 = std::make_unique<Dense<double>>(3, 2);
        d1->init_kaiming(rng);
        net.add(std::move(d1));
    }
    TensorD x = random_tensor({2, 1, 8, 8}, rng);
    TensorD target = random_tensor({2, 2}, rng);

    const auto loss_of = [&]() {
        TensorD y = net.forward(x);
        return double(mse_loss(y, target).value);
    };

    TensorD y = net.forward(x);
    const auto l = mse_loss(y, target);
    for (auto* p : net.parameters()) {
        p->ensure_grad();
        p->zero_grad();
    }
    net.backward(l.grad);

    double max_rel = 0;
    for (auto* p : net.parameters()) {
        const std::size_t stride = std::max<std::size_t>(1, p->v.size() / 40);
        for (std::size_t i = 0; i < p->v.size(); i += stride) {
            const double num = numeric_grad(loss_of, p->v[i]);
            const double denom = std::max({std::fabs(num), std::fabs(p->g[i]), 1e-8});
            max_rel = std::max(max_rel, std::fabs(num - p->g[i]) / denom);
        }
    }
    CHECK(max_rel < 1e-6);
}

TEST_CASE("bce loss values and independent recomputation") {
    TensorD p({1});
    TensorD t({1});
    p.v[0] = 0.5;
    t.v[0] = 1.0;
    CHECK(bce_loss(p, t).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    p.v[0] = 1.0;  // clamps to 1 - 1e-7
    CHECK(bce_loss(p, t).value < 1e-6);

    // random batch vs a long-double recomputation
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> up(0.001, 0.999);
    std::uniform_int_distribution<int> ut(0, 1);
    TensorD pred({64});
    TensorD targ({64});
    for (int i = 0; i < 64; ++i) {
        pred.v[i] = up(rng);
        targ.v[i] = ut(rng);
    }
    long double ref = 0;
    for (int i = 0; i < 64; ++i) {
        const long double pp = pred.v[i], tt = targ.v[i];
        ref += -(tt * std::log(pp) + (1.0L - tt) * std::log(1.0L - pp));
    }
    ref /= 64;
    CHECK(std::fabs(double(bce_loss(pred, targ).value - double(ref))) /
              std::max(1e-12, double(ref)) <
          1e-12);

    // gradient against finite differences
    const auto loss_of = [&]() { return double(bce_loss(pred, targ).value); };
    const auto g = bce_loss(pred, targ).grad;
    for (int i = 0; i < 64; i += 9) {
        const double num = numeric_grad(loss_of, pred.v[i]);
        CHECK(std::fabs(num - g.v[i]) / std::max({std::fabs(num), 1e-8}) < 1e-6);
    }
}

TEST_CASE("mse loss basics and gradient") {
    TensorD a({3});
    a.v = {1, 2, 3};
    CHECK(mse_loss(a, a).value == doctest::Approx(0.0));
    TensorD p({1}), t({1});
    p.v[0] = 0;
    t.v[0] = 2;
    CHECK(mse_loss(p, t).value == doctest::Approx(4.0));
    TensorD bad({2});
    CHECK_THROWS_AS(mse_loss(a, bad), std::invalid_argument);

    std::mt19937_64 rng(13);
    TensorD pred = random_tensor({17}, rng);
    TensorD targ = random_tensor({17}, rng);
    const auto loss_of = [&]() { return double(mse_loss(pred, targ).value); };
    const auto g = mse_loss(pred, targ).grad;
    for (int i = 0; i < 17; i += 3) {
        const double num = numeric_grad(loss_of, pred.v[i], 1e-6);
        CHECK(std::fabs(num - g.v[i]) / std::max({std::fabs(num), 1e-9}) < 1e-9);
    }
}

TEST_CASE("adam: zero grads leave parameters unchanged") {
    Dense<float> d(3, 3);
    std::mt19937_64 rng(1);
    d.init_kaiming(rng);
    const auto before = d.weight.v;
    AdamState<float> st;
    d.weight.ensure_grad();
    d.bias.ensure_grad();
    adam_step(st, {&d.weight, &d.bias});
    CHECK(d.weight.v == before);
}

TEST_CASE("adam first step moves each weight by ~lr in the -sign(g) direction") {
    TensorD p({5});
    p.v = {1, -2, 3, 0.5, -0.25};
    p.ensure_grad();
    p.g = {0.3, -4.0, 1e-3, 2.0, -0.7};
    const auto before = p.v;
    AdamState<double> st;
    st.lr = 1e-4;
    std::vector<Tensor<double>*> params{&p};
    adam_step(st, params);
    for (int i = 0; i < 5; ++i) {
        // bias-corrected first step: delta = -lr * g / (|g| + eps')
        const double delta = p.v[i] - before[i];
        const double expect = -st.lr * (p.g[i] > 0 ? 1.0 : -1.0);
        CHECK(std::fabs(delta - expect) < 1e-6);
    }
}

TEST_CASE("adam is deterministic across replays") {
    const auto run = [](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        Dense<float> d(6, 1);
        d.init_kaiming(rng);
        AdamState<float> st;
        st.lr = 1e-2f;
        TensorF x({4, 6});
        TensorF t({4, 1});
        std::uniform_real_distribution<float> u(-1, 1);
        for (auto& v : x.v) v = u(rng);
        for (auto& v : t.v) v = u(rng);
        for (int step = 0; step < 100; ++step) {
            const TensorF y = d.forward(x);
            const auto l = mse_loss(y, t);
            d.weight.zero_grad();
            d.bias.zero_grad();
            d.backward(l.grad);
            adam_step(st, {&d.weight, &d.bias});
        }
        return d.weight.v;
    };
    CHECK(run(123) == run(123));
}

TEST_CASE("loss decreases by >= 90% on a separable toy classification") {
    std::mt19937_64 rng(21);
    Dense<double> d(2, 1);
    d.init_kaiming(rng);
    Sigmoid<double> sig;
    // two separable blobs
    TensorD x({32, 2});
    TensorD t({32, 1});
    std::normal_distribution<double> nd(0.0, 0.3);
    for (int i = 0; i < 32; ++i) {
        const int cls = i % 2;
        x.v[i * 2] = nd(rng) + (cls ? 2.0 : -2.0);
        x.v[i * 2 + 1] = nd(rng) + (cls ? -1.0 : 1.0);
        t.v[i] = cls;
    }
    AdamState<double> st;
    st.lr = 0.05;
    double first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
        const TensorD z = d.forward(x);
        const TensorD p = sig.forward(z);
        const auto l = bce_loss(p, t);
        if (step == 0) first = l.value;
        last = l.value;
        d.weight.zero_grad();
        d.bias.zero_grad();
        d.backward(sig.backward(l.grad));
        adam_step(st, {&d.weight, &d.bias});
    }
    CHECK(last < 0.1 * first);
}

TEST_CASE("concat/split round-trip") {
    std::mt19937_64 rng(31);
    const TensorD a = random_tensor({2, 3, 4, 4}, rng);
    const TensorD b = random_tensor({2, 2, 4, 4}, rng);
    const TensorD c = concat_channels(a, b);
    CHECK(c.shape == std::vector<int>{2, 5, 4, 4});
    TensorD da, db;
    split_channels(c, 3, da, db);
    CHECK(da.v == a.v);
    CHECK(db.v == b.v);
}

TEST_CASE("check_finite flags NaN") {
    TensorF t({3});
    t.v = {1.0f, std::nanf(""), 0.0f};
    CHECK_THROWS_AS(check_finite(t, "unit"), std::runtime_error);
}

TEST_CASE("checkpoint save/load round-trip with checksum verification") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "kv_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "m.ckpt").string();

    std::mt19937_64 rng(8);
    Dense<float> d(4, 2);
    d.init_kaiming(rng);
    const std::string topo = d.describe();
    save_checkpoint(path, topo, {&d.weight, &d.bias});

    Dense<float> d2(4, 2);
    load_checkpoint(path, topo, {&d2.weight, &d2.bias});
    CHECK(d2.weight.v == d.weight.v);
    CHECK(d2.bias.v == d.bias.v);

    CHECK_THROWS_AS(load_checkpoint(path, "different topology", {&d2.weight, &d2.bias}),
                    std::runtime_error);
    fs::remove_all(dir);
}
