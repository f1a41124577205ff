#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace kv::nn {

// Dense N-d array with an optional gradient buffer of the same shape.
// float is the training type; double is used for finite-difference checks.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;
    std::vector<T> g;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    std::int64_t numel() const;
    int dim(int i) const { return shape[i]; }
    void ensure_grad();
    void zero_grad();
    bool has_grad() const { return !g.empty(); }

    // Flat accessors; layers index raw buffers directly.
    T& operator[](std::int64_t i) { return v[i]; }
    const T& operator[](std::int64_t i) const { return v[i]; }
};

std::int64_t numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Layer contract: backward() consumes the activations saved by the
// immediately preceding forward() and returns the gradient w.r.t. that
// input; parameter gradients are accumulated into each parameter's grad
// buffer. Calling backward before forward is a logic error.
template <typename T>
class Layer {
  public:
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x) = 0;
    virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
    virtual std::vector<Tensor<T>*> parameters() { return {}; }
    virtual std::string describe() const = 0;

  protected:
    bool forward_done_ = false;
    void require_forward(const char* who) const;
};

// 3x3 (or 1x1) convolution, stride 1, zero padding to keep spatial size.
// Input [N, Cin, H, W] -> [N, Cout, H, W].
template <typename T>
class Conv2d final : public Layer<T> {
  public:
    Conv2d(int in_ch, int out_ch, int ksize = 3);
    void init_kaiming(std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& dy) override;
    std::vector<Tensor<T>*> parameters() override { return {&weight, &bias}; }
    std::string describe() const override;

    Tensor<T> weight;  // [out, in, k, k]
    Tensor<T> bias;    // [out]
    int in_ch, out_ch, k;

  private:
    Tensor<T> x_;  // saved input
};

// 2x2 max pooling, stride 2. Odd trailing rows/cols are dropped.
template <typename T>
class MaxPool2d final : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& dy) override;
    std::string describe() const override { return "maxpool2"; }

  private:
    std::vector<std::int64_t> argmax_;
    std::vector<int> in_shape_;
};

// [N, C, H, W] -> [N, C]
template <typename T>
class GlobalAvgPool final : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& dy) override;
    std::string describe() const override { return "gap"; }

  private:
    std::vector<int> in_shape_;
};

template <typename T>
class Dense final : public Layer<T> {
  public:
    Dense(int in_features, int out_features);
    void init_kaiming(std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& dy) override;
    std::vector<Tensor<T>*> parameters() override { return {&weight, &bias}; }
    std::string describe() const override;

    Tensor<T> weight;  // [out, in]
    Tensor<T> bias;    // [out]
    int in_f, out_f;

  private:
    Tensor<T> x_;
};

template <typename T>
class ReLU final : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& dy) override;
    std::string describe() const override { return "relu"; }

  private:
    Tensor<T> x_;
};

template <typename T>
class Sigmoid final : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& dy) override;
    std::string describe() const override { return "sigmoid"; }

  private:
    Tensor<T> y_;
};

// Nearest-neighbour 2x upsample, [N, C, H, W] -> [N, C, 2H, 2W].
template <typename T>
class UpsampleNearest2 final : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T>& x) override;
    Tensor<T> backward(const Tensor<T>& dy) override;
    std::string describe() const override { return "upsample2"; }

  private:
    std::vector<int> in_shape_;
};

// Channel concatenation helpers for skip connections.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& dy, int ca, Tensor<T>& da, Tensor<T>& db);

// Simple layer chain used by the trunks/heads and the gradient-check tests.
template <typename T>
class Sequential {
  public:
    Sequential() = default;
    void add(std::unique_ptr<Layer<T>> l) { layers_.push_back(std::move(l)); }
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);
    std::vector<Tensor<T>*> parameters();
    std::string describe() const;
    Layer<T>* layer(std::size_t i) { return layers_[i].get(); }
    std::size_t size() const { return layers_.size(); }

  private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <typename T>
struct LossValue {
    T value;
    Tensor<T> grad;  // d loss / d pred
};

// Mean of -[t ln p + (1-t) ln(1-p)]; predictions are clamped to
// [eps, 1-eps] with eps = 1e-7 before the logs.
template <typename T>
LossValue<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Mean squared error. Shapes must match exactly.
template <typename T>
LossValue<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Adam with bias correction. Moment buffers are lazily shaped on first step.
template <typename T>
struct AdamState {
    std::int64_t step = 0;
    T lr = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::vector<std::vector<T>> m, vv;
};

template <typename T>
void adam_step(AdamState<T>& state, const std::vector<Tensor<T>*>& params);

// Throws std::runtime_error naming the first non-finite value found.
template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what);

// Checkpoint I/O: text topology header + little-endian float32 blobs with
// per-blob fnv checksums. Topology mismatch or checksum failure throws.
void save_checkpoint(const std::string& path, const std::string& topology,
                     const std::vector<Tensor<float>*>& params);
void load_checkpoint(const std::string& path, const std::string& expected_topology,
                     const std::vector<Tensor<float>*>& params);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace kv::nn
