#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace oseg {

// Dense rank-4 layout (batch, channel, height, width), row-major.
struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }
    std::string str() const;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until touched
    bool requires_grad = false;
    std::uint64_t id = 0; // construction order; fixes backward traversal order
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    std::vector<double>& grad_ref();
};

// Value-semantics handle over a shared node in the differentiation graph.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& s, bool requires_grad = false);
    static Tensor full(const Shape& s, double value, bool requires_grad = false);
    static Tensor from_data(const Shape& s, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl != nullptr; }
    const Shape& shape() const;
    std::int64_t numel() const { return shape().numel(); }
    bool requires_grad() const;
    void set_requires_grad(bool v);

    std::vector<double>& data();
    const std::vector<double>& data() const;
    // Allocates a zero gradient on first access.
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const; // requires numel() == 1
    double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;
    double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);

    // Deep copy as a fresh leaf; gradients are not copied.
    Tensor clone(bool requires_grad = false) const;

    std::shared_ptr<TensorImpl> impl;
};

// Disables graph recording in scope; used for inference paths.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

struct ConvWeights {
    Tensor kernel; // (out_ch, in_ch, kh, kw)
    Tensor bias;   // (1, out_ch, 1, 1)
};

enum class BnMode { Train, Infer };

struct BatchNormState {
    Tensor gamma;        // (1, C, 1, 1), learnable
    Tensor beta;         // (1, C, 1, 1), learnable
    Tensor running_mean; // (1, C, 1, 1)
    Tensor running_var;  // (1, C, 1, 1)
    double epsilon = 1e-5;
    double momentum = 0.1;
};

// Per-pixel integer class labels, shape (N, H, W).
struct LabelMap {
    std::int64_t n = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<int> values;

    std::int64_t numel() const { return n * h * w; }
};

Tensor conv2d(const Tensor& input, const ConvWeights& w, int stride, int padding);
// Train mode updates s.running_mean / s.running_var in place.
Tensor batch_norm(const Tensor& input, BatchNormState& s, BnMode mode);
Tensor relu(const Tensor& input);
Tensor leaky_relu(const Tensor& input, double negative_slope);
Tensor max_pool(const Tensor& input, int kernel, int stride, int padding);
Tensor upsample_zero_pad(const Tensor& input, int n);
Tensor upsample_direct_copy(const Tensor& input, int n);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
Tensor scalar_add(const Tensor& a, double c);
Tensor sigmoid(const Tensor& input);
Tensor tanh_op(const Tensor& input);
Tensor log_op(const Tensor& input);
Tensor clamp(const Tensor& input, double lo, double hi);
Tensor mean_all(const Tensor& input);
Tensor sum_all(const Tensor& input);
Tensor mean_abs_diff(const Tensor& a, const Tensor& b);
Tensor detach(const Tensor& input);
Tensor softmax_cross_entropy(const Tensor& logits, const LabelMap& labels,
                             int ignore_index);

// Reverse-mode sweep from a scalar loss node.
void backward(const Tensor& loss);

} // namespace oseg
