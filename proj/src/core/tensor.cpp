#include "core/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "core/error.hpp"
#include "core/threads.hpp"

namespace oseg {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorImpl> new_impl(const Shape& s) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = s;
    impl->data.assign(static_cast<std::size_t>(s.numel()), 0.0);
    impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return impl;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (t->defined() && t->requires_grad()) {
            return true;
        }
    }
    return false;
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) {
        throw_invalid(std::string(op) + ": undefined tensor");
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw_invalid(std::string(op) + ": shape mismatch " + a.shape().str() +
                      " vs " + b.shape().str());
    }
}

// C (M x P) += A (M x K) * B (K x P), all row-major.
void gemm_acc(const double* a, const double* b, double* c, std::int64_t m,
              std::int64_t k, std::int64_t p) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* ci = c + i * p;
        const double* ai = a + i * k;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double aik = ai[kk];
            if (aik == 0.0) {
                continue;
            }
            const double* bk = b + kk * p;
            for (std::int64_t j = 0; j < p; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
}

// C (M x K) += A (M x P) * B^T where B is (K x P).
void gemm_abt_acc(const double* a, const double* b, double* c, std::int64_t m,
                  std::int64_t k, std::int64_t p) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * p;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double* bk = b + kk * p;
            double s = 0.0;
            for (std::int64_t j = 0; j < p; ++j) {
                s += ai[j] * bk[j];
            }
            c[i * k + kk] += s;
        }
    }
}

// C (M x P) += A^T * B where A is (K x M), B is (K x P).
void gemm_atb_acc(const double* a, const double* b, double* c, std::int64_t m,
                  std::int64_t k, std::int64_t p) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
        const double* ak = a + kk * m;
        const double* bk = b + kk * p;
        for (std::int64_t i = 0; i < m; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) {
                continue;
            }
            double* ci = c + i * p;
            for (std::int64_t j = 0; j < p; ++j) {
                ci[j] += aki * bk[j];
            }
        }
    }
}

struct ConvDims {
    std::int64_t batch, in_ch, in_h, in_w;
    std::int64_t out_ch, kh, kw;
    std::int64_t out_h, out_w;
    std::int64_t stride, pad;
    std::int64_t k() const { return in_ch * kh * kw; }
    std::int64_t p() const { return out_h * out_w; }
};

void im2col(const double* x, const ConvDims& d, double* col) {
    const std::int64_t ow_n = d.out_w;
    for (std::int64_t c = 0; c < d.in_ch; ++c) {
        const double* xc = x + c * d.in_h * d.in_w;
        for (std::int64_t ki = 0; ki < d.kh; ++ki) {
            for (std::int64_t kj = 0; kj < d.kw; ++kj) {
                double* row = col + ((c * d.kh + ki) * d.kw + kj) * d.p();
                for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
                    const std::int64_t ih = oh * d.stride - d.pad + ki;
                    double* out = row + oh * ow_n;
                    if (ih < 0 || ih >= d.in_h) {
                        std::fill(out, out + ow_n, 0.0);
                        continue;
                    }
                    const double* xrow = xc + ih * d.in_w;
                    for (std::int64_t ow = 0; ow < ow_n; ++ow) {
                        const std::int64_t iw = ow * d.stride - d.pad + kj;
                        out[ow] = (iw >= 0 && iw < d.in_w) ? xrow[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* col, const ConvDims& d, double* x) {
    for (std::int64_t c = 0; c < d.in_ch; ++c) {
        double* xc = x + c * d.in_h * d.in_w;
        for (std::int64_t ki = 0; ki < d.kh; ++ki) {
            for (std::int64_t kj = 0; kj < d.kw; ++kj) {
                const double* row = col + ((c * d.kh + ki) * d.kw + kj) * d.p();
                for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
                    const std::int64_t ih = oh * d.stride - d.pad + ki;
                    if (ih < 0 || ih >= d.in_h) {
                        continue;
                    }
                    const double* in = row + oh * d.out_w;
                    double* xrow = xc + ih * d.in_w;
                    for (std::int64_t ow = 0; ow < d.out_w; ++ow) {
                        const std::int64_t iw = ow * d.stride - d.pad + kj;
                        if (iw >= 0 && iw < d.in_w) {
                            xrow[iw] += in[ow];
                        }
                    }
                }
            }
        }
    }
}

thread_local std::vector<double> tl_col;

double* col_scratch(std::int64_t n) {
    if (static_cast<std::int64_t>(tl_col.size()) < n) {
        tl_col.resize(static_cast<std::size_t>(n));
    }
    return tl_col.data();
}

} // namespace

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

std::vector<double>& TensorImpl::grad_ref() {
    if (grad.empty()) {
        grad.assign(data.size(), 0.0);
    }
    return grad;
}

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
        throw_invalid("tensor: negative extent in shape " + s.str());
    }
    Tensor t;
    t.impl = new_impl(s);
    t.impl->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(const Shape& s, double value, bool requires_grad) {
    Tensor t = zeros(s, requires_grad);
    std::fill(t.impl->data.begin(), t.impl->data.end(), value);
    return t;
}

Tensor Tensor::from_data(const Shape& s, std::vector<double> data,
                         bool requires_grad) {
    if (static_cast<std::int64_t>(data.size()) != s.numel()) {
        throw_invalid("tensor: data length " + std::to_string(data.size()) +
                      " does not match shape " + s.str());
    }
    Tensor t = zeros(s, requires_grad);
    t.impl->data = std::move(data);
    return t;
}

Tensor Tensor::scalar(double value) {
    return from_data(Shape{1, 1, 1, 1}, {value});
}

const Shape& Tensor::shape() const {
    if (!impl) {
        throw_invalid("tensor: undefined");
    }
    return impl->shape;
}

bool Tensor::requires_grad() const { return impl && impl->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    require_defined(*this, "set_requires_grad");
    impl->requires_grad = v;
}

std::vector<double>& Tensor::data() {
    require_defined(*this, "data");
    return impl->data;
}

const std::vector<double>& Tensor::data() const {
    require_defined(*this, "data");
    return impl->data;
}

const std::vector<double>& Tensor::grad() const {
    require_defined(*this, "grad");
    return impl->grad_ref();
}

void Tensor::zero_grad() {
    require_defined(*this, "zero_grad");
    if (!impl->grad.empty()) {
        std::fill(impl->grad.begin(), impl->grad.end(), 0.0);
    }
}

double Tensor::item() const {
    require_defined(*this, "item");
    if (numel() != 1) {
        throw_invalid("item: tensor has " + std::to_string(numel()) +
                      " elements, expected 1");
    }
    return impl->data[0];
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h,
                  std::int64_t w) const {
    const Shape& s = shape();
    return impl->data[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

double& Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    const Shape& s = shape();
    return impl->data[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

Tensor Tensor::clone(bool requires_grad) const {
    require_defined(*this, "clone");
    Tensor t = zeros(shape(), requires_grad);
    t.impl->data = impl->data;
    return t;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const ConvWeights& w, int stride, int padding) {
    require_defined(input, "conv2d");
    require_defined(w.kernel, "conv2d");
    require_defined(w.bias, "conv2d");
    if (stride < 1) {
        throw_invalid("conv2d: stride must be >= 1");
    }
    if (padding < 0) {
        throw_invalid("conv2d: padding must be >= 0");
    }
    const Shape& xs = input.shape();
    const Shape& ks = w.kernel.shape();
    if (xs.c != ks.c) {
        throw_invalid("conv2d: input shape " + xs.str() +
                      " incompatible with kernel shape " + ks.str() +
                      " (channel mismatch)");
    }
    if (w.bias.shape() != Shape{1, ks.n, 1, 1}) {
        throw_invalid("conv2d: bias shape " + w.bias.shape().str() +
                      " does not match kernel shape " + ks.str());
    }

    ConvDims d;
    d.batch = xs.n;
    d.in_ch = xs.c;
    d.in_h = xs.h;
    d.in_w = xs.w;
    d.out_ch = ks.n;
    d.kh = ks.h;
    d.kw = ks.w;
    d.stride = stride;
    d.pad = padding;
    d.out_h = (xs.h + 2 * padding - ks.h) / stride + 1;
    d.out_w = (xs.w + 2 * padding - ks.w) / stride + 1;
    if (xs.h + 2 * padding < ks.h || xs.w + 2 * padding < ks.w) {
        throw_invalid("conv2d: kernel " + ks.str() +
                      " larger than padded input " + xs.str());
    }

    Tensor out = Tensor::zeros(Shape{d.batch, d.out_ch, d.out_h, d.out_w});
    const double* kerd = w.kernel.data().data();
    const double* biasd = w.bias.data().data();
    const double* xd = input.data().data();
    double* outd = out.impl->data.data();
    const std::int64_t k = d.k();
    const std::int64_t p = d.p();

    parallel_for(0, d.batch, [&](std::int64_t n) {
        double* col = col_scratch(k * p);
        im2col(xd + n * d.in_ch * d.in_h * d.in_w, d, col);
        double* on = outd + n * d.out_ch * p;
        for (std::int64_t oc = 0; oc < d.out_ch; ++oc) {
            std::fill(on + oc * p, on + (oc + 1) * p, biasd[oc]);
        }
        gemm_acc(kerd, col, on, d.out_ch, k, p);
    });

    if (!g_grad_enabled ||
        !any_requires_grad({&input, &w.kernel, &w.bias})) {
        return out;
    }

    out.impl->requires_grad = true;
    out.impl->parents = {input.impl, w.kernel.impl, w.bias.impl};
    auto x_impl = input.impl;
    auto k_impl = w.kernel.impl;
    auto b_impl = w.bias.impl;
    out.impl->backward_fn = [d, x_impl, k_impl, b_impl](TensorImpl& self) {
        const std::int64_t k = d.k();
        const std::int64_t p = d.p();
        const double* dy = self.grad.data();
        const double* xd = x_impl->data.data();
        const double* kerd = k_impl->data.data();
        const bool need_dx = x_impl->requires_grad;
        const bool need_dw = k_impl->requires_grad;
        const bool need_db = b_impl->requires_grad;

        double* dxd = need_dx ? x_impl->grad_ref().data() : nullptr;
        // Per-item partials keep the reduction order fixed regardless of
        // thread count.
        std::vector<std::vector<double>> dw_parts;
        std::vector<std::vector<double>> db_parts;
        if (need_dw) {
            dw_parts.assign(static_cast<std::size_t>(d.batch),
                            std::vector<double>());
        }
        if (need_db) {
            db_parts.assign(static_cast<std::size_t>(d.batch),
                            std::vector<double>());
        }

        parallel_for(0, d.batch, [&](std::int64_t n) {
            double* col = col_scratch(k * p);
            im2col(xd + n * d.in_ch * d.in_h * d.in_w, d, col);
            const double* dyn = dy + n * d.out_ch * p;
            if (need_dw) {
                auto& dw = dw_parts[static_cast<std::size_t>(n)];
                dw.assign(static_cast<std::size_t>(d.out_ch * k), 0.0);
                gemm_abt_acc(dyn, col, dw.data(), d.out_ch, k, p);
            }
            if (need_db) {
                auto& db = db_parts[static_cast<std::size_t>(n)];
                db.assign(static_cast<std::size_t>(d.out_ch), 0.0);
                for (std::int64_t oc = 0; oc < d.out_ch; ++oc) {
                    double s = 0.0;
                    const double* row = dyn + oc * p;
                    for (std::int64_t j = 0; j < p; ++j) {
                        s += row[j];
                    }
                    db[static_cast<std::size_t>(oc)] = s;
                }
            }
            if (need_dx) {
                // Reuse the col buffer for the gradient columns.
                std::fill(col, col + k * p, 0.0);
                gemm_atb_acc(kerd, dyn, col, k, d.out_ch, p);
                col2im_acc(col, d, dxd + n * d.in_ch * d.in_h * d.in_w);
            }
        });

        if (need_dw) {
            auto& dw = k_impl->grad_ref();
            for (std::int64_t n = 0; n < d.batch; ++n) {
                const auto& part = dw_parts[static_cast<std::size_t>(n)];
                for (std::size_t i = 0; i < part.size(); ++i) {
                    dw[i] += part[i];
                }
            }
        }
        if (need_db) {
            auto& db = b_impl->grad_ref();
            for (std::int64_t n = 0; n < d.batch; ++n) {
                const auto& part = db_parts[static_cast<std::size_t>(n)];
                for (std::size_t i = 0; i < part.size(); ++i) {
                    db[i] += part[i];
                }
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

Tensor batch_norm(const Tensor& input, BatchNormState& s, BnMode mode) {
    require_defined(input, "batch_norm");
    const Shape& xs = input.shape();
    const Shape want{1, xs.c, 1, 1};
    for (const Tensor* t : {&s.gamma, &s.beta, &s.running_mean, &s.running_var}) {
        require_defined(*t, "batch_norm");
        if ((*t).shape() != want) {
            throw_invalid("batch_norm: parameter shape " + (*t).shape().str() +
                          " does not match input shape " + xs.str());
        }
    }
    if (s.epsilon <= 0.0) {
        throw_invalid("batch_norm: epsilon must be positive");
    }
    const std::int64_t per_ch = xs.n * xs.h * xs.w;
    if (mode == BnMode::Train && per_ch == 0) {
        throw_invalid("batch_norm: zero-size batch/spatial extent in Train mode");
    }

    const std::int64_t ch = xs.c;
    const std::int64_t hw = xs.h * xs.w;
    const double* xd = input.data().data();

    std::vector<double> mu(static_cast<std::size_t>(ch), 0.0);
    std::vector<double> inv_std(static_cast<std::size_t>(ch), 0.0);

    if (mode == BnMode::Train) {
        for (std::int64_t c = 0; c < ch; ++c) {
            double sum = 0.0;
            for (std::int64_t n = 0; n < xs.n; ++n) {
                const double* base = xd + (n * ch + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    sum += base[i];
                }
            }
            const double m = sum / static_cast<double>(per_ch);
            double sq = 0.0;
            for (std::int64_t n = 0; n < xs.n; ++n) {
                const double* base = xd + (n * ch + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    const double dlt = base[i] - m;
                    sq += dlt * dlt;
                }
            }
            const double var = sq / static_cast<double>(per_ch);
            mu[static_cast<std::size_t>(c)] = m;
            inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + s.epsilon);
            auto& rm = s.running_mean.data();
            auto& rv = s.running_var.data();
            rm[static_cast<std::size_t>(c)] =
                (1.0 - s.momentum) * rm[static_cast<std::size_t>(c)] + s.momentum * m;
            rv[static_cast<std::size_t>(c)] =
                (1.0 - s.momentum) * rv[static_cast<std::size_t>(c)] + s.momentum * var;
        }
    } else {
        const auto& rm = s.running_mean.data();
        const auto& rv = s.running_var.data();
        for (std::int64_t c = 0; c < ch; ++c) {
            if (rv[static_cast<std::size_t>(c)] < 0.0) {
                throw_invalid("batch_norm: negative running variance");
            }
            mu[static_cast<std::size_t>(c)] = rm[static_cast<std::size_t>(c)];
            inv_std[static_cast<std::size_t>(c)] =
                1.0 / std::sqrt(rv[static_cast<std::size_t>(c)] + s.epsilon);
        }
    }

    Tensor out = Tensor::zeros(xs);
    double* od = out.impl->data.data();
    const double* gd = s.gamma.data().data();
    const double* bd = s.beta.data().data();
    for (std::int64_t n = 0; n < xs.n; ++n) {
        for (std::int64_t c = 0; c < ch; ++c) {
            const double m = mu[static_cast<std::size_t>(c)];
            const double is = inv_std[static_cast<std::size_t>(c)];
            const double g = gd[static_cast<std::size_t>(c)];
            const double b = bd[static_cast<std::size_t>(c)];
            const double* xb = xd + (n * ch + c) * hw;
            double* ob = od + (n * ch + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                ob[i] = g * (xb[i] - m) * is + b;
            }
        }
    }

    if (!g_grad_enabled || !any_requires_grad({&input, &s.gamma, &s.beta})) {
        return out;
    }

    out.impl->requires_grad = true;
    out.impl->parents = {input.impl, s.gamma.impl, s.beta.impl};
    auto x_impl = input.impl;
    auto g_impl = s.gamma.impl;
    auto b_impl = s.beta.impl;
    const bool train = mode == BnMode::Train;
    out.impl->backward_fn = [xs, mu, inv_std, x_impl, g_impl, b_impl,
                             train](TensorImpl& self) {
        const std::int64_t ch = xs.c;
        const std::int64_t hw = xs.h * xs.w;
        const std::int64_t per_ch = xs.n * hw;
        const double* dy = self.grad.data();
        const double* xd = x_impl->data.data();
        const double* gd = g_impl->data.data();

        for (std::int64_t c = 0; c < ch; ++c) {
            const double m = mu[static_cast<std::size_t>(c)];
            const double is = inv_std[static_cast<std::size_t>(c)];
            double sum_dy = 0.0;
            double sum_dy_xhat = 0.0;
            for (std::int64_t n = 0; n < xs.n; ++n) {
                const double* dyb = dy + (n * ch + c) * hw;
                const double* xb = xd + (n * ch + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    sum_dy += dyb[i];
                    sum_dy_xhat += dyb[i] * (xb[i] - m) * is;
                }
            }
            if (g_impl->requires_grad) {
                g_impl->grad_ref()[static_cast<std::size_t>(c)] += sum_dy_xhat;
            }
            if (b_impl->requires_grad) {
                b_impl->grad_ref()[static_cast<std::size_t>(c)] += sum_dy;
            }
            if (x_impl->requires_grad) {
                auto& dx = x_impl->grad_ref();
                const double g = gd[static_cast<std::size_t>(c)];
                const double mean_dy = sum_dy / static_cast<double>(per_ch);
                const double mean_dy_xhat =
                    sum_dy_xhat / static_cast<double>(per_ch);
                for (std::int64_t n = 0; n < xs.n; ++n) {
                    const double* dyb = dy + (n * ch + c) * hw;
                    const double* xb = xd + (n * ch + c) * hw;
                    double* dxb = dx.data() + (n * ch + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        if (train) {
                            const double xhat = (xb[i] - m) * is;
                            dxb[i] += g * is *
                                      (dyb[i] - mean_dy - xhat * mean_dy_xhat);
                        } else {
                            dxb[i] += g * is * dyb[i];
                        }
                    }
                }
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace {

// Elementwise unary op with backward dx += dy * dfun(x, y).
template <typename FwdFn, typename BwdFn>
Tensor unary_op(const Tensor& input, const char* name, FwdFn fwd, BwdFn dfun) {
    require_defined(input, name);
    Tensor out = Tensor::zeros(input.shape());
    const auto& x = input.data();
    auto& y = out.impl->data;
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = fwd(x[i]);
    }
    if (!g_grad_enabled || !input.requires_grad()) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {input.impl};
    auto x_impl = input.impl;
    out.impl->backward_fn = [x_impl, dfun](TensorImpl& self) {
        auto& dx = x_impl->grad_ref();
        const auto& dy = self.grad;
        const auto& x = x_impl->data;
        const auto& y = self.data;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dx[i] += dy[i] * dfun(x[i], y[i]);
        }
    };
    return out;
}

} // namespace

Tensor relu(const Tensor& input) {
    return unary_op(
        input, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& input, double negative_slope) {
    return unary_op(
        input, "leaky_relu",
        [negative_slope](double v) { return v > 0.0 ? v : negative_slope * v; },
        [negative_slope](double x, double) {
            return x > 0.0 ? 1.0 : negative_slope;
        });
}

Tensor sigmoid(const Tensor& input) {
    return unary_op(
        input, "sigmoid",
        [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& input) {
    return unary_op(
        input, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor log_op(const Tensor& input) {
    require_defined(input, "log");
    for (double v : input.data()) {
        if (!(v > 0.0)) {
            throw_invalid("log: nonpositive input " + std::to_string(v));
        }
    }
    return unary_op(
        input, "log", [](double v) { return std::log(v); },
        [](double x, double) { return 1.0 / x; });
}

Tensor clamp(const Tensor& input, double lo, double hi) {
    if (lo > hi) {
        throw_invalid("clamp: lo > hi");
    }
    return unary_op(
        input, "clamp",
        [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor scalar_mul(const Tensor& a, double c) {
    return unary_op(
        a, "scalar_mul", [c](double v) { return c * v; },
        [c](double, double) { return c; });
}

Tensor scalar_add(const Tensor& a, double c) {
    return unary_op(
        a, "scalar_add", [c](double v) { return v + c; },
        [](double, double) { return 1.0; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.impl->data;
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] = ad[i] + bd[i];
    }
    if (!g_grad_enabled || !any_requires_grad({&a, &b})) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {a.impl, b.impl};
    auto ai = a.impl;
    auto bi = b.impl;
    out.impl->backward_fn = [ai, bi](TensorImpl& self) {
        const auto& dy = self.grad;
        for (auto& p : {ai, bi}) {
            if (!p->requires_grad) {
                continue;
            }
            auto& dp = p->grad_ref();
            for (std::size_t i = 0; i < dp.size(); ++i) {
                dp[i] += dy[i];
            }
        }
    };
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.impl->data;
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] = ad[i] - bd[i];
    }
    if (!g_grad_enabled || !any_requires_grad({&a, &b})) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {a.impl, b.impl};
    auto ai = a.impl;
    auto bi = b.impl;
    out.impl->backward_fn = [ai, bi](TensorImpl& self) {
        const auto& dy = self.grad;
        if (ai->requires_grad) {
            auto& da = ai->grad_ref();
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += dy[i];
            }
        }
        if (bi->requires_grad) {
            auto& db = bi->grad_ref();
            for (std::size_t i = 0; i < db.size(); ++i) {
                db[i] -= dy[i];
            }
        }
    };
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.impl->data;
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] = ad[i] * bd[i];
    }
    if (!g_grad_enabled || !any_requires_grad({&a, &b})) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {a.impl, b.impl};
    auto ai = a.impl;
    auto bi = b.impl;
    out.impl->backward_fn = [ai, bi](TensorImpl& self) {
        const auto& dy = self.grad;
        if (ai->requires_grad) {
            auto& da = ai->grad_ref();
            const auto& bd = bi->data;
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += dy[i] * bd[i];
            }
        }
        if (bi->requires_grad) {
            auto& db = bi->grad_ref();
            const auto& ad = ai->data;
            for (std::size_t i = 0; i < db.size(); ++i) {
                db[i] += dy[i] * ad[i];
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// pooling and upsampling
// ---------------------------------------------------------------------------

Tensor max_pool(const Tensor& input, int kernel, int stride, int padding) {
    require_defined(input, "max_pool");
    if (kernel < 1) {
        throw_invalid("max_pool: kernel must be >= 1");
    }
    if (stride < 1) {
        throw_invalid("max_pool: stride must be >= 1");
    }
    if (padding < 0) {
        throw_invalid("max_pool: padding must be >= 0");
    }
    const Shape& xs = input.shape();
    if (kernel > xs.h + 2 * padding || kernel > xs.w + 2 * padding) {
        throw_invalid("max_pool: kernel " + std::to_string(kernel) +
                      " larger than padded extent of " + xs.str());
    }
    const std::int64_t oh = (xs.h + 2 * padding - kernel) / stride + 1;
    const std::int64_t ow = (xs.w + 2 * padding - kernel) / stride + 1;
    Tensor out = Tensor::zeros(Shape{xs.n, xs.c, oh, ow});
    // Flat input index of each window maximum; first index wins ties.
    std::vector<std::int64_t> argmax(
        static_cast<std::size_t>(out.numel()), -1);

    const double* xd = input.data().data();
    double* od = out.impl->data.data();
    const std::int64_t planes = xs.n * xs.c;
    parallel_for(0, planes, [&](std::int64_t pl) {
        const double* xp = xd + pl * xs.h * xs.w;
        double* op = od + pl * oh * ow;
        std::int64_t* ap = argmax.data() + pl * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i) {
            for (std::int64_t j = 0; j < ow; ++j) {
                double best = -std::numeric_limits<double>::infinity();
                std::int64_t best_idx = -1;
                for (std::int64_t ki = 0; ki < kernel; ++ki) {
                    const std::int64_t ih = i * stride - padding + ki;
                    if (ih < 0 || ih >= xs.h) {
                        continue;
                    }
                    for (std::int64_t kj = 0; kj < kernel; ++kj) {
                        const std::int64_t iw = j * stride - padding + kj;
                        if (iw < 0 || iw >= xs.w) {
                            continue;
                        }
                        const double v = xp[ih * xs.w + iw];
                        if (v > best) {
                            best = v;
                            best_idx = ih * xs.w + iw;
                        }
                    }
                }
                op[i * ow + j] = best;
                ap[i * ow + j] = best_idx;
            }
        }
    });

    if (!g_grad_enabled || !input.requires_grad()) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {input.impl};
    auto x_impl = input.impl;
    const std::int64_t plane_in = xs.h * xs.w;
    const std::int64_t plane_out = oh * ow;
    out.impl->backward_fn = [x_impl, argmax = std::move(argmax), planes,
                             plane_in, plane_out](TensorImpl& self) {
        auto& dx = x_impl->grad_ref();
        const auto& dy = self.grad;
        for (std::int64_t pl = 0; pl < planes; ++pl) {
            const std::int64_t* ap = argmax.data() + pl * plane_out;
            const double* dyp = dy.data() + pl * plane_out;
            double* dxp = dx.data() + pl * plane_in;
            for (std::int64_t i = 0; i < plane_out; ++i) {
                if (ap[i] >= 0) {
                    dxp[ap[i]] += dyp[i];
                }
            }
        }
    };
    return out;
}

namespace {

Tensor upsample_impl(const Tensor& input, int n, bool direct_copy,
                     const char* name) {
    require_defined(input, name);
    if (n < 1) {
        throw_invalid(std::string(name) + ": scale must be >= 1");
    }
    const Shape& xs = input.shape();
    Tensor out = Tensor::zeros(Shape{xs.n, xs.c, xs.h * n, xs.w * n});
    const double* xd = input.data().data();
    double* od = out.impl->data.data();
    const std::int64_t planes = xs.n * xs.c;
    const std::int64_t oh = xs.h * n;
    const std::int64_t ow = xs.w * n;
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        const double* xp = xd + pl * xs.h * xs.w;
        double* op = od + pl * oh * ow;
        for (std::int64_t i = 0; i < xs.h; ++i) {
            for (std::int64_t j = 0; j < xs.w; ++j) {
                const double v = xp[i * xs.w + j];
                if (direct_copy) {
                    for (std::int64_t di = 0; di < n; ++di) {
                        double* row = op + (i * n + di) * ow + j * n;
                        for (std::int64_t dj = 0; dj < n; ++dj) {
                            row[dj] = v;
                        }
                    }
                } else {
                    op[(i * n) * ow + j * n] = v;
                }
            }
        }
    }
    if (!g_grad_enabled || !input.requires_grad()) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {input.impl};
    auto x_impl = input.impl;
    const std::int64_t scale = n;
    out.impl->backward_fn = [x_impl, scale, direct_copy, planes,
                             xs](TensorImpl& self) {
        auto& dx = x_impl->grad_ref();
        const auto& dy = self.grad;
        const std::int64_t ow = xs.w * scale;
        for (std::int64_t pl = 0; pl < planes; ++pl) {
            const double* dyp = dy.data() + pl * xs.h * scale * ow;
            double* dxp = dx.data() + pl * xs.h * xs.w;
            for (std::int64_t i = 0; i < xs.h; ++i) {
                for (std::int64_t j = 0; j < xs.w; ++j) {
                    if (direct_copy) {
                        double s = 0.0;
                        for (std::int64_t di = 0; di < scale; ++di) {
                            const double* row =
                                dyp + (i * scale + di) * ow + j * scale;
                            for (std::int64_t dj = 0; dj < scale; ++dj) {
                                s += row[dj];
                            }
                        }
                        dxp[i * xs.w + j] += s;
                    } else {
                        dxp[i * xs.w + j] += dyp[(i * scale) * ow + j * scale];
                    }
                }
            }
        }
    };
    return out;
}

} // namespace

Tensor upsample_zero_pad(const Tensor& input, int n) {
    return upsample_impl(input, n, false, "upsample_zero_pad");
}

Tensor upsample_direct_copy(const Tensor& input, int n) {
    return upsample_impl(input, n, true, "upsample_direct_copy");
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& input) {
    require_defined(input, "sum_all");
    double s = 0.0;
    for (double v : input.data()) {
        s += v;
    }
    Tensor out = Tensor::scalar(s);
    if (!g_grad_enabled || !input.requires_grad()) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {input.impl};
    auto x_impl = input.impl;
    out.impl->backward_fn = [x_impl](TensorImpl& self) {
        const double g = self.grad[0];
        auto& dx = x_impl->grad_ref();
        for (double& v : dx) {
            v += g;
        }
    };
    return out;
}

Tensor mean_all(const Tensor& input) {
    require_defined(input, "mean_all");
    const std::int64_t n = input.numel();
    if (n == 0) {
        throw_invalid("mean_all: empty tensor");
    }
    double s = 0.0;
    for (double v : input.data()) {
        s += v;
    }
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    if (!g_grad_enabled || !input.requires_grad()) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {input.impl};
    auto x_impl = input.impl;
    const double inv = 1.0 / static_cast<double>(n);
    out.impl->backward_fn = [x_impl, inv](TensorImpl& self) {
        const double g = self.grad[0] * inv;
        auto& dx = x_impl->grad_ref();
        for (double& v : dx) {
            v += g;
        }
    };
    return out;
}

Tensor mean_abs_diff(const Tensor& a, const Tensor& b) {
    require_defined(a, "mean_abs_diff");
    require_defined(b, "mean_abs_diff");
    require_same_shape(a, b, "mean_abs_diff");
    const std::int64_t n = a.numel();
    if (n == 0) {
        throw_invalid("mean_abs_diff: empty tensor");
    }
    const auto& ad = a.data();
    const auto& bd = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) {
        s += std::abs(ad[i] - bd[i]);
    }
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    if (!g_grad_enabled || !any_requires_grad({&a, &b})) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {a.impl, b.impl};
    auto ai = a.impl;
    auto bi = b.impl;
    const double inv = 1.0 / static_cast<double>(n);
    out.impl->backward_fn = [ai, bi, inv](TensorImpl& self) {
        const double g = self.grad[0] * inv;
        const auto& ad = ai->data;
        const auto& bd = bi->data;
        for (std::size_t i = 0; i < ad.size(); ++i) {
            const double diff = ad[i] - bd[i];
            const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            if (ai->requires_grad) {
                ai->grad_ref()[i] += g * sgn;
            }
            if (bi->requires_grad) {
                bi->grad_ref()[i] -= g * sgn;
            }
        }
    };
    return out;
}

Tensor detach(const Tensor& input) {
    require_defined(input, "detach");
    return input.clone(false);
}

Tensor softmax_cross_entropy(const Tensor& logits, const LabelMap& labels,
                             int ignore_index) {
    require_defined(logits, "softmax_cross_entropy");
    const Shape& ls = logits.shape();
    if (labels.n != ls.n || labels.h != ls.h || labels.w != ls.w) {
        throw_invalid("softmax_cross_entropy: labels (" +
                      std::to_string(labels.n) + "," + std::to_string(labels.h) +
                      "," + std::to_string(labels.w) +
                      ") do not match logits " + ls.str());
    }
    const int k = static_cast<int>(ls.c);
    const std::int64_t hw = ls.h * ls.w;
    std::int64_t count = 0;
    for (int v : labels.values) {
        if (v == ignore_index) {
            continue;
        }
        if (v < 0 || v >= k) {
            throw_invalid("softmax_cross_entropy: label " + std::to_string(v) +
                          " out of range for " + std::to_string(k) + " classes");
        }
        ++count;
    }
    if (count == 0) {
        throw_invalid("softmax_cross_entropy: every pixel is ignored");
    }

    const double* xd = logits.data().data();
    double total = 0.0;
    for (std::int64_t n = 0; n < ls.n; ++n) {
        for (std::int64_t px = 0; px < hw; ++px) {
            const int label = labels.values[static_cast<std::size_t>(n * hw + px)];
            if (label == ignore_index) {
                continue;
            }
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                mx = std::max(mx, xd[(n * k + c) * hw + px]);
            }
            double se = 0.0;
            for (int c = 0; c < k; ++c) {
                se += std::exp(xd[(n * k + c) * hw + px] - mx);
            }
            const double lse = mx + std::log(se);
            total += lse - xd[(n * k + label) * hw + px];
        }
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(count));
    if (!g_grad_enabled || !logits.requires_grad()) {
        return out;
    }
    out.impl->requires_grad = true;
    out.impl->parents = {logits.impl};
    auto l_impl = logits.impl;
    auto values = labels.values;
    const double inv = 1.0 / static_cast<double>(count);
    out.impl->backward_fn = [l_impl, values = std::move(values), ignore_index,
                             k, hw, inv](TensorImpl& self) {
        const double g = self.grad[0] * inv;
        const double* xd = l_impl->data.data();
        auto& dx = l_impl->grad_ref();
        const std::int64_t batch = l_impl->shape.n;
        for (std::int64_t n = 0; n < batch; ++n) {
            for (std::int64_t px = 0; px < hw; ++px) {
                const int label = values[static_cast<std::size_t>(n * hw + px)];
                if (label == ignore_index) {
                    continue;
                }
                double mx = -std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    mx = std::max(mx, xd[(n * k + c) * hw + px]);
                }
                double se = 0.0;
                for (int c = 0; c < k; ++c) {
                    se += std::exp(xd[(n * k + c) * hw + px] - mx);
                }
                for (int c = 0; c < k; ++c) {
                    const double p = std::exp(xd[(n * k + c) * hw + px] - mx) / se;
                    const double target = c == label ? 1.0 : 0.0;
                    dx[(n * k + c) * hw + px] += g * (p - target);
                }
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// reverse sweep
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    require_defined(loss, "backward");
    if (loss.numel() != 1) {
        throw_invalid("backward: expected scalar loss, got shape " +
                      loss.shape().str());
    }
    if (!loss.impl->requires_grad) {
        return;
    }

    // Iterative DFS postorder; reversed it is a topological order.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        TensorImpl* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.impl.get(), 0});
    visited.insert(loss.impl.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorImpl* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.impl->grad_ref()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
}

} // namespace oseg
