#include "core/layers.hpp"

#include <cmath>

#include "core/error.hpp"

namespace oseg {

namespace {

Tensor he_uniform_kernel(std::int64_t out_ch, std::int64_t in_ch, int kernel,
                         Rng& rng) {
    Tensor t = Tensor::zeros({out_ch, in_ch, kernel, kernel});
    const double fan_in = static_cast<double>(in_ch) * kernel * kernel;
    const double limit = std::sqrt(6.0 / fan_in);
    for (auto& v : t.data()) {
        v = rng.uniform(-limit, limit);
    }
    return t;
}

void check_conv_dims(std::int64_t out_ch, std::int64_t in_ch, int kernel) {
    if (out_ch < 1 || in_ch < 1 || kernel < 1) {
        throw_invalid("conv registration needs positive channel counts and kernel");
    }
}

} // namespace

ConvWeights register_conv(ParamStore& ps, const std::string& prefix,
                          std::int64_t out_ch, std::int64_t in_ch, int kernel,
                          Rng& rng) {
    check_conv_dims(out_ch, in_ch, kernel);
    ConvWeights w;
    w.kernel = ps.add(prefix + ".kernel", he_uniform_kernel(out_ch, in_ch, kernel, rng));
    w.bias = ps.add(prefix + ".bias", Tensor::zeros({1, out_ch, 1, 1}));
    return w;
}

ConvWeights register_conv_zero(ParamStore& ps, const std::string& prefix,
                               std::int64_t out_ch, std::int64_t in_ch,
                               int kernel) {
    check_conv_dims(out_ch, in_ch, kernel);
    ConvWeights w;
    w.kernel = ps.add(prefix + ".kernel", Tensor::zeros({out_ch, in_ch, kernel, kernel}));
    w.bias = ps.add(prefix + ".bias", Tensor::zeros({1, out_ch, 1, 1}));
    return w;
}

BatchNormState register_bn(ParamStore& ps, const std::string& prefix,
                           std::int64_t channels) {
    if (channels < 1) {
        throw_invalid("batch norm registration needs a positive channel count");
    }
    BatchNormState s;
    s.gamma = ps.add(prefix + ".gamma", Tensor::full({1, channels, 1, 1}, 1.0));
    s.beta = ps.add(prefix + ".beta", Tensor::zeros({1, channels, 1, 1}));
    s.running_mean =
        ps.add(prefix + ".running_mean", Tensor::zeros({1, channels, 1, 1}), false);
    s.running_var =
        ps.add(prefix + ".running_var", Tensor::full({1, channels, 1, 1}, 1.0), false);
    return s;
}

} // namespace oseg
