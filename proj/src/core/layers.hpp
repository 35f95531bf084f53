#pragma once

#include <cstdint>
#include <string>

#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace oseg {

// He-uniform kernel with a zero bias, registered as "<prefix>.kernel" and
// "<prefix>.bias". Kernel values are drawn in row-major order.
ConvWeights register_conv(ParamStore& ps, const std::string& prefix,
                          std::int64_t out_ch, std::int64_t in_ch, int kernel,
                          Rng& rng);

// All-zero kernel and bias, for identity-style initialization.
ConvWeights register_conv_zero(ParamStore& ps, const std::string& prefix,
                               std::int64_t out_ch, std::int64_t in_ch,
                               int kernel);

// gamma=1, beta=0, running mean 0, running variance 1. The running buffers
// are registered as non-trainable so they serialize but never take gradient
// steps.
BatchNormState register_bn(ParamStore& ps, const std::string& prefix,
                           std::int64_t channels);

} // namespace oseg
