// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace sparsegrid {

// Branch-light expf: range reduction by ln 2 plus a degree-5 polynomial
// remainder (max relative error ~3e-8). Softmax feeds it max-subtracted
// logits, so arguments are <= 0; anything below -87 flushes to exactly 0,
// which makes masked-out weights exactly zero after normalization.
inline float fast_exp(float x) {
    const float z = std::floor(1.44269504088896341f * x + 0.5f);
    float r = x - z * 0.693359375f;
    r -= z * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    const int zi = static_cast<int>(z);
    const float scale = std::bit_cast<float>(static_cast<uint32_t>(zi + 127) << 23);
    return x < -87.0f ? 0.0f : p * scale;
}

inline float gelu(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.7071067811865475f));
}

} // namespace sparsegrid
