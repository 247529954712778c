#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "flexedit/tensor.hpp"

namespace flexedit {

// Uniform in (0,1).  Hand-rolled on top of mt19937_64 so streams are
// bit-identical across standard libraries.
inline double unit_uniform(std::mt19937_64 &g) {
    return ((g() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

// Box-Muller standard normal.
inline double unit_normal(std::mt19937_64 &g) {
    double u1 = unit_uniform(g);
    double u2 = unit_uniform(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline void fill_normal(std::vector<float> &v, std::mt19937_64 &g, float scale = 1.0f) {
    for (float &x : v)
        x = scale * static_cast<float>(unit_normal(g));
}

inline void fill_normal(Tensor3 &t, std::mt19937_64 &g, float scale = 1.0f) {
    fill_normal(t.v, g, scale);
}

} // namespace flexedit
