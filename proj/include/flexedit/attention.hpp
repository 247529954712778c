#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "flexedit/tensor.hpp"

namespace flexedit {

// Attention captured during one denoiser evaluation.
// cross[j][l]: coarse-resolution map for prompt token j at cross layer l.
// self_attn[l]: square row-stochastic matrix over fine pixels at self layer l.
struct AttentionRecord {
    int timestep = 0;
    std::vector<std::vector<Map2D>> cross;
    std::vector<Map2D> self_attn;
};

struct RefinedMap {
    Map2D values;
    int token = -1;
    int timestep = -1;
};

struct DynamicMask {
    Mask2D bits;
    int token = -1;
    int timestep = -1;
};

struct AveragedMaps {
    std::vector<Map2D> cross;
    Map2D self_attn;
};

inline void validate_record(const AttentionRecord &rec) {
    if (rec.cross.empty())
        throw std::invalid_argument("attention record has no cross maps");
    if (rec.self_attn.empty())
        throw std::invalid_argument("attention record has no self maps");
    for (const auto &layers : rec.cross)
        if (layers.empty())
            throw std::invalid_argument("attention record: token with no cross layers");
    const Map2D &c0 = rec.cross.front().front();
    if (c0.h <= 0 || c0.w <= 0)
        throw std::invalid_argument("attention record: empty cross map");
    for (const auto &layers : rec.cross)
        for (const Map2D &m : layers)
            if (!m.same_shape(c0))
                throw std::invalid_argument("attention record: cross map shape mismatch");
    const Map2D &s0 = rec.self_attn.front();
    if (s0.h != s0.w)
        throw std::invalid_argument("attention record: self matrix not square");
    for (const Map2D &m : rec.self_attn)
        if (!m.same_shape(s0))
            throw std::invalid_argument("attention record: self matrix shape mismatch");
}

// Per-token mean over cross layers and mean over self layers.
inline AveragedMaps average_maps(const AttentionRecord &rec) {
    validate_record(rec);
    AveragedMaps out;
    out.cross.reserve(rec.cross.size());
    for (const auto &layers : rec.cross) {
        Map2D acc(layers.front().h, layers.front().w);
        for (const Map2D &m : layers)
            for (size_t i = 0; i < acc.v.size(); ++i)
                acc.v[i] += m.v[i];
        const float inv = 1.0f / static_cast<float>(layers.size());
        for (float &x : acc.v) x *= inv;
        out.cross.push_back(std::move(acc));
    }
    {
        const auto &layers = rec.self_attn;
        Map2D acc(layers.front().h, layers.front().w);
        for (const Map2D &m : layers)
            for (size_t i = 0; i < acc.v.size(); ++i)
                acc.v[i] += m.v[i];
        const float inv = 1.0f / static_cast<float>(layers.size());
        for (float &x : acc.v) x *= inv;
        out.self_attn = std::move(acc);
    }
    return out;
}

// One application of a square attention matrix to a flattened map.
inline std::vector<float> apply_attention(const Map2D &mat, const std::vector<float> &vec) {
    if (mat.h != mat.w || static_cast<size_t>(mat.h) != vec.size())
        throw std::invalid_argument("apply_attention: dimension mismatch");
    std::vector<float> out(vec.size(), 0.0f);
    for (int i = 0; i < mat.h; ++i) {
        double acc = 0.0;
        const float *row = mat.v.data() + static_cast<size_t>(i) * mat.w;
        for (int j = 0; j < mat.w; ++j)
            acc += static_cast<double>(row[j]) * vec[j];
        out[i] = static_cast<float>(acc);
    }
    return out;
}

// Smooths a coarse cross map with tau rounds of self attention, then
// rescales to [0,1].  A constant result maps to all zeros.
inline RefinedMap refine(const Map2D &cross, const Map2D &self_attn, int tau) {
    if (tau < 0)
        throw std::invalid_argument("refine: tau must be non-negative");
    if (self_attn.h != self_attn.w)
        throw std::invalid_argument("refine: self matrix not square");
    const int n = self_attn.h;
    const int coarse_px = cross.h * cross.w;
    if (coarse_px <= 0)
        throw std::invalid_argument("refine: empty cross map");
    if (n % coarse_px != 0)
        throw std::invalid_argument("refine: self size not a multiple of cross size");
    const int s2 = n / coarse_px;
    const int scale = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s2))));
    if (scale * scale != s2)
        throw std::invalid_argument("refine: cross/self resolutions not related by an integer scale");

    const int fh = cross.h * scale;
    const int fw = cross.w * scale;
    Map2D up = nearest_resize(cross, fh, fw);

    std::vector<float> vec = up.v;
    for (int r = 0; r < tau; ++r)
        vec = apply_attention(self_attn, vec);

    float lo = vec[0], hi = vec[0];
    for (float x : vec) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    RefinedMap out;
    out.values = Map2D(fh, fw);
    if (hi > lo) {
        const float inv = 1.0f / (hi - lo);
        for (size_t i = 0; i < vec.size(); ++i)
            out.values.v[i] = (vec[i] - lo) * inv;
    }
    return out;
}

inline DynamicMask binarize(const RefinedMap &map, float beta) {
    if (!(beta >= 0.0f && beta <= 1.0f))
        throw std::invalid_argument("binarize: beta must lie in [0,1]");
    DynamicMask out;
    out.token = map.token;
    out.timestep = map.timestep;
    out.bits = Mask2D(map.values.h, map.values.w);
    for (size_t i = 0; i < map.values.v.size(); ++i)
        out.bits.v[i] = map.values.v[i] > beta ? 1 : 0;
    return out;
}

inline RefinedMap refined_map_for_token(const AttentionRecord &rec, int token, int tau) {
    if (token < 0 || static_cast<size_t>(token) >= rec.cross.size())
        throw std::out_of_range("refined_map_for_token: token index out of range");
    AveragedMaps avg = average_maps(rec);
    RefinedMap map = refine(avg.cross[token], avg.self_attn, tau);
    map.token = token;
    map.timestep = rec.timestep;
    return map;
}

inline DynamicMask dynamic_mask(const AttentionRecord &rec, int token, int tau, float beta) {
    return binarize(refined_map_for_token(rec, token, tau), beta);
}

inline bool is_row_stochastic(const Map2D &mat, float tol) {
    for (int i = 0; i < mat.h; ++i) {
        double sum = 0.0;
        for (int j = 0; j < mat.w; ++j) {
            float a = mat.at(i, j);
            if (a < 0.0f) return false;
            sum += a;
        }
        if (std::fabs(sum - 1.0) > tol) return false;
    }
    return true;
}

} // namespace flexedit
