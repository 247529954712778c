#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexedit {

// 2-D float grid, row-major.
struct Map2D {
    int h = 0;
    int w = 0;
    std::vector<float> v;

    Map2D() = default;
    Map2D(int h_, int w_, float fill = 0.0f) : h(h_), w(w_) {
        if (h_ <= 0 || w_ <= 0)
            throw std::invalid_argument("Map2D: dimensions must be positive");
        v.assign(static_cast<size_t>(h_) * w_, fill);
    }

    float &at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
    bool same_shape(const Map2D &o) const { return h == o.h && w == o.w; }
};

// 2-D binary mask, 0/1 entries.
struct Mask2D {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> v;

    Mask2D() = default;
    Mask2D(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_) {
        if (h_ <= 0 || w_ <= 0)
            throw std::invalid_argument("Mask2D: dimensions must be positive");
        v.assign(static_cast<size_t>(h_) * w_, fill ? 1 : 0);
    }

    uint8_t &at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
    bool same_shape(const Mask2D &o) const { return h == o.h && w == o.w; }

    size_t area() const {
        size_t n = 0;
        for (uint8_t b : v) n += b ? 1 : 0;
        return n;
    }
    bool any() const { return area() > 0; }
};

// Rank-3 float array, [channel][row][col], row-major within a channel.
struct Tensor3 {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_, float fill = 0.0f) : c(c_), h(h_), w(w_) {
        if (c_ <= 0 || h_ <= 0 || w_ <= 0)
            throw std::invalid_argument("Tensor3: dimensions must be positive");
        v.assign(static_cast<size_t>(c_) * h_ * w_, fill);
    }

    float &at(int ch, int y, int x) {
        return v[(static_cast<size_t>(ch) * h + y) * w + x];
    }
    float at(int ch, int y, int x) const {
        return v[(static_cast<size_t>(ch) * h + y) * w + x];
    }
    size_t numel() const { return v.size(); }
    bool same_shape(const Tensor3 &o) const { return c == o.c && h == o.h && w == o.w; }
};

inline bool all_finite(const std::vector<float> &v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Tensor3 &t) { return all_finite(t.v); }
inline bool all_finite(const Map2D &m) { return all_finite(m.v); }

inline float max_abs_diff(const Tensor3 &a, const Tensor3 &b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("max_abs_diff: shape mismatch");
    float m = 0.0f;
    for (size_t i = 0; i < a.v.size(); ++i)
        m = std::max(m, std::fabs(a.v[i] - b.v[i]));
    return m;
}

inline Map2D nearest_resize(const Map2D &src, int nh, int nw) {
    if (nh <= 0 || nw <= 0)
        throw std::invalid_argument("nearest_resize: target dimensions must be positive");
    Map2D dst(nh, nw);
    for (int y = 0; y < nh; ++y) {
        int sy = std::min(static_cast<int>((static_cast<int64_t>(y) * src.h) / nh), src.h - 1);
        for (int x = 0; x < nw; ++x) {
            int sx = std::min(static_cast<int>((static_cast<int64_t>(x) * src.w) / nw), src.w - 1);
            dst.at(y, x) = src.at(sy, sx);
        }
    }
    return dst;
}

inline Mask2D nearest_resize(const Mask2D &src, int nh, int nw) {
    if (nh <= 0 || nw <= 0)
        throw std::invalid_argument("nearest_resize: target dimensions must be positive");
    Mask2D dst(nh, nw);
    for (int y = 0; y < nh; ++y) {
        int sy = std::min(static_cast<int>((static_cast<int64_t>(y) * src.h) / nh), src.h - 1);
        for (int x = 0; x < nw; ++x) {
            int sx = std::min(static_cast<int>((static_cast<int64_t>(x) * src.w) / nw), src.w - 1);
            dst.at(y, x) = src.at(sy, sx);
        }
    }
    return dst;
}

// FNV-1a, used for stable sample ids and seed derivation.
inline uint64_t fnv1a64(const void *data, size_t n, uint64_t h = 14695981039346656037ull) {
    const auto *p = static_cast<const uint8_t *>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string &s, uint64_t h = 14695981039346656037ull) {
    return fnv1a64(s.data(), s.size(), h);
}

} // namespace flexedit
