#pragma once

#include <array>
#include <cmath>
#include <optional>

#include "flexedit/edit_task.hpp"
#include "flexedit/tensor.hpp"

namespace flexedit {

// Logistic relaxation of thresholding at beta, so mask geometry stays
// differentiable in the underlying map.
inline Map2D soft_mask(const Map2D &values, float beta, float temperature) {
    if (!(temperature > 0.0f))
        throw std::invalid_argument("soft_mask: temperature must be positive");
    if (!(beta >= 0.0f && beta <= 1.0f))
        throw std::invalid_argument("soft_mask: beta must lie in [0,1]");
    if (values.h <= 0 || values.w <= 0)
        throw std::invalid_argument("soft_mask: empty map");
    Map2D out(values.h, values.w);
    for (size_t i = 0; i < values.v.size(); ++i) {
        const double a = (static_cast<double>(values.v[i]) - beta) / temperature;
        out.v[i] = static_cast<float>(1.0 / (1.0 + std::exp(-a)));
    }
    return out;
}

// Mass-weighted centroid (x then y, in pixel units) and area fraction.
// A zero-mass mask has no centroid.
struct ObjectGeometry {
    std::optional<std::array<double, 2>> centroid; // {x, y}
    double size = 0.0;
};

inline ObjectGeometry geometry(const Map2D &mask) {
    if (mask.h <= 0 || mask.w <= 0)
        throw std::invalid_argument("geometry: empty mask");
    double mass = 0.0, sx = 0.0, sy = 0.0;
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            const double m = mask.at(y, x);
            mass += m;
            sx += static_cast<double>(x) * m;
            sy += static_cast<double>(y) * m;
        }
    ObjectGeometry g;
    g.size = mass / (static_cast<double>(mask.h) * mask.w);
    if (mass > 0.0)
        g.centroid = std::array<double, 2>{sx / mass, sy / mass};
    return g;
}

inline ObjectGeometry geometry(const Mask2D &mask) {
    Map2D f(mask.h, mask.w);
    for (size_t i = 0; i < mask.v.size(); ++i)
        f.v[i] = mask.v[i] ? 1.0f : 0.0f;
    return geometry(f);
}

// Desired placement, in units of the mask grid: centroid as fractions of
// width/height, size as an area fraction.
struct ConstraintTargets {
    std::optional<std::array<double, 2>> centroid;
    std::optional<double> size;
};

inline void validate_targets(const ConstraintTargets &t) {
    if (t.centroid) {
        for (double c : *t.centroid)
            if (!(c >= 0.0 && c <= 1.0))
                throw std::invalid_argument("targets: centroid must lie in [0,1]^2");
    }
    if (t.size && !(*t.size > 0.0 && *t.size <= 1.0))
        throw std::invalid_argument("targets: size must lie in (0,1]");
}

// Squared distance between normalized centroids.
inline double loss_pos(const ObjectGeometry &g, int H, int W,
                       const std::array<double, 2> &target) {
    if (H <= 0 || W <= 0)
        throw std::invalid_argument("loss_pos: dims must be positive");
    if (!g.centroid)
        throw std::invalid_argument("loss_pos: mask has no centroid");
    const double dx = (*g.centroid)[0] / W - target[0];
    const double dy = (*g.centroid)[1] / H - target[1];
    return dx * dx + dy * dy;
}

inline double loss_size(const ObjectGeometry &g, double target) {
    const double d = g.size - target;
    return d * d;
}

// Cosine similarity between a soft target map and the union of existing
// object masks.  Either side empty means no overlap pressure.
inline double loss_sep(const Map2D &target_soft, const Mask2D &existing) {
    if (target_soft.h != existing.h || target_soft.w != existing.w)
        throw std::invalid_argument("loss_sep: map and mask differ in size");
    double dot = 0.0, nf = 0.0, ng = 0.0;
    for (size_t i = 0; i < target_soft.v.size(); ++i) {
        const double f = target_soft.v[i];
        const double g = existing.v[i] ? 1.0 : 0.0;
        dot += f * g;
        nf += f * f;
        ng += g * g;
    }
    if (nf <= 0.0 || ng <= 0.0)
        return 0.0;
    return dot / (std::sqrt(nf) * std::sqrt(ng));
}

struct LossBreakdown {
    std::optional<double> pos;
    std::optional<double> size;
    std::optional<double> sep;
    double optim = 0.0;
};

// Task-dependent combination.  Replacement sums whichever geometric terms
// have targets; addition needs the separation term; removal optimizes
// nothing and relies on blending alone.
inline LossBreakdown combine_losses(TaskKind kind, const LossBreakdown &parts) {
    LossBreakdown out = parts;
    switch (kind) {
    case TaskKind::replace:
        out.optim = (parts.pos ? *parts.pos : 0.0) + (parts.size ? *parts.size : 0.0);
        break;
    case TaskKind::add:
        if (!parts.sep)
            throw std::invalid_argument(
                "combine_losses: add task needs an existing-object mask for the separation term");
        out.optim = *parts.sep;
        break;
    case TaskKind::remove:
        out.optim = 0.0;
        break;
    }
    return out;
}

// Analytic gradients of the losses with respect to the raw map feeding
// soft_mask.  Everything is accumulated in double; the derivations chain
// d(sigmoid)/dm = s(1-s)/temperature through the geometry terms.
namespace detail {

struct SoftStats {
    std::vector<double> s;      // soft mask values
    std::vector<double> dsdm;   // elementwise derivative
    double mass = 0.0, cx = 0.0, cy = 0.0;
};

inline SoftStats soft_stats(const Map2D &raw, float beta, float temperature) {
    Map2D sm = soft_mask(raw, beta, temperature);
    SoftStats st;
    st.s.resize(sm.v.size());
    st.dsdm.resize(sm.v.size());
    double sx = 0.0, sy = 0.0;
    for (int y = 0; y < sm.h; ++y)
        for (int x = 0; x < sm.w; ++x) {
            const size_t i = static_cast<size_t>(y) * sm.w + x;
            const double s = sm.v[i];
            st.s[i] = s;
            st.dsdm[i] = s * (1.0 - s) / temperature;
            st.mass += s;
            sx += x * s;
            sy += y * s;
        }
    if (st.mass > 0.0) {
        st.cx = sx / st.mass;
        st.cy = sy / st.mass;
    }
    return st;
}

} // namespace detail

inline Map2D grad_loss_pos(const Map2D &raw, float beta, float temperature,
                           const std::array<double, 2> &target) {
    detail::SoftStats st = detail::soft_stats(raw, beta, temperature);
    const int H = raw.h, W = raw.w;
    Map2D g(H, W);
    if (st.mass <= 0.0)
        return g;
    const double ax = 2.0 * (st.cx / W - target[0]) / W;
    const double ay = 2.0 * (st.cy / H - target[1]) / H;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const size_t i = static_cast<size_t>(y) * W + x;
            const double dldz = ax * (x - st.cx) / st.mass + ay * (y - st.cy) / st.mass;
            g.v[i] = static_cast<float>(dldz * st.dsdm[i]);
        }
    return g;
}

inline Map2D grad_loss_size(const Map2D &raw, float beta, float temperature, double target) {
    detail::SoftStats st = detail::soft_stats(raw, beta, temperature);
    const double hw = static_cast<double>(raw.h) * raw.w;
    const double coeff = 2.0 * (st.mass / hw - target) / hw;
    Map2D g(raw.h, raw.w);
    for (size_t i = 0; i < g.v.size(); ++i)
        g.v[i] = static_cast<float>(coeff * st.dsdm[i]);
    return g;
}

inline Map2D grad_loss_sep(const Map2D &raw, float beta, float temperature,
                           const Mask2D &existing) {
    if (raw.h != existing.h || raw.w != existing.w)
        throw std::invalid_argument("grad_loss_sep: map and mask differ in size");
    detail::SoftStats st = detail::soft_stats(raw, beta, temperature);
    Map2D g(raw.h, raw.w);
    double dot = 0.0, nf2 = 0.0, ng2 = 0.0;
    for (size_t i = 0; i < st.s.size(); ++i) {
        const double gm = existing.v[i] ? 1.0 : 0.0;
        dot += st.s[i] * gm;
        nf2 += st.s[i] * st.s[i];
        ng2 += gm;
    }
    if (nf2 <= 0.0 || ng2 <= 0.0)
        return g;
    const double nf = std::sqrt(nf2), ng = std::sqrt(ng2);
    for (size_t i = 0; i < st.s.size(); ++i) {
        const double gm = existing.v[i] ? 1.0 : 0.0;
        const double dldf = gm / (nf * ng) - dot * st.s[i] / (nf * nf * nf * ng);
        g.v[i] = static_cast<float>(dldf * st.dsdm[i]);
    }
    return g;
}

} // namespace flexedit
