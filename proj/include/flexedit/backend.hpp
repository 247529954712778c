#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flexedit/attention.hpp"
#include "flexedit/image.hpp"
#include "flexedit/tensor.hpp"

namespace flexedit {

// Latent variable at a diffusion level.  timestep 0 is the clean latent.
struct Latent {
    Tensor3 data;
    int timestep = 0;
};

struct NoiseSchedule {
    int T = 0;
    std::vector<float> alpha_bar; // length T+1, alpha_bar[0] == 1
    float guidance = 7.5f;
};

inline void validate_schedule(const NoiseSchedule &s) {
    if (s.T < 1)
        throw std::invalid_argument("schedule: T must be at least 1");
    if (s.alpha_bar.size() != static_cast<size_t>(s.T) + 1)
        throw std::invalid_argument("schedule: alpha_bar must have length T+1");
    if (std::fabs(s.alpha_bar[0] - 1.0f) > 1e-6f)
        throw std::invalid_argument("schedule: alpha_bar[0] must equal 1");
    for (int t = 0; t <= s.T; ++t) {
        float a = s.alpha_bar[t];
        if (!(a > 0.0f && a <= 1.0f))
            throw std::invalid_argument("schedule: alpha_bar values must lie in (0,1]");
        if (t > 0 && !(a < s.alpha_bar[t - 1]))
            throw std::invalid_argument("schedule: alpha_bar must be strictly decreasing");
    }
    if (!(s.guidance >= 0.0f))
        throw std::invalid_argument("schedule: guidance must be non-negative");
}

inline NoiseSchedule make_linear_schedule(int T, float alpha_bar_end = 0.01f,
                                          float guidance = 7.5f) {
    if (T < 1)
        throw std::invalid_argument("make_linear_schedule: T must be at least 1");
    if (!(alpha_bar_end > 0.0f && alpha_bar_end < 1.0f))
        throw std::invalid_argument("make_linear_schedule: alpha_bar_end must lie in (0,1)");
    NoiseSchedule s;
    s.T = T;
    s.guidance = guidance;
    s.alpha_bar.resize(T + 1);
    for (int t = 0; t <= T; ++t)
        s.alpha_bar[t] = 1.0f - (static_cast<float>(t) / T) * (1.0f - alpha_bar_end);
    return s;
}

// Prompt embedding, one row per token.
struct TextEmbedding {
    std::string prompt;
    std::vector<std::string> tokens;
    int dim = 0;
    std::vector<float> data; // tokens.size() * dim, row-major

    std::optional<int> token_index(const std::string &tok) const {
        for (size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i] == tok) return static_cast<int>(i);
        return std::nullopt;
    }
};

inline void validate_embedding(const TextEmbedding &e) {
    if (e.tokens.empty())
        throw std::invalid_argument("embedding: no tokens");
    if (e.dim <= 0 || e.data.size() != e.tokens.size() * static_cast<size_t>(e.dim))
        throw std::invalid_argument("embedding: row count does not match token count");
}

struct NoisePrediction {
    Tensor3 eps;
    AttentionRecord attention;
};

class DenoiserBackend {
public:
    virtual ~DenoiserBackend() = default;
    virtual std::string name() const = 0;
    virtual TextEmbedding encode_text(const std::string &prompt) const = 0;
    virtual NoisePrediction predict_noise(const Latent &z, int t,
                                          const TextEmbedding &text) const = 0;
    // Gradient of an arbitrary scalar loss of the latent, same shape as the latent.
    virtual Tensor3 gradient_oracle(const std::function<double(const Latent &)> &loss,
                                    const Latent &z) const = 0;
};

class ImageCodec {
public:
    virtual ~ImageCodec() = default;
    virtual std::string name() const = 0;
    virtual Latent encode(const Image &im) const = 0;
    virtual Image decode(const Latent &z) const = 0;
};

namespace detail {

inline Latent ddim_step(const Latent &z, const Tensor3 &eps, int from, int to,
                        const NoiseSchedule &s) {
    if (!z.data.same_shape(eps))
        throw std::invalid_argument("ddim step: eps shape does not match latent");
    if (z.timestep != from)
        throw std::invalid_argument("ddim step: latent timestep does not match step argument");
    const float a_from = s.alpha_bar[from];
    const float a_to = s.alpha_bar[to];
    const float c0 = std::sqrt(a_to / a_from);
    const float ce = std::sqrt(1.0f - a_to) - c0 * std::sqrt(1.0f - a_from);
    Latent out;
    out.timestep = to;
    out.data = Tensor3(z.data.c, z.data.h, z.data.w);
    for (size_t i = 0; i < z.data.v.size(); ++i)
        out.data.v[i] = c0 * z.data.v[i] + ce * eps.v[i];
    return out;
}

} // namespace detail

// z_t -> z_{t+1} under the deterministic (eta 0) update.
inline Latent ddim_invert_step(const Latent &z, const Tensor3 &eps, int t,
                               const NoiseSchedule &s) {
    validate_schedule(s);
    if (t < 0 || t >= s.T)
        throw std::out_of_range("ddim_invert_step: t must lie in [0, T-1]");
    return detail::ddim_step(z, eps, t, t + 1, s);
}

// z_t -> z_{t-1}, the algebraic inverse of ddim_invert_step for the same eps.
inline Latent ddim_denoise_step(const Latent &z, const Tensor3 &eps, int t,
                                const NoiseSchedule &s) {
    validate_schedule(s);
    if (t < 1 || t > s.T)
        throw std::out_of_range("ddim_denoise_step: t must lie in [1, T]");
    return detail::ddim_step(z, eps, t, t - 1, s);
}

// Classifier-free guidance.  Scale 1 is the conditional prediction alone.
// The attention record always comes from the conditional pass.
inline NoisePrediction guided_noise(const DenoiserBackend &backend, const Latent &z, int t,
                                    const TextEmbedding &cond, const TextEmbedding &uncond,
                                    float scale) {
    NoisePrediction c = backend.predict_noise(z, t, cond);
    if (scale == 1.0f)
        return c;
    NoisePrediction u = backend.predict_noise(z, t, uncond);
    if (!u.eps.same_shape(c.eps))
        throw std::runtime_error("guided_noise: backend returned mismatched eps shapes");
    for (size_t i = 0; i < c.eps.v.size(); ++i)
        c.eps.v[i] = u.eps.v[i] + scale * (c.eps.v[i] - u.eps.v[i]);
    return c;
}

} // namespace flexedit
