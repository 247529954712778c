#pragma once

#include <cctype>
#include <cstring>
#include <string>
#include <vector>

#include "flexedit/backend.hpp"
#include "flexedit/rng.hpp"

namespace flexedit {

// Small deterministic stand-in for a diffusion denoiser.  Everything is a
// fixed function of (seed, latent, timestep, prompt): a frozen noise field,
// a tanh coupling to the latent, and a text term routed through real
// softmax cross attention.  Cross attention runs at half the latent
// resolution, self attention at full latent resolution, so the mask
// pipeline sees the coarse/fine split it expects.
class ToyDenoiser final : public DenoiserBackend {
public:
    static constexpr int kEmbedDim = 8;
    static constexpr int kFeatDim = 8;
    static constexpr int kCrossLayers = 2;
    static constexpr int kSelfLayers = 2;

    ToyDenoiser(uint64_t seed, int channels, int h, int w)
        : seed_(seed), c_(channels), h_(h), w_(w) {
        if (channels <= 0)
            throw std::invalid_argument("ToyDenoiser: channels must be positive");
        if (h <= 0 || w <= 0 || h % 4 != 0 || w % 4 != 0)
            throw std::invalid_argument("ToyDenoiser: spatial dims must be positive multiples of 4");
        ch_ = h_ / 2;
        cw_ = w_ / 2;
        const int fdim = c_ + 4;

        std::mt19937_64 g(seed ^ 0x746f79646e6f6973ull);
        auto init = [&](std::vector<float> &dst, size_t n, int fan_in) {
            dst.resize(n);
            fill_normal(dst, g, 1.0f / std::sqrt(static_cast<float>(fan_in)));
        };
        init(wq_cross_, static_cast<size_t>(kCrossLayers) * kFeatDim * fdim, fdim);
        init(wk_cross_, static_cast<size_t>(kCrossLayers) * kFeatDim * kEmbedDim, kEmbedDim);
        init(wq_self_, static_cast<size_t>(kSelfLayers) * kFeatDim * fdim, fdim);
        init(wk_self_, static_cast<size_t>(kSelfLayers) * kFeatDim * fdim, fdim);
        init(wv_text_, static_cast<size_t>(c_) * kEmbedDim, kEmbedDim);
        init(wmix_, static_cast<size_t>(c_) * c_, c_);
        base_ = Tensor3(c_, h_, w_);
        fill_normal(base_, g);
    }

    std::string name() const override { return "toy"; }

    int channels() const { return c_; }
    int latent_h() const { return h_; }
    int latent_w() const { return w_; }
    int coarse_h() const { return ch_; }
    int coarse_w() const { return cw_; }

    TextEmbedding encode_text(const std::string &prompt) const override {
        TextEmbedding e;
        e.prompt = prompt;
        e.tokens = tokenize(prompt);
        if (e.tokens.empty())
            e.tokens.push_back("<empty>");
        e.dim = kEmbedDim;
        e.data.resize(e.tokens.size() * kEmbedDim);
        for (size_t i = 0; i < e.tokens.size(); ++i) {
            std::mt19937_64 g(fnv1a64(e.tokens[i]) ^ (seed_ * 0x9e3779b97f4a7c15ull));
            for (int d = 0; d < kEmbedDim; ++d)
                e.data[i * kEmbedDim + d] = static_cast<float>(unit_normal(g));
        }
        return e;
    }

    NoisePrediction predict_noise(const Latent &z, int t,
                                  const TextEmbedding &text) const override {
        if (z.data.c != c_ || z.data.h != h_ || z.data.w != w_)
            throw std::invalid_argument("ToyDenoiser: latent shape mismatch");
        if (t < 0)
            throw std::invalid_argument("ToyDenoiser: negative timestep");
        validate_embedding(text);
        const int ntok = static_cast<int>(text.tokens.size());
        const int fdim = c_ + 4;
        const float phase = 0.1f * static_cast<float>(t);

        // Pixel features: latent channels plus a positional encoding that
        // drifts slowly with t, so attention is a function of both.
        std::vector<float> fine_feat(static_cast<size_t>(h_) * w_ * fdim);
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x) {
                float *f = fine_feat.data() + (static_cast<size_t>(y) * w_ + x) * fdim;
                for (int c = 0; c < c_; ++c)
                    f[c] = z.data.at(c, y, x);
                write_pos(f + c_, (x + 0.5f) / w_, (y + 0.5f) / h_, phase);
            }
        std::vector<float> coarse_feat(static_cast<size_t>(ch_) * cw_ * fdim);
        for (int Y = 0; Y < ch_; ++Y)
            for (int X = 0; X < cw_; ++X) {
                float *f = coarse_feat.data() + (static_cast<size_t>(Y) * cw_ + X) * fdim;
                for (int c = 0; c < c_; ++c) {
                    float s = z.data.at(c, 2 * Y, 2 * X) + z.data.at(c, 2 * Y, 2 * X + 1) +
                              z.data.at(c, 2 * Y + 1, 2 * X) + z.data.at(c, 2 * Y + 1, 2 * X + 1);
                    f[c] = 0.25f * s;
                }
                write_pos(f + c_, (X + 0.5f) / cw_, (Y + 0.5f) / ch_, phase);
            }

        NoisePrediction out;
        out.attention.timestep = t;
        out.attention.cross.assign(ntok, std::vector<Map2D>());

        // Cross attention, coarse grid over prompt tokens.
        const int npix_c = ch_ * cw_;
        std::vector<float> keys(static_cast<size_t>(ntok) * kFeatDim);
        std::vector<float> logits(ntok);
        std::vector<std::vector<float>> cross_avg(
            static_cast<size_t>(npix_c), std::vector<float>(ntok, 0.0f));
        for (int l = 0; l < kCrossLayers; ++l) {
            const float *wq = wq_cross_.data() + static_cast<size_t>(l) * kFeatDim * fdim;
            const float *wk = wk_cross_.data() + static_cast<size_t>(l) * kFeatDim * kEmbedDim;
            for (int n = 0; n < ntok; ++n)
                matvec(wk, text.data.data() + static_cast<size_t>(n) * kEmbedDim,
                       keys.data() + static_cast<size_t>(n) * kFeatDim, kFeatDim, kEmbedDim);
            std::vector<Map2D> layer_maps(ntok, Map2D(ch_, cw_));
            for (int p = 0; p < npix_c; ++p) {
                float q[kFeatDim];
                matvec(wq, coarse_feat.data() + static_cast<size_t>(p) * fdim, q, kFeatDim, fdim);
                for (int n = 0; n < ntok; ++n)
                    logits[n] = dot(q, keys.data() + static_cast<size_t>(n) * kFeatDim, kFeatDim) *
                                kAttnScale;
                softmax(logits.data(), ntok);
                for (int n = 0; n < ntok; ++n) {
                    layer_maps[n].v[p] = logits[n];
                    cross_avg[p][n] += logits[n] / kCrossLayers;
                }
            }
            for (int n = 0; n < ntok; ++n)
                out.attention.cross[n].push_back(std::move(layer_maps[n]));
        }

        // Self attention, fine grid over fine grid.
        const int npix_f = h_ * w_;
        std::vector<float> sq(static_cast<size_t>(npix_f) * kFeatDim);
        std::vector<float> sk(static_cast<size_t>(npix_f) * kFeatDim);
        for (int l = 0; l < kSelfLayers; ++l) {
            const float *wq = wq_self_.data() + static_cast<size_t>(l) * kFeatDim * fdim;
            const float *wk = wk_self_.data() + static_cast<size_t>(l) * kFeatDim * fdim;
            for (int p = 0; p < npix_f; ++p) {
                matvec(wq, fine_feat.data() + static_cast<size_t>(p) * fdim,
                       sq.data() + static_cast<size_t>(p) * kFeatDim, kFeatDim, fdim);
                matvec(wk, fine_feat.data() + static_cast<size_t>(p) * fdim,
                       sk.data() + static_cast<size_t>(p) * kFeatDim, kFeatDim, fdim);
            }
            Map2D mat(npix_f, npix_f);
            for (int i = 0; i < npix_f; ++i) {
                float *row = mat.v.data() + static_cast<size_t>(i) * npix_f;
                const float *qi = sq.data() + static_cast<size_t>(i) * kFeatDim;
                for (int j = 0; j < npix_f; ++j)
                    row[j] = dot(qi, sk.data() + static_cast<size_t>(j) * kFeatDim, kFeatDim) *
                             kAttnScale;
                softmax(row, npix_f);
            }
            out.attention.self_attn.push_back(std::move(mat));
        }

        // Noise prediction: frozen field, bounded latent coupling, text
        // context through the averaged cross maps, slow time wobble.
        out.eps = base_;
        std::vector<float> vals(static_cast<size_t>(ntok) * c_);
        for (int n = 0; n < ntok; ++n)
            matvec(wv_text_.data(), text.data.data() + static_cast<size_t>(n) * kEmbedDim,
                   vals.data() + static_cast<size_t>(n) * c_, c_, kEmbedDim);
        for (int c = 0; c < c_; ++c) {
            const float tw = 0.05f * std::sin(0.07f * t + 0.3f * c);
            for (int y = 0; y < h_; ++y)
                for (int x = 0; x < w_; ++x) {
                    double mix = 0.0;
                    for (int c2 = 0; c2 < c_; ++c2)
                        mix += static_cast<double>(wmix_[static_cast<size_t>(c) * c_ + c2]) *
                               z.data.at(c2, y, x);
                    const int p = (y / 2) * cw_ + (x / 2);
                    double ctx = 0.0;
                    for (int n = 0; n < ntok; ++n)
                        ctx += static_cast<double>(cross_avg[p][n]) *
                               vals[static_cast<size_t>(n) * c_ + c];
                    out.eps.at(c, y, x) += 0.1f * std::tanh(static_cast<float>(mix)) +
                                           0.2f * static_cast<float>(ctx) + tw;
                }
        }
        return out;
    }

    // Central differences over every latent element, double accumulation.
    Tensor3 gradient_oracle(const std::function<double(const Latent &)> &loss,
                            const Latent &z) const override {
        if (!loss)
            throw std::invalid_argument("gradient_oracle: missing loss");
        const float step = 1e-3f;
        Tensor3 grad(z.data.c, z.data.h, z.data.w);
        Latent probe = z;
        for (size_t i = 0; i < probe.data.v.size(); ++i) {
            const float orig = probe.data.v[i];
            const float xp = orig + step;
            const float xm = orig - step;
            probe.data.v[i] = xp;
            const double fp = loss(probe);
            probe.data.v[i] = xm;
            const double fm = loss(probe);
            probe.data.v[i] = orig;
            grad.v[i] = static_cast<float>((fp - fm) /
                                           (static_cast<double>(xp) - static_cast<double>(xm)));
        }
        return grad;
    }

    static std::vector<std::string> tokenize(const std::string &prompt) {
        std::vector<std::string> out;
        std::string cur;
        auto flush = [&]() {
            size_t b = 0, e = cur.size();
            while (b < e && !std::isalnum(static_cast<unsigned char>(cur[b])) && cur[b] != '<')
                ++b;
            while (e > b && !std::isalnum(static_cast<unsigned char>(cur[e - 1])) && cur[e - 1] != '>')
                --e;
            if (e > b) out.push_back(cur.substr(b, e - b));
            cur.clear();
        };
        for (char raw : prompt) {
            if (std::isspace(static_cast<unsigned char>(raw))) {
                flush();
            } else {
                cur.push_back(static_cast<char>(
                    std::tolower(static_cast<unsigned char>(raw))));
            }
        }
        flush();
        return out;
    }

private:
    static constexpr float kAttnScale = 0.35355339f; // 1/sqrt(kFeatDim)

    static void write_pos(float *f, float px, float py, float phase) {
        f[0] = std::sin(3.14159265f * px + phase);
        f[1] = std::cos(3.14159265f * px + phase);
        f[2] = std::sin(3.14159265f * py + phase);
        f[3] = std::cos(3.14159265f * py + phase);
    }

    static void matvec(const float *m, const float *x, float *y, int rows, int cols) {
        for (int r = 0; r < rows; ++r) {
            double acc = 0.0;
            const float *row = m + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c)
                acc += static_cast<double>(row[c]) * x[c];
            y[r] = static_cast<float>(acc);
        }
    }

    static float dot(const float *a, const float *b, int n) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += static_cast<double>(a[i]) * b[i];
        return static_cast<float>(acc);
    }

    static void softmax(float *v, int n) {
        float m = v[0];
        for (int i = 1; i < n; ++i) m = std::max(m, v[i]);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            v[i] = std::exp(v[i] - m);
            sum += v[i];
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int i = 0; i < n; ++i) v[i] *= inv;
    }

    uint64_t seed_;
    int c_, h_, w_, ch_, cw_;
    std::vector<float> wq_cross_, wk_cross_, wq_self_, wk_self_, wv_text_, wmix_;
    Tensor3 base_;
};

// Lossless 2x2 space-to-depth codec: image (H,W,3) in [0,1] maps to a
// latent (12, H/2, W/2) in [-1,1].
class ToyCodec final : public ImageCodec {
public:
    static constexpr int kChannels = 12;

    std::string name() const override { return "toy"; }

    Latent encode(const Image &im) const override {
        if (im.h < 2 || im.w < 2 || im.h % 2 != 0 || im.w % 2 != 0)
            throw std::invalid_argument("ToyCodec: image dims must be positive and even");
        if (!all_finite(im.px))
            throw std::invalid_argument("ToyCodec: non-finite pixel values");
        Latent z;
        z.timestep = 0;
        z.data = Tensor3(kChannels, im.h / 2, im.w / 2);
        for (int c = 0; c < 3; ++c)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int ch = c * 4 + dy * 2 + dx;
                    for (int y = 0; y < z.data.h; ++y)
                        for (int x = 0; x < z.data.w; ++x)
                            z.data.at(ch, y, x) = 2.0f * im.at(2 * y + dy, 2 * x + dx, c) - 1.0f;
                }
        return z;
    }

    Image decode(const Latent &z) const override {
        if (z.data.c != kChannels)
            throw std::invalid_argument("ToyCodec: latent must have 12 channels");
        Image im(z.data.h * 2, z.data.w * 2);
        for (int c = 0; c < 3; ++c)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int ch = c * 4 + dy * 2 + dx;
                    for (int y = 0; y < z.data.h; ++y)
                        for (int x = 0; x < z.data.w; ++x)
                            im.at(2 * y + dy, 2 * x + dx, c) =
                                std::clamp(0.5f * (z.data.at(ch, y, x) + 1.0f), 0.0f, 1.0f);
                }
        return im;
    }
};

} // namespace flexedit
