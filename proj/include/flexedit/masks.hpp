#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flexedit/attention.hpp"
#include "flexedit/image.hpp"
#include "flexedit/tensor.hpp"

namespace flexedit {

// Segmentation of one source object, at latent resolution.
struct SourceMask {
    Mask2D bits;
    std::string label;
};

// Blending region for one denoising step.
struct AdaptiveMask {
    Mask2D bits;
    int timestep = -1;
};

// Regions used by the metrics: source object, target object, background.
struct EvalMasks {
    Mask2D src;
    Mask2D tgt;
    Mask2D bg;
};

// Morphological dilation with a square structuring element of side 2r+1,
// done as two separable max passes.
inline Mask2D dilate(const Mask2D &m, int radius) {
    if (radius < 0)
        throw std::invalid_argument("dilate: radius must be non-negative");
    if (m.h <= 0 || m.w <= 0)
        throw std::invalid_argument("dilate: empty mask");
    if (radius == 0)
        return m;
    Mask2D tmp(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            uint8_t b = 0;
            for (int dx = -radius; dx <= radius && !b; ++dx) {
                int xx = x + dx;
                if (xx >= 0 && xx < m.w && m.at(y, xx)) b = 1;
            }
            tmp.at(y, x) = b;
        }
    Mask2D out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            uint8_t b = 0;
            for (int dy = -radius; dy <= radius && !b; ++dy) {
                int yy = y + dy;
                if (yy >= 0 && yy < m.h && tmp.at(yy, x)) b = 1;
            }
            out.at(y, x) = b;
        }
    return out;
}

// Union of source masks and dynamic masks, dilated.  Dynamic masks are
// brought to latent resolution first; source masks must already be there.
inline AdaptiveMask adaptive_mask(const std::vector<SourceMask> &sources,
                                  const std::vector<DynamicMask> &dynamics, int radius,
                                  int latent_h, int latent_w, int timestep) {
    if (latent_h <= 0 || latent_w <= 0)
        throw std::invalid_argument("adaptive_mask: latent dims must be positive");
    Mask2D acc(latent_h, latent_w);
    for (const SourceMask &s : sources) {
        if (s.bits.h != latent_h || s.bits.w != latent_w)
            throw std::invalid_argument("adaptive_mask: source mask '" + s.label +
                                        "' is not at latent resolution");
        for (size_t i = 0; i < acc.v.size(); ++i)
            acc.v[i] |= s.bits.v[i];
    }
    for (const DynamicMask &d : dynamics) {
        if (d.bits.h <= 0 || d.bits.w <= 0)
            throw std::invalid_argument("adaptive_mask: empty dynamic mask");
        Mask2D r = (d.bits.h == latent_h && d.bits.w == latent_w)
                       ? d.bits
                       : nearest_resize(d.bits, latent_h, latent_w);
        for (size_t i = 0; i < acc.v.size(); ++i)
            acc.v[i] |= r.v[i];
    }
    AdaptiveMask out;
    out.timestep = timestep;
    out.bits = dilate(acc, radius);
    return out;
}

enum class SegStatus { found, empty, error };

struct SegmentationResult {
    SegStatus status = SegStatus::error;
    Mask2D mask; // set only for found
    std::string message;
};

class SegmentationProvider {
public:
    virtual ~SegmentationProvider() = default;
    virtual std::string name() const = 0;
    virtual SegmentationResult segment(const ImageHandle &image, const std::string &label) = 0;
};

// In-memory provider keyed by (image id, label).  Entries without a mask
// act as an explicit "label absent" answer.
class MapSegmentationProvider final : public SegmentationProvider {
public:
    std::string name() const override { return "map"; }

    void add(const std::string &image_id, const std::string &label, Mask2D mask) {
        entries_[{image_id, label}] = std::move(mask);
    }
    void add_empty(const std::string &image_id, const std::string &label) {
        entries_[{image_id, label}] = std::nullopt;
    }

    SegmentationResult segment(const ImageHandle &image, const std::string &label) override {
        auto it = entries_.find({image.id, label});
        SegmentationResult r;
        if (it == entries_.end()) {
            r.status = SegStatus::error;
            r.message = "no segmentation entry for (" + image.id + ", " + label + ")";
        } else if (!it->second) {
            r.status = SegStatus::empty;
        } else {
            r.status = SegStatus::found;
            r.mask = *it->second;
        }
        return r;
    }

private:
    std::map<std::pair<std::string, std::string>, std::optional<Mask2D>> entries_;
};

// Reads masks from <root>/<image_id>/<label>.png.  A present all-zero file
// is a valid "label absent" answer; a missing file is a provider failure.
class FixtureSegmentationProvider final : public SegmentationProvider {
public:
    explicit FixtureSegmentationProvider(std::string root) : root_(std::move(root)) {}

    std::string name() const override { return "fixtures"; }

    SegmentationResult segment(const ImageHandle &image, const std::string &label) override {
        namespace fs = std::filesystem;
        SegmentationResult r;
        if (image.id.empty()) {
            r.message = "image has no id, cannot look up fixture mask";
            return r;
        }
        fs::path p = fs::path(root_) / image.id / (label + ".png");
        if (!fs::exists(p)) {
            r.message = "no fixture mask at " + p.string();
            return r;
        }
        try {
            r.mask = load_mask_png(p.string());
        } catch (const std::exception &e) {
            r.message = e.what();
            return r;
        }
        r.status = r.mask.any() ? SegStatus::found : SegStatus::empty;
        return r;
    }

private:
    std::string root_;
};

// Masks for the metrics.  The source object is segmented in the source
// image, the target object in the edited image; background is everything
// outside their union.  Provider failures surface as runtime errors so a
// benchmark run can skip the sample.
inline EvalMasks eval_masks(const ImageHandle &source, const ImageHandle &edited,
                            const std::optional<std::string> &src_label,
                            const std::optional<std::string> &tgt_label,
                            SegmentationProvider &provider) {
    if (source.pixels.h <= 0 || source.pixels.w <= 0)
        throw std::invalid_argument("eval_masks: empty source image");
    if (!source.pixels.same_shape(edited.pixels))
        throw std::invalid_argument("eval_masks: source and edited images differ in size");
    const int H = source.pixels.h, W = source.pixels.w;

    auto fetch = [&](const ImageHandle &im, const std::string &label) {
        SegmentationResult r = provider.segment(im, label);
        if (r.status == SegStatus::error)
            throw std::runtime_error("segmentation failure for (" + im.id + ", " + label +
                                     "): " + r.message);
        if (r.status == SegStatus::empty)
            return Mask2D(H, W);
        if (r.mask.h != H || r.mask.w != W)
            throw std::runtime_error("segmentation mask for (" + im.id + ", " + label +
                                     ") does not match the image size");
        return r.mask;
    };

    EvalMasks out;
    out.src = src_label ? fetch(source, *src_label) : Mask2D(H, W);
    out.tgt = tgt_label ? fetch(edited, *tgt_label) : Mask2D(H, W);
    out.bg = Mask2D(H, W);
    for (size_t i = 0; i < out.bg.v.size(); ++i)
        out.bg.v[i] = (out.src.v[i] | out.tgt.v[i]) ? 0 : 1;
    return out;
}

} // namespace flexedit
