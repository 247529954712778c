#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "flexedit/benchgen.hpp"
#include "flexedit/image.hpp"
#include "flexedit/masks.hpp"

namespace flexedit {

class PerceptualDistance {
public:
    virtual ~PerceptualDistance() = default;
    virtual std::string name() const = 0;
    virtual double distance(const Image &a, const Image &b) const = 0;
};

class ImageTextScorer {
public:
    virtual ~ImageTextScorer() = default;
    virtual std::string name() const = 0;
    virtual double similarity(const Image &im, const std::string &text) const = 0;
};

// Stand-in for a perceptual metric: mean absolute difference over pixels.
class MeanAbsDistance final : public PerceptualDistance {
public:
    std::string name() const override { return "mad"; }
    double distance(const Image &a, const Image &b) const override {
        if (!a.same_shape(b))
            throw std::invalid_argument("distance: images differ in size");
        double acc = 0.0;
        for (size_t i = 0; i < a.px.size(); ++i)
            acc += std::fabs(static_cast<double>(a.px[i]) - b.px[i]);
        return a.px.empty() ? 0.0 : acc / a.px.size();
    }
};

// Stand-in for an image-text model: a seeded hash of the quantized image
// bytes and the text, mapped to [0,1].  Deterministic per (image, text).
class HashTextScorer final : public ImageTextScorer {
public:
    explicit HashTextScorer(uint64_t seed = 0) : seed_(seed) {}
    std::string name() const override { return "hash"; }

    double similarity(const Image &im, const std::string &text) const override {
        uint64_t h = fnv1a64(&seed_, sizeof(seed_));
        for (float v : im.px) {
            const uint8_t q =
                static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            h = fnv1a64(&q, 1, h);
        }
        h = fnv1a64(text, h);
        return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
    }

private:
    uint64_t seed_;
};

// Scorers are picked by name so real adapters can slot in later.
inline std::unique_ptr<PerceptualDistance> make_perceptual_distance(const std::string &name) {
    if (name == "mad")
        return std::make_unique<MeanAbsDistance>();
    throw std::invalid_argument("unknown perceptual distance '" + name + "'");
}

inline std::unique_ptr<ImageTextScorer> make_text_scorer(const std::string &name,
                                                         uint64_t seed = 0) {
    if (name == "hash")
        return std::make_unique<HashTextScorer>(seed);
    throw std::invalid_argument("unknown image-text scorer '" + name + "'");
}

// Zero out pixels where the mask is off.
inline Image apply_mask(const Image &im, const Mask2D &m) {
    if (m.h != im.h || m.w != im.w)
        throw std::invalid_argument("apply_mask: mask does not match the image size");
    Image out = im;
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x)
            if (!m.at(y, x))
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.0f;
    return out;
}

// Perceptual distance restricted to the background region.
inline double masked_lpips(const Image &img, const Image &edited, const EvalMasks &masks,
                           const PerceptualDistance &pd) {
    if (!img.same_shape(edited))
        throw std::invalid_argument("masked_lpips: images differ in size");
    return pd.distance(apply_mask(img, masks.bg), apply_mask(edited, masks.bg));
}

inline double clamp_similarity(double s) { return std::clamp(s, 0.0, 1.0); }

// Presence of the target object inside its region, on the x100 scale.
inline double clip_o(const Image &edited, const EvalMasks &masks,
                     const std::string &target_token, const ImageTextScorer &scorer) {
    return 100.0 * clamp_similarity(scorer.similarity(apply_mask(edited, masks.tgt),
                                                      target_token));
}

// Absence of the source object from its old region, on the x100 scale.
inline double clip_no(const Image &edited, const EvalMasks &masks,
                      const std::string &source_token, const ImageTextScorer &scorer) {
    return 100.0 * (1.0 - clamp_similarity(scorer.similarity(apply_mask(edited, masks.src),
                                                             source_token)));
}

struct SampleMetrics {
    std::string id;
    TaskKind kind = TaskKind::replace;
    std::optional<double> masked_lpips;
    std::optional<double> clip_o;
    std::optional<double> clip_no;
    std::optional<std::string> error;
};

struct TaskAggregate {
    int count = 0;  // samples that produced metrics
    int errors = 0; // samples excluded by failures
    std::optional<double> masked_lpips;
    std::optional<double> clip_o;
    std::optional<double> clip_no;
};

struct MetricReport {
    std::vector<SampleMetrics> samples;
    std::map<std::string, TaskAggregate> aggregates; // keyed by task name
};

// Supplies the (source, edited) image pair for a sample; either loads
// precomputed outputs or runs the editor on the fly.
using SampleImageSource =
    std::function<std::pair<ImageHandle, ImageHandle>(const BenchSample &)>;

// Resolves <dir>/<id>/source.png and <dir>/<id>/edited.png.
inline SampleImageSource make_directory_source(const std::string &dir) {
    return [dir](const BenchSample &s) {
        namespace fs = std::filesystem;
        ImageHandle src, edit;
        src.id = s.id;
        edit.id = s.id + "-edited";
        src.path = (fs::path(dir) / s.id / "source.png").string();
        edit.path = (fs::path(dir) / s.id / "edited.png").string();
        src.pixels = load_image_png(src.path);
        edit.pixels = load_image_png(edit.path);
        return std::make_pair(std::move(src), std::move(edit));
    };
}

inline SampleMetrics evaluate_sample(const BenchSample &s, const SampleImageSource &source,
                                     const PerceptualDistance &pd,
                                     const ImageTextScorer &scorer,
                                     SegmentationProvider &provider) {
    SampleMetrics m;
    m.id = s.id;
    m.kind = s.kind;
    try {
        auto [src_img, edit_img] = source(s);
        // Addition leaves the source object untouched, removal has no
        // target object; outside those the labels drive the masks.
        std::optional<std::string> src_label, tgt_label;
        if (s.kind != TaskKind::add) src_label = s.source_object;
        if (s.kind != TaskKind::remove) {
            if (!s.target_object)
                throw std::runtime_error("sample has no target object");
            tgt_label = *s.target_object;
        }
        EvalMasks masks = eval_masks(src_img, edit_img, src_label, tgt_label, provider);
        m.masked_lpips = masked_lpips(src_img.pixels, edit_img.pixels, masks, pd);
        if (s.kind != TaskKind::remove)
            m.clip_o = clip_o(edit_img.pixels, masks, *s.target_object, scorer);
        if (s.kind != TaskKind::add)
            m.clip_no = clip_no(edit_img.pixels, masks, s.source_object, scorer);
    } catch (const std::exception &e) {
        m.masked_lpips.reset();
        m.clip_o.reset();
        m.clip_no.reset();
        m.error = e.what();
    }
    return m;
}

inline void fill_aggregates(MetricReport &report) {
    struct Acc {
        int count = 0, errors = 0;
        double lp = 0, co = 0, cn = 0;
        int nlp = 0, nco = 0, ncn = 0;
    };
    std::map<std::string, Acc> accs;
    for (const SampleMetrics &m : report.samples) {
        Acc &a = accs[to_string(m.kind)];
        if (m.error) {
            ++a.errors;
            continue;
        }
        ++a.count;
        if (m.masked_lpips) { a.lp += *m.masked_lpips; ++a.nlp; }
        if (m.clip_o) { a.co += *m.clip_o; ++a.nco; }
        if (m.clip_no) { a.cn += *m.clip_no; ++a.ncn; }
    }
    report.aggregates.clear();
    for (const auto &[task, a] : accs) {
        TaskAggregate agg;
        agg.count = a.count;
        agg.errors = a.errors;
        if (a.nlp) agg.masked_lpips = a.lp / a.nlp;
        if (a.nco) agg.clip_o = a.co / a.nco;
        if (a.ncn) agg.clip_no = a.cn / a.ncn;
        report.aggregates[task] = agg;
    }
}

// Per-sample metrics with error isolation: one bad sample never aborts
// the batch.  Samples are independent, so extra workers just split them.
inline MetricReport run_benchmark(const std::vector<BenchSample> &samples,
                                  const SampleImageSource &source,
                                  const PerceptualDistance &pd, const ImageTextScorer &scorer,
                                  SegmentationProvider &provider, int workers = 1) {
    if (workers < 1)
        throw std::invalid_argument("run_benchmark: workers must be at least 1");
    MetricReport report;
    report.samples.resize(samples.size());
    if (workers == 1 || samples.size() <= 1) {
        for (size_t i = 0; i < samples.size(); ++i)
            report.samples[i] = evaluate_sample(samples[i], source, pd, scorer, provider);
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= samples.size()) return;
                report.samples[i] = evaluate_sample(samples[i], source, pd, scorer, provider);
            }
        };
        std::vector<std::thread> pool;
        const int n = std::min<int>(workers, static_cast<int>(samples.size()));
        pool.reserve(n);
        for (int i = 0; i < n; ++i) pool.emplace_back(worker);
        for (std::thread &th : pool) th.join();
    }
    fill_aggregates(report);
    return report;
}

inline nlohmann::json report_to_json(const MetricReport &report) {
    nlohmann::json j;
    nlohmann::json samples = nlohmann::json::array();
    for (const SampleMetrics &m : report.samples) {
        nlohmann::json s;
        s["id"] = m.id;
        s["task"] = to_string(m.kind);
        s["masked_lpips"] = m.masked_lpips ? nlohmann::json(*m.masked_lpips) : nlohmann::json();
        s["clip_o"] = m.clip_o ? nlohmann::json(*m.clip_o) : nlohmann::json();
        s["clip_no"] = m.clip_no ? nlohmann::json(*m.clip_no) : nlohmann::json();
        s["error"] = m.error ? nlohmann::json(*m.error) : nlohmann::json();
        samples.push_back(s);
    }
    j["samples"] = samples;
    nlohmann::json aggs;
    for (const auto &[task, a] : report.aggregates) {
        nlohmann::json ja;
        ja["count"] = a.count;
        ja["errors"] = a.errors;
        ja["masked_lpips"] = a.masked_lpips ? nlohmann::json(*a.masked_lpips) : nlohmann::json();
        ja["clip_o"] = a.clip_o ? nlohmann::json(*a.clip_o) : nlohmann::json();
        ja["clip_no"] = a.clip_no ? nlohmann::json(*a.clip_no) : nlohmann::json();
        aggs[task] = ja;
    }
    j["aggregates"] = aggs;
    return j;
}

inline void write_report_json(const std::string &path, const MetricReport &report) {
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("write_report_json: cannot write " + path);
    f << report_to_json(report).dump(2) << "\n";
}

// Scatter rows for the trade-off plots: one line per scored sample, with
// the task's semantic CLIP metric (CLIP-O where defined, else CLIP-NO).
inline void write_scatter_csv(const std::string &path, const MetricReport &report,
                              const std::string &method) {
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("write_scatter_csv: cannot write " + path);
    f << "method,task,lpips,clip_metric\n";
    for (const SampleMetrics &m : report.samples) {
        if (m.error || !m.masked_lpips) continue;
        const std::optional<double> clip = m.clip_o ? m.clip_o : m.clip_no;
        if (!clip) continue;
        f << method << "," << to_string(m.kind) << "," << *m.masked_lpips << "," << *clip
          << "\n";
    }
}

// Three metric columns per task, in the layout of the published tables.
inline std::string format_summary_table(const MetricReport &report) {
    std::ostringstream os;
    auto cell = [](const std::optional<double> &v) {
        char buf[32];
        if (!v) return std::string("   n/a");
        std::snprintf(buf, sizeof(buf), "%6.2f", *v);
        return std::string(buf);
    };
    os << "task       count errors LPIPS(v) CLIP-O(^) CLIP-NO(^)\n";
    for (const char *task : {"replace", "add", "remove"}) {
        auto it = report.aggregates.find(task);
        if (it == report.aggregates.end()) continue;
        const TaskAggregate &a = it->second;
        char head[64];
        std::snprintf(head, sizeof(head), "%-10s %5d %6d", task, a.count, a.errors);
        os << head << "   " << cell(a.masked_lpips) << "    " << cell(a.clip_o) << "     "
           << cell(a.clip_no) << "\n";
    }
    return os.str();
}

} // namespace flexedit
