#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "flexedit/evaluation.hpp"

using namespace flexedit;
namespace fs = std::filesystem;

namespace {

Image gradient_image(int h, int w, float offset = 0.0f) {
    Image im(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                im.at(y, x, c) =
                    std::min(1.0f, static_cast<float>(y * w + x) / (h * w) + 0.1f * c + offset);
    return im;
}

Mask2D block_mask(int h, int w, int y0, int y1, int x0, int x1) {
    Mask2D m(h, w);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
    return m;
}

// a fixed-answer scorer makes the x100 formulas exact
class ConstScorer final : public ImageTextScorer {
public:
    explicit ConstScorer(double s) : s_(s) {}
    std::string name() const override { return "const"; }
    double similarity(const Image &, const std::string &) const override { return s_; }

private:
    double s_;
};

BenchSample sample(TaskKind kind, const std::string &id) {
    BenchSample s;
    s.id = id;
    s.kind = kind;
    s.source_object = "cat";
    if (kind != TaskKind::remove) s.target_object = "dog";
    s.source_prompt = "A photo of cat on grass.";
    s.target_prompt = kind == TaskKind::remove ? "A photo of on grass."
                                               : "A photo of dog on grass.";
    return s;
}

SampleImageSource memory_source(const Image &src, const Image &edit) {
    return [src, edit](const BenchSample &s) {
        ImageHandle a, b;
        a.id = s.id;
        b.id = s.id + "-edited";
        a.pixels = src;
        b.pixels = edit;
        return std::make_pair(a, b);
    };
}

} // namespace

TEST(MeanAbsDistance, HandComputed) {
    MeanAbsDistance mad;
    Image a(1, 2), b(1, 2);
    a.px = {0.0f, 0.5f, 1.0f, 0.2f, 0.2f, 0.2f};
    b.px = {0.1f, 0.5f, 0.8f, 0.2f, 0.0f, 0.2f};
    // diffs: .1 0 .2 0 .2 0 -> mean 0.5/6
    EXPECT_NEAR(mad.distance(a, b), 0.5 / 6.0, 1e-7);
    EXPECT_DOUBLE_EQ(mad.distance(a, a), 0.0);
    EXPECT_THROW(mad.distance(a, Image(2, 2)), std::invalid_argument);
}

TEST(HashTextScorer, DeterministicInRange) {
    HashTextScorer s(7);
    Image im = gradient_image(4, 4);
    double v1 = s.similarity(im, "cat");
    double v2 = s.similarity(im, "cat");
    EXPECT_DOUBLE_EQ(v1, v2);
    EXPECT_GE(v1, 0.0);
    EXPECT_LE(v1, 1.0);
    EXPECT_NE(v1, s.similarity(im, "dog"));
    HashTextScorer other(8);
    EXPECT_NE(v1, other.similarity(im, "cat"));
}

TEST(Factories, ByNameOrThrow) {
    EXPECT_EQ(make_perceptual_distance("mad")->name(), "mad");
    EXPECT_EQ(make_text_scorer("hash")->name(), "hash");
    EXPECT_THROW(make_perceptual_distance("lpips-vgg"), std::invalid_argument);
    EXPECT_THROW(make_text_scorer("clip-vit"), std::invalid_argument);
}

TEST(ApplyMask, ZeroesOffMaskPixels) {
    Image im = gradient_image(4, 4, 0.2f);
    Mask2D m = block_mask(4, 4, 0, 2, 0, 4);
    Image out = apply_mask(im, m);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c)
                EXPECT_FLOAT_EQ(out.at(y, x, c), y < 2 ? im.at(y, x, c) : 0.0f);
    EXPECT_THROW(apply_mask(im, Mask2D(3, 4)), std::invalid_argument);
}

TEST(MaskedLpips, IdenticalImagesScoreZero) {
    MeanAbsDistance mad;
    Image im = gradient_image(6, 6);
    EvalMasks masks;
    masks.src = block_mask(6, 6, 0, 3, 0, 3);
    masks.tgt = Mask2D(6, 6);
    masks.bg = Mask2D(6, 6, 1);
    for (size_t i = 0; i < masks.bg.v.size(); ++i) masks.bg.v[i] = masks.src.v[i] ? 0 : 1;
    EXPECT_DOUBLE_EQ(masked_lpips(im, im, masks, mad), 0.0);
}

TEST(MaskedLpips, OnlyBackgroundCounts) {
    MeanAbsDistance mad;
    Image a = gradient_image(4, 4);
    Image b = a;
    // change one pixel inside the object region and one in the background
    EvalMasks masks;
    masks.src = block_mask(4, 4, 0, 2, 0, 2);
    masks.tgt = Mask2D(4, 4);
    masks.bg = Mask2D(4, 4);
    for (size_t i = 0; i < masks.bg.v.size(); ++i) masks.bg.v[i] = masks.src.v[i] ? 0 : 1;

    b.at(1, 1, 0) += 0.5f; // inside src: must not count
    double no_bg_change = masked_lpips(a, b, masks, mad);
    EXPECT_DOUBLE_EQ(no_bg_change, 0.0);

    b.at(3, 3, 1) += 0.3f; // background: counts
    double with_bg_change = masked_lpips(a, b, masks, mad);
    EXPECT_NEAR(with_bg_change, 0.3 / (4 * 4 * 3), 1e-6);
}

TEST(ClipMetrics, ScaleFormulasExact) {
    Image im = gradient_image(4, 4);
    EvalMasks masks;
    masks.src = block_mask(4, 4, 0, 2, 0, 2);
    masks.tgt = block_mask(4, 4, 2, 4, 2, 4);
    masks.bg = Mask2D(4, 4, 1);

    ConstScorer s(0.37);
    EXPECT_NEAR(clip_o(im, masks, "dog", s), 37.0, 1e-9);
    EXPECT_NEAR(clip_no(im, masks, "cat", s), 63.0, 1e-9);

    // out-of-range similarities clamp before scaling
    ConstScorer hi(1.7);
    EXPECT_DOUBLE_EQ(clip_o(im, masks, "dog", hi), 100.0);
    EXPECT_DOUBLE_EQ(clip_no(im, masks, "cat", hi), 0.0);
    ConstScorer lo(-0.3);
    EXPECT_DOUBLE_EQ(clip_o(im, masks, "dog", lo), 0.0);
    EXPECT_DOUBLE_EQ(clip_no(im, masks, "cat", lo), 100.0);
}

TEST(ClipMetrics, MaskSelectsRegion) {
    // scorer that keys on how much of the image is non-zero, to show the
    // mask actually reaches it
    class AreaScorer final : public ImageTextScorer {
    public:
        std::string name() const override { return "area"; }
        double similarity(const Image &im, const std::string &) const override {
            double nz = 0.0;
            for (float v : im.px) nz += v > 0.0f ? 1.0 : 0.0;
            return nz / im.px.size();
        }
    };
    Image im(4, 4, 0.5f);
    EvalMasks masks;
    masks.tgt = block_mask(4, 4, 0, 1, 0, 4); // quarter of the pixels
    masks.src = block_mask(4, 4, 0, 2, 0, 4); // half of the pixels
    AreaScorer s;
    EXPECT_NEAR(clip_o(im, masks, "dog", s), 25.0, 1e-9);
    EXPECT_NEAR(clip_no(im, masks, "cat", s), 50.0, 1e-9);
}

TEST(EvaluateSample, NullPlacementPerTask) {
    Image src = gradient_image(8, 8);
    Image edit = gradient_image(8, 8, 0.05f);
    MapSegmentationProvider provider;
    MeanAbsDistance mad;
    ConstScorer scorer(0.5);

    BenchSample rep = sample(TaskKind::replace, "r1");
    provider.add("r1", "cat", block_mask(8, 8, 0, 4, 0, 4));
    provider.add("r1-edited", "dog", block_mask(8, 8, 4, 8, 4, 8));
    SampleMetrics mr = evaluate_sample(rep, memory_source(src, edit), mad, scorer, provider);
    EXPECT_FALSE(mr.error) << *mr.error;
    EXPECT_TRUE(mr.masked_lpips);
    EXPECT_TRUE(mr.clip_o);
    EXPECT_TRUE(mr.clip_no);

    // addition keeps the source object, so no clip_no
    BenchSample add = sample(TaskKind::add, "a1");
    provider.add("a1-edited", "dog", block_mask(8, 8, 4, 8, 4, 8));
    SampleMetrics ma = evaluate_sample(add, memory_source(src, edit), mad, scorer, provider);
    EXPECT_FALSE(ma.error) << *ma.error;
    EXPECT_TRUE(ma.clip_o);
    EXPECT_FALSE(ma.clip_no);

    // removal has no target object, so no clip_o
    BenchSample rem = sample(TaskKind::remove, "m1");
    provider.add("m1", "cat", block_mask(8, 8, 0, 4, 0, 4));
    SampleMetrics mm = evaluate_sample(rem, memory_source(src, edit), mad, scorer, provider);
    EXPECT_FALSE(mm.error) << *mm.error;
    EXPECT_FALSE(mm.clip_o);
    EXPECT_TRUE(mm.clip_no);
}

TEST(EvaluateSample, HandComputedValues) {
    Image src(4, 4, 0.4f);
    Image edit(4, 4, 0.4f);
    edit.at(0, 0, 0) = 0.8f; // inside src mask
    edit.at(3, 3, 2) = 1.0f; // background

    MapSegmentationProvider provider;
    provider.add("m1", "cat", block_mask(4, 4, 0, 2, 0, 2));
    MeanAbsDistance mad;
    ConstScorer scorer(0.25);

    BenchSample rem = sample(TaskKind::remove, "m1");
    SampleMetrics m = evaluate_sample(rem, memory_source(src, edit), mad, scorer, provider);
    ASSERT_FALSE(m.error) << *m.error;
    // only the background change (0.6 at one channel) is visible
    EXPECT_NEAR(*m.masked_lpips, 0.6 / (4 * 4 * 3), 1e-9);
    EXPECT_NEAR(*m.clip_no, 75.0, 1e-9);
}

TEST(EvaluateSample, ErrorsAreIsolated) {
    Image src = gradient_image(4, 4);
    MapSegmentationProvider provider; // no entries: segmentation fails
    MeanAbsDistance mad;
    ConstScorer scorer(0.5);

    BenchSample rem = sample(TaskKind::remove, "x1");
    SampleMetrics m = evaluate_sample(rem, memory_source(src, src), mad, scorer, provider);
    ASSERT_TRUE(m.error);
    EXPECT_NE(m.error->find("segmentation failure"), std::string::npos);
    EXPECT_FALSE(m.masked_lpips);
    EXPECT_FALSE(m.clip_no);

    // a throwing image source is caught the same way
    SampleImageSource bad = [](const BenchSample &) -> std::pair<ImageHandle, ImageHandle> {
        throw std::runtime_error("missing file");
    };
    SampleMetrics m2 = evaluate_sample(rem, bad, mad, scorer, provider);
    ASSERT_TRUE(m2.error);
    EXPECT_NE(m2.error->find("missing file"), std::string::npos);
}

TEST(RunBenchmark, AggregatesMatchBruteForce) {
    Image src = gradient_image(8, 8);
    Image edit = gradient_image(8, 8, 0.03f);
    MapSegmentationProvider provider;
    MeanAbsDistance mad;
    HashTextScorer scorer(3);

    std::vector<BenchSample> samples;
    for (int i = 0; i < 3; ++i) {
        BenchSample s = sample(TaskKind::replace, "r" + std::to_string(i));
        samples.push_back(s);
        provider.add(s.id, "cat", block_mask(8, 8, 0, 4, 0, i + 2));
        provider.add(s.id + "-edited", "dog", block_mask(8, 8, 4, 8, 0, i + 3));
    }
    BenchSample rem = sample(TaskKind::remove, "m0");
    provider.add("m0", "cat", block_mask(8, 8, 2, 6, 2, 6));
    samples.push_back(rem);
    BenchSample bad = sample(TaskKind::remove, "broken");
    samples.push_back(bad); // no provider entry: errors out

    MetricReport report =
        run_benchmark(samples, memory_source(src, edit), mad, scorer, provider, 1);
    ASSERT_EQ(report.samples.size(), 5u);

    // recompute the replace aggregate by hand
    double lp = 0, co = 0, cn = 0;
    for (int i = 0; i < 3; ++i) {
        const SampleMetrics &m = report.samples[i];
        ASSERT_FALSE(m.error);
        lp += *m.masked_lpips;
        co += *m.clip_o;
        cn += *m.clip_no;
    }
    const TaskAggregate &rep_agg = report.aggregates.at("replace");
    EXPECT_EQ(rep_agg.count, 3);
    EXPECT_EQ(rep_agg.errors, 0);
    EXPECT_NEAR(*rep_agg.masked_lpips, lp / 3, 1e-12);
    EXPECT_NEAR(*rep_agg.clip_o, co / 3, 1e-12);
    EXPECT_NEAR(*rep_agg.clip_no, cn / 3, 1e-12);

    const TaskAggregate &rem_agg = report.aggregates.at("remove");
    EXPECT_EQ(rem_agg.count, 1);
    EXPECT_EQ(rem_agg.errors, 1);
    EXPECT_FALSE(rem_agg.clip_o); // removal never defines clip_o

    EXPECT_THROW(run_benchmark(samples, memory_source(src, edit), mad, scorer, provider, 0),
                 std::invalid_argument);
}

TEST(RunBenchmark, WorkersAgree) {
    Image src = gradient_image(8, 8);
    Image edit = gradient_image(8, 8, 0.02f);
    MapSegmentationProvider provider;
    MeanAbsDistance mad;
    HashTextScorer scorer(5);

    std::vector<BenchSample> samples;
    for (int i = 0; i < 6; ++i) {
        BenchSample s = sample(TaskKind::remove, "m" + std::to_string(i));
        samples.push_back(s);
        provider.add(s.id, "cat", block_mask(8, 8, 0, 4 + i % 3, 0, 4));
    }
    MetricReport serial =
        run_benchmark(samples, memory_source(src, edit), mad, scorer, provider, 1);
    MetricReport parallel =
        run_benchmark(samples, memory_source(src, edit), mad, scorer, provider, 3);
    ASSERT_EQ(serial.samples.size(), parallel.samples.size());
    for (size_t i = 0; i < serial.samples.size(); ++i) {
        EXPECT_EQ(serial.samples[i].id, parallel.samples[i].id);
        EXPECT_EQ(serial.samples[i].masked_lpips, parallel.samples[i].masked_lpips);
        EXPECT_EQ(serial.samples[i].clip_no, parallel.samples[i].clip_no);
    }
}

TEST(ReportOutput, JsonCsvAndTable) {
    MetricReport report;
    SampleMetrics ok;
    ok.id = "s1";
    ok.kind = TaskKind::replace;
    ok.masked_lpips = 0.125;
    ok.clip_o = 62.5;
    ok.clip_no = 40.0;
    report.samples.push_back(ok);
    SampleMetrics rm;
    rm.id = "s2";
    rm.kind = TaskKind::remove;
    rm.masked_lpips = 0.25;
    rm.clip_no = 80.0;
    report.samples.push_back(rm);
    SampleMetrics err;
    err.id = "s3";
    err.kind = TaskKind::remove;
    err.error = "segmentation failure";
    report.samples.push_back(err);
    fill_aggregates(report);

    nlohmann::json j = report_to_json(report);
    EXPECT_EQ(j["samples"].size(), 3u);
    EXPECT_EQ(j["samples"][0]["clip_o"], 62.5);
    EXPECT_TRUE(j["samples"][1]["clip_o"].is_null());
    EXPECT_EQ(j["samples"][2]["error"], "segmentation failure");
    EXPECT_EQ(j["aggregates"]["remove"]["count"], 1);
    EXPECT_EQ(j["aggregates"]["remove"]["errors"], 1);

    fs::path dir = fs::temp_directory_path() / "flexedit_eval_test";
    fs::create_directories(dir);
    std::string csv_path = (dir / "scatter.csv").string();
    write_scatter_csv(csv_path, report, "ours");
    std::ifstream csv(csv_path);
    std::string line;
    ASSERT_TRUE(std::getline(csv, line));
    EXPECT_EQ(line, "method,task,lpips,clip_metric");
    ASSERT_TRUE(std::getline(csv, line));
    EXPECT_EQ(line.rfind("ours,replace,0.125,62.5", 0), 0u);
    ASSERT_TRUE(std::getline(csv, line)); // remove falls back to clip_no
    EXPECT_EQ(line.rfind("ours,remove,0.25,80", 0), 0u);
    EXPECT_FALSE(std::getline(csv, line)); // errored sample skipped

    std::string table = format_summary_table(report);
    EXPECT_NE(table.find("task"), std::string::npos);
    EXPECT_NE(table.find("replace"), std::string::npos);
    EXPECT_NE(table.find("62.50"), std::string::npos);
    EXPECT_NE(table.find("n/a"), std::string::npos); // remove has no clip_o
}

TEST(DirectorySource, LoadsAndTagsIds) {
    fs::path dir = fs::temp_directory_path() / "flexedit_eval_dirsrc";
    fs::remove_all(dir);
    fs::create_directories(dir / "sA");
    save_image_png((dir / "sA" / "source.png").string(), gradient_image(4, 4));
    save_image_png((dir / "sA" / "edited.png").string(), gradient_image(4, 4, 0.1f));

    SampleImageSource source = make_directory_source(dir.string());
    BenchSample s = sample(TaskKind::remove, "sA");
    auto [a, b] = source(s);
    EXPECT_EQ(a.id, "sA");
    EXPECT_EQ(b.id, "sA-edited");
    EXPECT_EQ(a.pixels.h, 4);
    EXPECT_EQ(b.pixels.w, 4);

    BenchSample missing = sample(TaskKind::remove, "sB");
    EXPECT_THROW(source(missing), std::runtime_error);
}
