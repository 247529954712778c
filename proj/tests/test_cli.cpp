#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "flexedit/benchgen.hpp"
#include "flexedit/image.hpp"
#include "flexedit/trajectory.hpp"

using namespace flexedit;
namespace fs = std::filesystem;

// End-to-end checks against the installed binary; FLEXEDIT_CLI_PATH is
// injected by the build.

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path &p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path workdir(const std::string &name) {
    fs::path dir = fs::temp_directory_path() / "flexedit_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunResult run_cli(const fs::path &dir, const std::string &args) {
    std::string cmd = "cd '" + dir.string() + "' && '" + FLEXEDIT_CLI_PATH + "' " + args +
                      " >cli_stdout.txt 2>cli_stderr.txt";
    int status = std::system(cmd.c_str());
    RunResult r;
    if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
    r.out = slurp(dir / "cli_stdout.txt");
    r.err = slurp(dir / "cli_stderr.txt");
    return r;
}

Image gradient_image(int h, int w) {
    Image im(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            im.at(y, x, 0) = static_cast<float>(x) / (w - 1);
            im.at(y, x, 1) = static_cast<float>(y) / (h - 1);
            im.at(y, x, 2) = 0.25f;
        }
    return im;
}

// Fixture mask: a filled block written at image resolution.
void write_block_mask(const fs::path &path, int h, int w, int y0, int y1, int x0, int x1) {
    Mask2D m(h, w);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
    fs::create_directories(path.parent_path());
    save_mask_png(path.string(), m);
}

size_t line_count(const fs::path &p) {
    std::ifstream f(p);
    std::string line;
    size_t n = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++n;
    return n;
}

} // namespace

TEST(CliInvert, WritesTrajectory) {
    fs::path dir = workdir("invert");
    save_image_png((dir / "img.png").string(), gradient_image(16, 16));

    RunResult r = run_cli(dir, "invert --image img.png --prompt \"A photo of cat on beach.\" "
                               "--T 6 --out traj");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("inverted img.png: T=6 shape=12x8x8 -> traj"), std::string::npos);

    LatentTrajectory traj = load_trajectory((dir / "traj").string());
    EXPECT_EQ(traj.T(), 6);
    validate_trajectory(traj);
    for (int t = 0; t <= 6; ++t)
        EXPECT_TRUE(fs::exists(dir / "traj" / ("z_" + std::to_string(t) + ".bin")));
}

TEST(CliEdit, RemoveIsDeterministicAndSkipsOptimizer) {
    fs::path dir = workdir("edit-remove");
    save_image_png((dir / "img.png").string(), gradient_image(16, 16));
    write_block_mask(dir / "fx" / "img1" / "cat.png", 16, 16, 4, 10, 4, 10);

    RunResult inv = run_cli(dir, "invert --image img.png --prompt \"A photo of cat on "
                                 "beach.\" --T 8 --out traj --seed 5");
    ASSERT_EQ(inv.code, 0) << inv.err;

    const std::string edit_args =
        "edit --task remove --trajectory traj --image-id img1 "
        "--source-prompt \"A photo of cat on beach.\" "
        "--target-prompt \"A photo of on beach.\" "
        "--source-objects cat --fixtures fx --T 8 --seed 5 --out ";
    RunResult r1 = run_cli(dir, edit_args + "run1");
    ASSERT_EQ(r1.code, 0) << r1.err;
    EXPECT_NE(r1.out.find("task=remove"), std::string::npos);
    EXPECT_NE(r1.out.find("optimizer_iterations=0"), std::string::npos);
    EXPECT_NE(r1.out.find("image=edited.png"), std::string::npos);

    RunResult r2 = run_cli(dir, edit_args + "run2");
    ASSERT_EQ(r2.code, 0) << r2.err;
    for (const char *f : {"edited_latent.bin", "diagnostics.jsonl", "edited.png"})
        EXPECT_EQ(slurp(dir / "run1" / f), slurp(dir / "run2" / f)) << f;

    // a different backend seed produces a different latent
    RunResult r3 = run_cli(dir, "edit --task remove --trajectory traj --image-id img1 "
                                "--source-prompt \"A photo of cat on beach.\" "
                                "--target-prompt \"A photo of on beach.\" "
                                "--source-objects cat --fixtures fx --T 8 --seed 6 --out run3");
    ASSERT_EQ(r3.code, 0) << r3.err;
    EXPECT_NE(slurp(dir / "run1" / "edited_latent.bin"),
              slurp(dir / "run3" / "edited_latent.bin"));

    // no diagnostics row reports an optimizer step
    std::ifstream diag(dir / "run1" / "diagnostics.jsonl");
    std::string line;
    size_t rows = 0;
    while (std::getline(diag, line)) {
        nlohmann::json j = nlohmann::json::parse(line);
        EXPECT_FALSE(j.at("optimized").get<bool>());
        EXPECT_TRUE(j.at("l_pos").is_null());
        EXPECT_TRUE(j.at("l_sep").is_null());
        EXPECT_EQ(j.at("grad_norm").get<double>(), 0.0);
        ++rows;
    }
    EXPECT_EQ(rows, 8u);
}

TEST(CliEdit, ReplaceFromImageWritesManifestAndAttention) {
    fs::path dir = workdir("edit-replace");
    save_image_png((dir / "img.png").string(), gradient_image(16, 16));
    write_block_mask(dir / "fx" / "img" / "cat.png", 16, 16, 4, 10, 4, 10);

    RunResult r = run_cli(dir, "edit --task replace --image img.png "
                               "--source-prompt \"A photo of cat on beach.\" "
                               "--target-prompt \"A photo of dog on beach.\" "
                               "--source-objects cat --target-objects dog "
                               "--fixtures fx --T 4 --seed 3 --dump-attention --out out");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("task=replace steps=4"), std::string::npos);

    for (const char *f : {"edited_latent.bin", "diagnostics.jsonl", "manifest.json",
                          "edited.png"})
        EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;

    nlohmann::json manifest = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
    EXPECT_EQ(manifest.at("seed"), 3);
    EXPECT_NE(manifest.at("backend").get<std::string>().find("toy"), std::string::npos);
    EXPECT_EQ(manifest.at("spec").at("task"), "replace");
    EXPECT_EQ(manifest.at("config").at("T"), 4);
    EXPECT_EQ(manifest.at("outputs").at("edited_image"), "edited.png");
    EXPECT_EQ(manifest.at("outputs").at("attention"), "attention");

    // per-step blending mask plus per-token refined/dynamic dumps
    EXPECT_TRUE(fs::exists(dir / "out" / "attention" / "t1_mask.png"));
    bool any_refined = false, any_dynamic = false;
    for (const auto &e : fs::directory_iterator(dir / "out" / "attention")) {
        const std::string name = e.path().filename().string();
        if (name.find("_refined.png") != std::string::npos) any_refined = true;
        if (name.find("_dynamic.png") != std::string::npos) any_dynamic = true;
    }
    EXPECT_TRUE(any_refined);
    EXPECT_TRUE(any_dynamic);
}

TEST(CliEdit, UsageErrorsExitTwo) {
    fs::path dir = workdir("edit-usage");
    save_image_png((dir / "img.png").string(), gradient_image(16, 16));

    // missing required prompts
    EXPECT_EQ(run_cli(dir, "edit --task remove").code, 2);

    // both or neither latent source
    RunResult both = run_cli(dir, "edit --task remove --image img.png --trajectory traj "
                                  "--source-prompt a --target-prompt b");
    EXPECT_EQ(both.code, 2);
    EXPECT_NE(both.err.find("exactly one of --image or --trajectory"), std::string::npos);
    EXPECT_EQ(run_cli(dir, "edit --task remove --source-prompt a --target-prompt b").code, 2);

    // unknown task and malformed centroid
    EXPECT_EQ(run_cli(dir, "edit --task swap --image img.png --source-prompt a "
                           "--target-prompt b")
                  .code,
              2);
    EXPECT_EQ(run_cli(dir, "edit --task replace --image img.png --source-prompt a "
                           "--target-prompt b --source-objects cat --target-objects dog "
                           "--centroid 0.5")
                  .code,
              2);

    // unknown backend name
    RunResult bogus = run_cli(dir, "invert --image img.png --prompt a --backend bogus");
    EXPECT_EQ(bogus.code, 2);
    EXPECT_NE(bogus.err.find("bogus"), std::string::npos);

    // spec validation: removal cannot carry target objects
    EXPECT_EQ(run_cli(dir, "edit --task remove --image img.png --source-prompt a "
                           "--target-prompt b --source-objects cat --target-objects dog")
                  .code,
              2);
}

TEST(CliEdit, StageErrorsExitThree) {
    fs::path dir = workdir("edit-stage");
    save_image_png((dir / "img.png").string(), gradient_image(16, 16));

    // source objects but no fixture provider
    RunResult noseg = run_cli(dir, "edit --task remove --image img.png --source-prompt "
                                   "\"A photo of cat.\" --target-prompt \"A photo.\" "
                                   "--source-objects cat --T 4");
    EXPECT_EQ(noseg.code, 3);
    EXPECT_NE(noseg.err.find("error in stage segmentation"), std::string::npos);

    // missing input image
    EXPECT_EQ(run_cli(dir, "invert --image absent.png --prompt a").code, 3);

    // the external adapter is a stub in this build
    RunResult ext = run_cli(dir, "invert --image img.png --prompt a --backend "
                                 "external-adapter");
    EXPECT_EQ(ext.code, 3);
    EXPECT_NE(ext.err.find("not bundled"), std::string::npos);
}

TEST(CliGenSyno, CountsAndDeterminism) {
    fs::path dir = workdir("gen-syno");
    RunResult r = run_cli(dir, "gen-syno --out syno.jsonl --emit-groups groups.json");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("wrote 1283 samples (596 replace, 596 add, 91 remove) -> syno.jsonl"),
              std::string::npos);
    EXPECT_EQ(line_count(dir / "syno.jsonl"), 1283u);

    // rerun, and rerun from the emitted groups file: same bytes
    RunResult r2 = run_cli(dir, "gen-syno --out syno2.jsonl");
    ASSERT_EQ(r2.code, 0);
    EXPECT_EQ(slurp(dir / "syno.jsonl"), slurp(dir / "syno2.jsonl"));
    RunResult r3 = run_cli(dir, "gen-syno --groups groups.json --out syno3.jsonl");
    ASSERT_EQ(r3.code, 0) << r3.err;
    EXPECT_EQ(slurp(dir / "syno.jsonl"), slurp(dir / "syno3.jsonl"));

    auto samples = load_sample_manifest((dir / "syno.jsonl").string());
    ASSERT_EQ(samples.size(), 1283u);
    EXPECT_EQ(samples.front().kind, TaskKind::replace);
    EXPECT_EQ(samples.back().kind, TaskKind::remove);
}

TEST(CliCurate, ReplayTranscript) {
    fs::path dir = workdir("curate");
    std::vector<BenchSample> samples = {
        make_sample(TaskKind::replace, "cat", std::string("dog"), "on beach"),
        make_sample(TaskKind::add, "cat", std::string("dog"), "on beach"),
        make_sample(TaskKind::remove, "cat", std::nullopt, "on beach"),
    };
    write_sample_manifest((dir / "manifest.jsonl").string(), samples);

    std::ofstream tf(dir / "transcript.jsonl");
    tf << nlohmann::json{{"id", samples[0].id}, {"response", "cat-dog"}} << "\n";
    tf << nlohmann::json{{"id", samples[1].id}, {"response", "garbage"}} << "\n";
    tf << nlohmann::json{{"id", samples[2].id}, {"response", "cat-None"}} << "\n";
    tf.close();

    RunResult r = run_cli(dir, "curate --manifest manifest.jsonl --transcript "
                               "transcript.jsonl --out curation.jsonl");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("3 prompts, 2 parsed responses"), std::string::npos);

    std::ifstream cf(dir / "curation.jsonl");
    std::string line;
    std::vector<nlohmann::json> recs;
    while (std::getline(cf, line)) recs.push_back(nlohmann::json::parse(line));
    ASSERT_EQ(recs.size(), 3u);

    EXPECT_EQ(recs[0].at("a"), "cat");
    EXPECT_EQ(recs[0].at("b"), "dog");
    EXPECT_EQ(recs[0].at("role"), kCurationRole);
    EXPECT_EQ(recs[0].at("prompt"),
              build_curation_prompt(TaskKind::replace, samples[0].instruction).text);

    // malformed response is recorded, not fatal
    EXPECT_TRUE(recs[1].at("a").is_null());
    EXPECT_NE(recs[1].at("error").get<std::string>().find("garbage"), std::string::npos);

    EXPECT_EQ(recs[2].at("a"), "cat");
    EXPECT_TRUE(recs[2].at("b").is_null());

    // without a transcript only the prompts are produced
    RunResult prompts = run_cli(dir, "curate --manifest manifest.jsonl --out prompts.jsonl");
    ASSERT_EQ(prompts.code, 0);
    EXPECT_NE(prompts.out.find("3 prompts, 0 parsed responses"), std::string::npos);
}

TEST(CliEvaluate, ScoresFixtureDirectory) {
    fs::path dir = workdir("evaluate");
    std::vector<BenchSample> samples = {
        make_sample(TaskKind::replace, "cat", std::string("dog"), "on beach"),
        make_sample(TaskKind::remove, "cat", std::nullopt, "on beach"),
    };
    write_sample_manifest((dir / "manifest.jsonl").string(), samples);

    Image src = gradient_image(16, 16);
    Image edited = src;
    for (int y = 4; y < 10; ++y)
        for (int x = 4; x < 10; ++x) edited.at(y, x, 0) = 1.0f - edited.at(y, x, 0);
    for (const BenchSample &s : samples) {
        fs::create_directories(dir / "outputs" / s.id);
        save_image_png((dir / "outputs" / s.id / "source.png").string(), src);
        save_image_png((dir / "outputs" / s.id / "edited.png").string(), edited);
        write_block_mask(dir / "fx" / s.id / "cat.png", 16, 16, 4, 10, 4, 10);
    }
    // the replacement target object is segmented in the edited image
    write_block_mask(dir / "fx" / (samples[0].id + "-edited") / "dog.png", 16, 16, 4, 10, 4,
                     10);

    RunResult r = run_cli(dir, "evaluate --manifest manifest.jsonl --outputs outputs "
                               "--fixtures fx --out eval");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("task       count errors"), std::string::npos);
    EXPECT_NE(r.out.find("replace"), std::string::npos);
    EXPECT_NE(r.out.find("remove"), std::string::npos);

    nlohmann::json report = nlohmann::json::parse(slurp(dir / "eval" / "report.json"));
    ASSERT_EQ(report.at("samples").size(), 2u);
    EXPECT_EQ(report.at("aggregates").at("replace").at("count"), 1);
    EXPECT_EQ(report.at("aggregates").at("replace").at("errors"), 0);

    std::string csv = slurp(dir / "eval" / "scatter.csv");
    EXPECT_EQ(csv.rfind("method,task,lpips,clip_metric", 0), 0u);
    EXPECT_NE(csv.find("flexedit,replace,"), std::string::npos);

    // missing fixtures root is a usage error
    EXPECT_EQ(run_cli(dir, "evaluate --manifest manifest.jsonl --outputs outputs").code, 2);

    // every sample failing (no rendered outputs) is a stage failure
    fs::create_directories(dir / "empty");
    RunResult fail = run_cli(dir, "evaluate --manifest manifest.jsonl --outputs empty "
                                  "--fixtures fx --out eval2");
    EXPECT_EQ(fail.code, 3);
    EXPECT_NE(fail.err.find("all 2 samples failed"), std::string::npos);
}
