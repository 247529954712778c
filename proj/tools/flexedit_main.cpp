// Command-line front end: invert, edit, evaluate, gen-syno, curate.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "flexedit/benchgen.hpp"
#include "flexedit/editor.hpp"
#include "flexedit/evaluation.hpp"
#include "flexedit/segmentation_http.hpp"
#include "flexedit/toy_backend.hpp"
#include "flexedit/trajectory.hpp"

namespace fs = std::filesystem;
using namespace flexedit;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitStage = 3;

struct BackendOpts {
    std::string backend = "toy";
    uint64_t seed = 0;
};

void add_backend_flags(CLI::App *cmd, BackendOpts &o) {
    cmd->add_option("--backend", o.backend, "Denoiser backend: toy or external-adapter")
        ->default_val("toy");
    cmd->add_option("--seed", o.seed, "Backend parameter seed")->default_val(0);
}

// The CLI accepts the external-adapter selector but this build only ships
// the toy backend.
std::unique_ptr<DenoiserBackend> make_backend(const BackendOpts &o, int c, int h, int w) {
    if (o.backend == "toy")
        return std::make_unique<ToyDenoiser>(o.seed, c, h, w);
    if (o.backend == "external-adapter")
        throw std::runtime_error(
            "backend: external-adapter is not bundled in this build; use the toy backend");
    throw CLI::ValidationError("--backend", "unknown backend '" + o.backend + "'");
}

std::string fixtures_root(const std::string &flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char *env = std::getenv("FLEXEDIT_FIXTURES")) return env;
    return "";
}

struct ConfigOpts {
    EditConfig cfg;
    std::vector<double> centroid;
    double size = 0.0;
    bool has_size = false;
};

void add_config_flags(CLI::App *cmd, ConfigOpts &o) {
    cmd->add_option("--T", o.cfg.T, "Denoising steps")->default_val(50);
    cmd->add_option("--guidance", o.cfg.guidance, "Classifier-free guidance scale")
        ->default_val(7.5f);
    cmd->add_option("--tau", o.cfg.tau, "Self-attention refinement rounds")->default_val(4);
    cmd->add_option("--beta", o.cfg.beta, "Mask binarization threshold")->default_val(0.6f);
    cmd->add_option("--alpha-start", o.cfg.alpha_start, "Optimization step size at t=T")
        ->default_val(20.0f);
    cmd->add_option("--alpha-end", o.cfg.alpha_end, "Optimization step size at t=0")
        ->default_val(10.0f);
    cmd->add_option("--checkpoints", o.cfg.checkpoints,
                    "Denoising step indices with iterated optimization");
    cmd->add_option("--geom-thresholds", o.cfg.geom_thresholds,
                    "Per-checkpoint position/size loss thresholds");
    cmd->add_option("--sep-thresholds", o.cfg.sep_thresholds,
                    "Per-checkpoint separation loss thresholds");
    cmd->add_option("--max-inner-iters", o.cfg.max_inner_iters,
                    "Iteration cap at a checkpoint")
        ->default_val(20);
    cmd->add_option("--dilation-radius", o.cfg.dilation_radius, "Blending mask dilation")
        ->default_val(1);
    cmd->add_option("--soft-temperature", o.cfg.soft_temperature,
                    "Soft mask logistic temperature")
        ->default_val(0.05f);
}

// ---------------------------------------------------------------- invert

struct InvertOpts {
    BackendOpts backend;
    std::string image, prompt, out = "trajectory";
    int T = 50;
    float guidance = 7.5f;
};

int cmd_invert(const InvertOpts &o) {
    Image img = load_image_png(o.image);
    ToyCodec codec;
    Latent z0 = codec.encode(img);
    auto backend = make_backend(o.backend, z0.data.c, z0.data.h, z0.data.w);
    NoiseSchedule sched = make_linear_schedule(o.T, 0.01f, o.guidance);
    LatentTrajectory traj =
        forward_stage(z0, *backend, sched, backend->encode_text(o.prompt));
    traj.seed = o.backend.seed;
    save_trajectory(o.out, traj);
    std::cout << "inverted " << o.image << ": T=" << o.T << " shape=" << z0.data.c << "x"
              << z0.data.h << "x" << z0.data.w << " -> " << o.out << "\n";
    return 0;
}

// ------------------------------------------------------------------ edit

struct EditOpts {
    BackendOpts backend;
    ConfigOpts config;
    std::string task;
    std::string image, image_id, trajectory;
    std::string source_prompt, target_prompt;
    std::vector<std::string> source_objects, target_objects;
    std::string fixtures;
    std::string out = "edit-out";
    bool dump_attention = false;
};

void write_latent_bin(const std::string &path, const Latent &z) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char *>(z.data.v.data()),
            static_cast<std::streamsize>(z.data.v.size() * sizeof(float)));
}

void dump_attention_files(const std::string &dir, const EditDiagnostics &diag) {
    fs::create_directories(dir);
    for (const StepSnapshot &snap : diag.steps) {
        const std::string base = dir + "/t" + std::to_string(snap.timestep);
        save_mask_png(base + "_mask.png", snap.mask.bits);
        for (const RefinedMap &rm : snap.refined)
            save_heatmap_png(base + "_tok" + std::to_string(rm.token) + "_refined.png",
                             rm.values);
        for (const DynamicMask &dm : snap.dynamic)
            save_mask_png(base + "_tok" + std::to_string(dm.token) + "_dynamic.png", dm.bits);
    }
}

int cmd_edit(const EditOpts &o) {
    EditSpec spec;
    spec.kind = task_from_string(o.task);
    spec.source_prompt = o.source_prompt;
    spec.target_prompt = o.target_prompt;
    spec.source_objects = o.source_objects;
    spec.target_objects = o.target_objects;
    if (!o.config.centroid.empty()) {
        if (o.config.centroid.size() != 2)
            throw std::invalid_argument("--centroid takes two values: x y");
        spec.targets.centroid = {o.config.centroid[0], o.config.centroid[1]};
    }
    if (o.config.has_size) spec.targets.size = o.config.size;
    spec.validate();
    o.config.cfg.validate();

    std::unique_ptr<SegmentationProvider> provider;
    const std::string froot = fixtures_root(o.fixtures);
    if (!froot.empty())
        provider = std::make_unique<FixtureSegmentationProvider>(froot);

    EditResult result;
    std::string backend_name;
    bool wrote_image = false;
    if (!o.image.empty()) {
        ImageHandle handle;
        handle.path = o.image;
        handle.id = o.image_id.empty() ? fs::path(o.image).stem().string() : o.image_id;
        handle.pixels = load_image_png(o.image);
        ToyCodec codec;
        Latent z0 = codec.encode(handle.pixels);
        auto backend = make_backend(o.backend, z0.data.c, z0.data.h, z0.data.w);
        backend_name = backend->name();
        result = edit(handle, spec, o.config.cfg, *backend, codec, provider.get());
    } else {
        LatentTrajectory traj = load_trajectory(o.trajectory);
        const Tensor3 &d0 = traj.steps.front().data;
        auto backend = make_backend(o.backend, d0.c, d0.h, d0.w);
        backend_name = backend->name();
        ImageHandle ref;
        ref.id = o.image_id;
        ToyCodec codec;
        const ImageCodec *cp = d0.c == ToyCodec::kChannels ? &codec : nullptr;
        result = edit(traj, spec, o.config.cfg, *backend, cp, provider.get(), &ref);
    }

    fs::create_directories(o.out);
    std::map<std::string, std::string> outputs;
    outputs["edited_latent"] = "edited_latent.bin";
    outputs["diagnostics"] = "diagnostics.jsonl";
    write_latent_bin(o.out + "/edited_latent.bin", result.final_latent);
    write_diagnostics_jsonl(o.out + "/diagnostics.jsonl", result.diagnostics);
    if (result.edited_image) {
        outputs["edited_image"] = "edited.png";
        save_image_png(o.out + "/edited.png", *result.edited_image);
        wrote_image = true;
    }
    if (o.dump_attention) {
        outputs["attention"] = "attention";
        dump_attention_files(o.out + "/attention", result.diagnostics);
    }
    write_run_manifest(o.out + "/manifest.json", spec, o.config.cfg, backend_name,
                       o.backend.seed, outputs);

    int optimizer_iters = 0;
    for (const StepRecord &r : result.diagnostics.records)
        if (r.optimized) ++optimizer_iters;
    std::cout << "edit complete: task=" << o.task << " steps=" << o.config.cfg.T
              << " optimizer_iterations=" << optimizer_iters
              << (wrote_image ? " image=edited.png" : " (latent only)") << " -> " << o.out
              << "\n";
    return 0;
}

// -------------------------------------------------------------- evaluate

struct EvaluateOpts {
    std::string manifest, outputs_dir, fixtures;
    std::string distance = "mad", scorer = "hash", method = "flexedit";
    uint64_t scorer_seed = 0;
    int workers = 1;
    std::string out = "eval-out";
};

int cmd_evaluate(const EvaluateOpts &o) {
    std::vector<BenchSample> samples = load_sample_manifest(o.manifest);
    const std::string froot = fixtures_root(o.fixtures);
    if (froot.empty())
        throw std::invalid_argument(
            "evaluation needs segmentation fixtures: pass --fixtures or set FLEXEDIT_FIXTURES");
    FixtureSegmentationProvider provider(froot);
    auto pd = make_perceptual_distance(o.distance);
    auto scorer = make_text_scorer(o.scorer, o.scorer_seed);
    MetricReport report = run_benchmark(samples, make_directory_source(o.outputs_dir), *pd,
                                        *scorer, provider, o.workers);
    fs::create_directories(o.out);
    write_report_json(o.out + "/report.json", report);
    write_scatter_csv(o.out + "/scatter.csv", report, o.method);
    std::cout << format_summary_table(report);

    size_t errored = 0;
    for (const SampleMetrics &m : report.samples)
        if (m.error) ++errored;
    for (const SampleMetrics &m : report.samples)
        if (m.error)
            std::cerr << "sample " << m.id << ": " << *m.error << "\n";
    if (!samples.empty() && errored == samples.size()) {
        std::cerr << "all " << errored << " samples failed\n";
        return kExitStage;
    }
    return 0;
}

// -------------------------------------------------------------- gen-syno

struct GenSynoOpts {
    std::string groups;
    std::string out = "syno.jsonl";
    std::string emit_groups;
};

int cmd_gen_syno(const GenSynoOpts &o) {
    std::vector<ObjectGroup> groups =
        o.groups.empty() ? default_object_groups() : load_groups(o.groups);
    if (!o.emit_groups.empty()) {
        std::ofstream f(o.emit_groups);
        if (!f) throw std::runtime_error("cannot write " + o.emit_groups);
        f << groups_to_json(groups).dump(4) << "\n";
    }
    std::vector<std::string> warnings;
    std::vector<BenchSample> samples = gen_syno(groups, &warnings);
    for (const std::string &w : warnings)
        std::cerr << "warning: " << w << "\n";
    write_sample_manifest(o.out, samples);
    int nrep = 0, nadd = 0, nrem = 0;
    for (const BenchSample &s : samples) {
        if (s.kind == TaskKind::replace) ++nrep;
        else if (s.kind == TaskKind::add) ++nadd;
        else ++nrem;
    }
    std::cout << "wrote " << samples.size() << " samples (" << nrep << " replace, " << nadd
              << " add, " << nrem << " remove) -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- curate

struct CurateOpts {
    std::string manifest;
    std::string transcript;
    std::string out = "curation.jsonl";
};

int cmd_curate(const CurateOpts &o) {
    std::ifstream f(o.manifest);
    if (!f) throw std::runtime_error("cannot open " + o.manifest);

    // Optional replay transcript: responses keyed by id.
    std::map<std::string, std::string> responses;
    if (!o.transcript.empty()) {
        std::ifstream tf(o.transcript);
        if (!tf) throw std::runtime_error("cannot open " + o.transcript);
        std::string line;
        while (std::getline(tf, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            nlohmann::json j = nlohmann::json::parse(line);
            responses[j.at("id").get<std::string>()] = j.at("response").get<std::string>();
        }
    }

    std::ofstream outf(o.out);
    if (!outf) throw std::runtime_error("cannot write " + o.out);
    std::string line;
    size_t lineno = 0, parsed_ok = 0, total = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        TaskKind kind;
        std::string instruction, id;
        try {
            j = nlohmann::json::parse(line);
            kind = task_from_string(j.at("task").get<std::string>());
            instruction = j.at("instruction").get<std::string>();
            id = j.value("id", "line-" + std::to_string(lineno));
        } catch (const std::exception &e) {
            throw CLI::ValidationError("--manifest", "line " + std::to_string(lineno) + ": " +
                                                         e.what());
        }
        ++total;
        CurationPrompt prompt = build_curation_prompt(kind, instruction);
        nlohmann::json rec;
        rec["id"] = id;
        rec["task"] = to_string(kind);
        rec["instruction"] = instruction;
        rec["role"] = kCurationRole;
        rec["prompt"] = prompt.text;
        auto rit = responses.find(id);
        if (rit == responses.end()) {
            rec["response"] = nullptr;
            rec["a"] = nullptr;
            rec["b"] = nullptr;
        } else {
            rec["response"] = rit->second;
            try {
                CurationAnswer ans = parse_curation_response(rit->second);
                rec["a"] = ans.a;
                rec["b"] = ans.b ? nlohmann::json(*ans.b) : nlohmann::json();
                ++parsed_ok;
            } catch (const CurationParseError &e) {
                rec["a"] = nullptr;
                rec["b"] = nullptr;
                rec["error"] = e.what();
            }
        }
        outf << rec.dump() << "\n";
    }
    std::cout << "curation: " << total << " prompts, " << parsed_ok << " parsed responses -> "
              << o.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Object-centric image editing: latent optimization with adaptive-mask "
                 "blending, plus benchmark tooling"};
    app.require_subcommand(1);

    InvertOpts inv;
    CLI::App *c_inv = app.add_subcommand("invert", "Record the source latent trajectory");
    add_backend_flags(c_inv, inv.backend);
    c_inv->add_option("--image", inv.image, "Source image (PNG)")->required();
    c_inv->add_option("--prompt", inv.prompt, "Source prompt")->required();
    c_inv->add_option("--T", inv.T, "Diffusion steps")->default_val(50);
    c_inv->add_option("--guidance", inv.guidance, "Guidance scale recorded in the schedule")
        ->default_val(7.5f);
    c_inv->add_option("--out", inv.out, "Trajectory output directory")
        ->default_val("trajectory");

    EditOpts ed;
    CLI::App *c_ed = app.add_subcommand("edit", "Run an object-centric edit");
    add_backend_flags(c_ed, ed.backend);
    add_config_flags(c_ed, ed.config);
    c_ed->add_option("--task", ed.task, "replace, add, or remove")->required();
    c_ed->add_option("--image", ed.image, "Source image (PNG); runs inversion first");
    c_ed->add_option("--image-id", ed.image_id, "Image id for fixture mask lookup");
    c_ed->add_option("--trajectory", ed.trajectory, "Precomputed trajectory directory");
    c_ed->add_option("--source-prompt", ed.source_prompt, "Prompt describing the source")
        ->required();
    c_ed->add_option("--target-prompt", ed.target_prompt, "Prompt describing the edit")
        ->required();
    c_ed->add_option("--source-objects", ed.source_objects, "Source object labels");
    c_ed->add_option("--target-objects", ed.target_objects, "Target object tokens");
    c_ed->add_option("--centroid", ed.config.centroid,
                     "Target centroid as fractions: x y")
        ->expected(2);
    c_ed->add_option("--size", ed.config.size, "Target area fraction");
    c_ed->add_option("--fixtures", ed.fixtures,
                     "Segmentation fixture root (or FLEXEDIT_FIXTURES)");
    c_ed->add_flag("--dump-attention", ed.dump_attention,
                   "Write refined-map heatmaps and masks per step");
    c_ed->add_option("--out", ed.out, "Output directory")->default_val("edit-out");

    EvaluateOpts ev;
    CLI::App *c_ev = app.add_subcommand("evaluate", "Score edited outputs against a manifest");
    c_ev->add_option("--manifest", ev.manifest, "Benchmark manifest (JSONL)")->required();
    c_ev->add_option("--outputs", ev.outputs_dir, "Directory of per-sample source/edited PNGs")
        ->required();
    c_ev->add_option("--fixtures", ev.fixtures,
                     "Segmentation fixture root (or FLEXEDIT_FIXTURES)");
    c_ev->add_option("--distance", ev.distance, "Perceptual distance")->default_val("mad");
    c_ev->add_option("--scorer", ev.scorer, "Image-text scorer")->default_val("hash");
    c_ev->add_option("--scorer-seed", ev.scorer_seed, "Scorer seed")->default_val(0);
    c_ev->add_option("--method", ev.method, "Method label for the scatter CSV")
        ->default_val("flexedit");
    c_ev->add_option("--workers", ev.workers, "Parallel evaluation workers")->default_val(1);
    c_ev->add_option("--out", ev.out, "Report output directory")->default_val("eval-out");

    GenSynoOpts gs;
    CLI::App *c_gs = app.add_subcommand("gen-syno", "Generate the synthetic benchmark");
    c_gs->add_option("--groups", gs.groups, "Object groups config (JSON); default built in");
    c_gs->add_option("--emit-groups", gs.emit_groups, "Also write the groups config used");
    c_gs->add_option("--out", gs.out, "Manifest output path (JSONL)")->default_val("syno.jsonl");

    CurateOpts cu;
    CLI::App *c_cu = app.add_subcommand("curate", "Build LLM curation prompts / parse replies");
    c_cu->add_option("--manifest", cu.manifest, "JSONL of {id, task, instruction}")->required();
    c_cu->add_option("--transcript", cu.transcript, "Replay responses from a transcript JSONL");
    c_cu->add_option("--out", cu.out, "Transcript output path")->default_val("curation.jsonl");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kExitUsage;
    }

    ed.config.has_size = c_ed->count("--size") > 0;
    if (c_ed->parsed()) {
        if (ed.image.empty() == ed.trajectory.empty()) {
            std::cerr << "edit: pass exactly one of --image or --trajectory\n";
            return kExitUsage;
        }
    }

    try {
        if (c_inv->parsed()) return cmd_invert(inv);
        if (c_ed->parsed()) return cmd_edit(ed);
        if (c_ev->parsed()) return cmd_evaluate(ev);
        if (c_gs->parsed()) return cmd_gen_syno(gs);
        if (c_cu->parsed()) return cmd_curate(cu);
    } catch (const CLI::ValidationError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const EditStageError &e) {
        std::cerr << "error in stage " << e.stage() << ": " << e.what() << "\n";
        return kExitStage;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    }
    return 0;
}
