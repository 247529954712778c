#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "flexedit/backend.hpp"
#include "flexedit/constraints.hpp"
#include "flexedit/masks.hpp"
#include "flexedit/trajectory.hpp"

namespace flexedit {

// Failure with the pipeline stage attached, so callers can report which
// phase fell over.
class EditStageError : public std::runtime_error {
public:
    EditStageError(std::string stage, const std::string &what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string &stage() const { return stage_; }

private:
    std::string stage_;
};

struct EditSpec {
    TaskKind kind = TaskKind::replace;
    std::string source_prompt;
    std::string target_prompt;
    std::vector<std::string> source_objects;
    std::vector<std::string> target_objects;
    ConstraintTargets targets;

    void validate() const {
        if (source_prompt.empty() || target_prompt.empty())
            throw std::invalid_argument("edit spec: prompts must be non-empty");
        switch (kind) {
        case TaskKind::replace:
            if (source_objects.empty() || target_objects.empty())
                throw std::invalid_argument("edit spec: replace needs source and target objects");
            break;
        case TaskKind::add:
            if (target_objects.empty())
                throw std::invalid_argument("edit spec: add needs a target object");
            if (source_objects.empty())
                throw std::invalid_argument(
                    "edit spec: add needs at least one existing object to keep clear of");
            break;
        case TaskKind::remove:
            if (source_objects.empty())
                throw std::invalid_argument("edit spec: remove needs a source object");
            if (!target_objects.empty())
                throw std::invalid_argument("edit spec: remove takes no target objects");
            break;
        }
        if (kind != TaskKind::replace && (targets.centroid || targets.size))
            throw std::invalid_argument(
                "edit spec: centroid and size targets apply to replacement only");
        validate_targets(targets);
    }
};

struct EditConfig {
    int T = 50;
    float guidance = 7.5f;
    int tau = 4;
    float beta = 0.6f;
    float alpha_start = 20.0f;
    float alpha_end = 10.0f;
    std::vector<int> checkpoints = {1, 10, 15, 20};
    std::vector<float> geom_thresholds = {0.4f, 0.2f, 0.1f, 0.05f};
    std::vector<float> sep_thresholds = {0.8f, 0.5f, 0.3f, 0.1f};
    int max_inner_iters = 20;
    int dilation_radius = 1;
    float soft_temperature = 0.05f;

    void validate() const {
        if (T < 1) throw std::invalid_argument("edit config: T must be at least 1");
        if (!(guidance >= 0.0f))
            throw std::invalid_argument("edit config: guidance must be non-negative");
        if (tau < 0) throw std::invalid_argument("edit config: tau must be non-negative");
        if (!(beta >= 0.0f && beta <= 1.0f))
            throw std::invalid_argument("edit config: beta must lie in [0,1]");
        if (!(alpha_start >= 0.0f) || !(alpha_end >= 0.0f))
            throw std::invalid_argument("edit config: alpha range must be non-negative");
        if (max_inner_iters < 1)
            throw std::invalid_argument("edit config: max_inner_iters must be at least 1");
        if (dilation_radius < 0)
            throw std::invalid_argument("edit config: dilation radius must be non-negative");
        if (!(soft_temperature > 0.0f))
            throw std::invalid_argument("edit config: soft temperature must be positive");
        if (checkpoints.size() != geom_thresholds.size() ||
            checkpoints.size() != sep_thresholds.size())
            throw std::invalid_argument(
                "edit config: one geometry and one separation threshold per checkpoint");
        for (size_t i = 0; i < checkpoints.size(); ++i) {
            if (checkpoints[i] < 1)
                throw std::invalid_argument("edit config: checkpoints are 1-based step indices");
            if (i > 0 && checkpoints[i] <= checkpoints[i - 1])
                throw std::invalid_argument("edit config: checkpoints must increase");
            if (!(geom_thresholds[i] > 0.0f) || !(sep_thresholds[i] > 0.0f))
                throw std::invalid_argument("edit config: thresholds must be positive");
        }
    }
};

// Linear decay of the optimization step size over the denoising run:
// alpha_end at t=0 up to alpha_start at t=T.
inline double alpha_schedule(int t, const EditConfig &cfg) {
    if (t < 0 || t > cfg.T)
        throw std::out_of_range("alpha_schedule: t must lie in [0, T]");
    return cfg.alpha_end +
           (static_cast<double>(cfg.alpha_start) - cfg.alpha_end) * t / cfg.T;
}

struct StepRecord {
    int timestep = 0;   // level of the latent the iteration acted on
    int step_index = 0; // denoising iteration, 1-based from the start
    int inner_iter = 0; // 1-based within the step
    bool checkpoint = false;
    bool optimized = false;
    double alpha = 0.0;
    double grad_norm = 0.0;
    std::optional<double> l_pos, l_size, l_sep;
    double l_optim = 0.0;
    size_t mask_area = 0;
};

// Final state of one denoising step.
struct StepSnapshot {
    int timestep = 0;
    AdaptiveMask mask;
    std::vector<RefinedMap> refined;
    std::vector<DynamicMask> dynamic;
    Latent blended;
};

struct EditDiagnostics {
    std::vector<StepRecord> records;
    std::vector<StepSnapshot> steps;
};

struct EditResult {
    Latent final_latent;
    std::optional<Image> edited_image;
    EditDiagnostics diagnostics;
};

// Lowercased words with punctuation trimmed, the form prompt tokenizers
// are expected to produce, so object labels line up with prompt tokens.
inline std::vector<std::string> label_words(const std::string &s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&]() {
        size_t b = 0, e = cur.size();
        while (b < e && !std::isalnum(static_cast<unsigned char>(cur[b]))) ++b;
        while (e > b && !std::isalnum(static_cast<unsigned char>(cur[e - 1]))) --e;
        if (e > b) out.push_back(cur.substr(b, e - b));
        cur.clear();
    };
    for (char raw : s) {
        if (std::isspace(static_cast<unsigned char>(raw)))
            flush();
        else
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(raw))));
    }
    flush();
    return out;
}

// One gradient step z - alpha * grad(loss).  The loss is any scalar of the
// latent; the backend supplies the gradient.
inline Latent optimize_latent(const Latent &z, const std::function<double(const Latent &)> &loss,
                              double alpha, const DenoiserBackend &backend,
                              double *grad_norm_out = nullptr) {
    Tensor3 grad = backend.gradient_oracle(loss, z);
    if (!grad.same_shape(z.data))
        throw EditStageError("optimization", "gradient shape does not match the latent");
    if (!all_finite(grad))
        throw EditStageError("optimization", "non-finite gradient");
    double norm2 = 0.0;
    Latent out = z;
    for (size_t i = 0; i < grad.v.size(); ++i) {
        norm2 += static_cast<double>(grad.v[i]) * grad.v[i];
        out.data.v[i] = static_cast<float>(z.data.v[i] - alpha * grad.v[i]);
    }
    if (grad_norm_out) *grad_norm_out = std::sqrt(norm2);
    return out;
}

// Keep the edited latent inside the mask, the source latent outside it.
inline Latent blend_latent(const Latent &z_edit, const Latent &z_src, const AdaptiveMask &m) {
    if (!z_edit.data.same_shape(z_src.data))
        throw std::invalid_argument("blend_latent: latent shapes differ");
    if (z_edit.timestep != z_src.timestep)
        throw std::invalid_argument("blend_latent: latents sit at different timesteps");
    if (m.bits.h != z_edit.data.h || m.bits.w != z_edit.data.w)
        throw std::invalid_argument("blend_latent: mask is not at latent resolution");
    if (m.timestep >= 0 && m.timestep != z_edit.timestep)
        throw std::invalid_argument("blend_latent: mask tagged for a different timestep");
    Latent out = z_edit;
    for (int c = 0; c < out.data.c; ++c)
        for (int y = 0; y < out.data.h; ++y)
            for (int x = 0; x < out.data.w; ++x)
                if (!m.bits.at(y, x))
                    out.data.at(c, y, x) = z_src.data.at(c, y, x);
    return out;
}

// Shared state for one editing run: prompt embeddings, resolved target
// token indices, source masks at latent resolution.
class EditSession {
public:
    EditSession(const EditSpec &spec, const EditConfig &cfg, const DenoiserBackend &backend,
                std::vector<SourceMask> source_masks, int latent_h, int latent_w)
        : spec_(spec), cfg_(cfg), backend_(backend), source_masks_(std::move(source_masks)),
          lat_h_(latent_h), lat_w_(latent_w) {
        spec_.validate();
        cfg_.validate();
        schedule_ = make_linear_schedule(cfg_.T, 0.01f, cfg_.guidance);
        target_emb_ = backend_.encode_text(spec_.target_prompt);
        uncond_emb_ = backend_.encode_text("");
        for (const std::string &obj : spec_.target_objects)
            for (const std::string &tok : label_words(obj)) {
                auto idx = target_emb_.token_index(tok);
                if (!idx)
                    throw std::invalid_argument("edit: target object token '" + tok +
                                                "' does not appear in the target prompt");
                if (std::find(target_tokens_.begin(), target_tokens_.end(), *idx) ==
                    target_tokens_.end())
                    target_tokens_.push_back(*idx);
            }
        existing_union_ = Mask2D(lat_h_, lat_w_);
        for (const SourceMask &s : source_masks_) {
            if (s.bits.h != lat_h_ || s.bits.w != lat_w_)
                throw std::invalid_argument("edit: source mask '" + s.label +
                                            "' is not at latent resolution");
            for (size_t i = 0; i < existing_union_.v.size(); ++i)
                existing_union_.v[i] |= s.bits.v[i];
        }
    }

    const NoiseSchedule &schedule() const { return schedule_; }

    // One denoising step t -> t-1 with per-step optimization and blending.
    Latent step(const Latent &z_t, const Latent &z_src_prev, int step_index,
                EditDiagnostics *diag) {
        const int t = z_t.timestep;
        if (t < 1 || t > cfg_.T)
            throw std::invalid_argument("edit step: latent timestep out of range");
        if (z_src_prev.timestep != t - 1)
            throw std::invalid_argument("edit step: source latent is not at level t-1");

        NoisePrediction pred =
            guided_noise(backend_, z_t, t, target_emb_, uncond_emb_, cfg_.guidance);
        Latent z_cur = ddim_denoise_step(z_t, pred.eps, t, schedule_);
        const int level = t - 1;
        const double alpha = alpha_schedule(level, cfg_);

        int cp_pos = -1;
        for (size_t i = 0; i < cfg_.checkpoints.size(); ++i)
            if (cfg_.checkpoints[i] == step_index) cp_pos = static_cast<int>(i);
        // Removal never optimizes; replacement without placement targets
        // has no objective either and degenerates to blending alone.
        const bool needs_attention = spec_.kind != TaskKind::remove;
        const bool has_objective =
            needs_attention && (spec_.kind == TaskKind::add || spec_.targets.centroid ||
                                spec_.targets.size);
        const bool is_checkpoint = cp_pos >= 0 && has_objective;
        const int max_iters = is_checkpoint ? cfg_.max_inner_iters : 1;

        Latent z_blend;
        for (int iter = 1;; ++iter) {
            StepRecord rec;
            rec.timestep = level;
            rec.step_index = step_index;
            rec.inner_iter = iter;
            rec.checkpoint = is_checkpoint;
            rec.optimized = has_objective;
            rec.alpha = alpha;

            if (has_objective) {
                auto loss = [&](const Latent &zc) { return optim_loss(zc, level).optim; };
                z_cur = optimize_latent(z_cur, loss, alpha, backend_, &rec.grad_norm);
            }

            std::vector<RefinedMap> refined;
            std::vector<DynamicMask> dynamic;
            LossBreakdown losses;
            if (needs_attention) {
                losses = eval_state(z_cur, level, &refined, &dynamic);
                rec.l_pos = losses.pos;
                rec.l_size = losses.size;
                rec.l_sep = losses.sep;
                rec.l_optim = losses.optim;
            }

            AdaptiveMask amask = adaptive_mask(source_masks_, dynamic, cfg_.dilation_radius,
                                               lat_h_, lat_w_, level);
            rec.mask_area = amask.bits.area();
            z_blend = blend_latent(z_cur, z_src_prev, amask);
            if (diag) diag->records.push_back(rec);

            const bool met = !is_checkpoint || thresholds_met(losses, cp_pos);
            if (met || iter >= max_iters) {
                if (diag) {
                    StepSnapshot snap;
                    snap.timestep = level;
                    snap.mask = amask;
                    snap.refined = std::move(refined);
                    snap.dynamic = std::move(dynamic);
                    snap.blended = z_blend;
                    diag->steps.push_back(std::move(snap));
                }
                break;
            }
            z_cur = z_blend;
        }
        return z_blend;
    }

    EditResult run(const LatentTrajectory &traj, const ImageCodec *codec) {
        validate_trajectory(traj);
        if (traj.T() != cfg_.T)
            throw std::invalid_argument("edit: trajectory has " + std::to_string(traj.T()) +
                                        " steps but the config asks for " +
                                        std::to_string(cfg_.T));
        const Tensor3 &d0 = traj.steps.front().data;
        if (d0.h != lat_h_ || d0.w != lat_w_)
            throw std::invalid_argument("edit: trajectory resolution does not match the masks");

        EditResult result;
        Latent z = traj.steps.back();
        for (int t = cfg_.T; t >= 1; --t)
            z = step(z, traj.steps[t - 1], cfg_.T - t + 1, &result.diagnostics);
        result.final_latent = std::move(z);
        if (codec) {
            try {
                result.edited_image = codec->decode(result.final_latent);
            } catch (const std::exception &e) {
                throw EditStageError("decode", e.what());
            }
        }
        return result;
    }

    // Loss terms for the current latent from its conditional attention.
    LossBreakdown eval_state(const Latent &z, int level, std::vector<RefinedMap> *refined_out,
                             std::vector<DynamicMask> *dynamic_out) const {
        AttentionRecord record = backend_.predict_noise(z, level, target_emb_).attention;
        AveragedMaps avg = average_maps(record);
        LossBreakdown parts;
        double acc_pos = 0.0, acc_size = 0.0, acc_sep = 0.0;
        Mask2D existing_fine;
        for (int tok : target_tokens_) {
            if (tok >= static_cast<int>(avg.cross.size()))
                throw std::runtime_error("edit: attention record is missing a prompt token");
            RefinedMap rm = refine(avg.cross[tok], avg.self_attn, cfg_.tau);
            rm.token = tok;
            rm.timestep = level;
            Map2D soft = soft_mask(rm.values, cfg_.beta, cfg_.soft_temperature);
            ObjectGeometry geo = geometry(soft);
            if (spec_.targets.centroid)
                acc_pos += loss_pos(geo, soft.h, soft.w, *spec_.targets.centroid);
            if (spec_.targets.size)
                acc_size += loss_size(geo, *spec_.targets.size);
            if (spec_.kind == TaskKind::add) {
                if (existing_fine.h != soft.h || existing_fine.w != soft.w)
                    existing_fine = nearest_resize(existing_union_, soft.h, soft.w);
                acc_sep += loss_sep(soft, existing_fine);
            }
            if (dynamic_out) dynamic_out->push_back(binarize(rm, cfg_.beta));
            if (refined_out) refined_out->push_back(std::move(rm));
        }
        const double n = static_cast<double>(target_tokens_.size());
        if (n > 0) {
            if (spec_.targets.centroid) parts.pos = acc_pos / n;
            if (spec_.targets.size) parts.size = acc_size / n;
            if (spec_.kind == TaskKind::add) parts.sep = acc_sep / n;
        }
        return combine_losses(spec_.kind, parts);
    }

private:
    bool thresholds_met(const LossBreakdown &losses, int cp_pos) const {
        if (spec_.kind == TaskKind::add)
            return losses.sep && *losses.sep < cfg_.sep_thresholds[cp_pos];
        const float th = cfg_.geom_thresholds[cp_pos];
        if (losses.pos && !(*losses.pos < th)) return false;
        if (losses.size && !(*losses.size < th)) return false;
        return true;
    }

    LossBreakdown optim_loss(const Latent &z, int level) const {
        return eval_state(z, level, nullptr, nullptr);
    }

    EditSpec spec_;
    EditConfig cfg_;
    const DenoiserBackend &backend_;
    std::vector<SourceMask> source_masks_;
    int lat_h_, lat_w_;
    NoiseSchedule schedule_;
    TextEmbedding target_emb_, uncond_emb_;
    std::vector<int> target_tokens_;
    Mask2D existing_union_;
};

// Resolves source-object masks through the provider and brings them to
// latent resolution.
inline std::vector<SourceMask> resolve_source_masks(const EditSpec &spec,
                                                    const ImageHandle &source,
                                                    SegmentationProvider *provider, int lat_h,
                                                    int lat_w) {
    std::vector<SourceMask> out;
    if (spec.source_objects.empty()) return out;
    if (!provider)
        throw EditStageError("segmentation", "no segmentation provider configured");
    for (const std::string &label : spec.source_objects) {
        SegmentationResult r = provider->segment(source, label);
        if (r.status == SegStatus::error)
            throw EditStageError("segmentation",
                                 "provider failed for label '" + label + "': " + r.message);
        SourceMask sm;
        sm.label = label;
        if (r.status == SegStatus::empty)
            sm.bits = Mask2D(lat_h, lat_w);
        else
            sm.bits = (r.mask.h == lat_h && r.mask.w == lat_w)
                          ? r.mask
                          : nearest_resize(r.mask, lat_h, lat_w);
        out.push_back(std::move(sm));
    }
    return out;
}

// Editing stage over a recorded trajectory.  The codec is optional; without
// one the result carries only the final latent.
inline EditResult edit(const LatentTrajectory &traj, const EditSpec &spec, const EditConfig &cfg,
                       const DenoiserBackend &backend, const ImageCodec *codec,
                       SegmentationProvider *provider, const ImageHandle *source_ref = nullptr) {
    validate_trajectory(traj);
    const Tensor3 &d0 = traj.steps.front().data;
    ImageHandle fallback;
    const ImageHandle &src = source_ref ? *source_ref : fallback;
    std::vector<SourceMask> masks = resolve_source_masks(spec, src, provider, d0.h, d0.w);
    EditSession session(spec, cfg, backend, std::move(masks), d0.h, d0.w);
    try {
        return session.run(traj, codec);
    } catch (const EditStageError &) {
        throw;
    } catch (const std::invalid_argument &) {
        throw; // caller misuse, not a pipeline failure
    } catch (const std::exception &e) {
        throw EditStageError("editing", e.what());
    }
}

// Full pipeline from a source image: encode, invert, edit, decode.
inline EditResult edit(const ImageHandle &source, const EditSpec &spec, const EditConfig &cfg,
                       const DenoiserBackend &backend, const ImageCodec &codec,
                       SegmentationProvider *provider) {
    cfg.validate();
    Latent z0;
    try {
        z0 = codec.encode(source.pixels);
    } catch (const std::exception &e) {
        throw EditStageError("encode", e.what());
    }
    LatentTrajectory traj;
    try {
        NoiseSchedule sched = make_linear_schedule(cfg.T, 0.01f, cfg.guidance);
        traj = forward_stage(z0, backend, sched, backend.encode_text(spec.source_prompt));
    } catch (const std::exception &e) {
        throw EditStageError("inversion", e.what());
    }
    return edit(traj, spec, cfg, backend, &codec, provider, &source);
}

// Spec-shaped single step helper: denoise z_in once against the source
// latent at the next level down, with optimization and blending.
inline Latent flexedit_block(const Latent &z_in, const Latent &z_src_prev, const EditSpec &spec,
                             const EditConfig &cfg, const DenoiserBackend &backend,
                             const std::vector<SourceMask> &source_masks, int step_index,
                             EditDiagnostics *diag = nullptr) {
    if (z_src_prev.data.h <= 0)
        throw std::invalid_argument("flexedit_block: empty source latent");
    EditSession session(spec, cfg, backend, source_masks, z_src_prev.data.h,
                        z_src_prev.data.w);
    return session.step(z_in, z_src_prev, step_index, diag);
}

inline nlohmann::json targets_to_json(const ConstraintTargets &t) {
    nlohmann::json j;
    j["centroid"] = t.centroid
                        ? nlohmann::json::array({(*t.centroid)[0], (*t.centroid)[1]})
                        : nlohmann::json();
    j["size"] = t.size ? nlohmann::json(*t.size) : nlohmann::json();
    return j;
}

inline nlohmann::json spec_to_json(const EditSpec &s) {
    nlohmann::json j;
    j["task"] = to_string(s.kind);
    j["source_prompt"] = s.source_prompt;
    j["target_prompt"] = s.target_prompt;
    j["source_objects"] = s.source_objects;
    j["target_objects"] = s.target_objects;
    j["targets"] = targets_to_json(s.targets);
    return j;
}

inline nlohmann::json config_to_json(const EditConfig &c) {
    nlohmann::json j;
    j["T"] = c.T;
    j["guidance"] = c.guidance;
    j["tau"] = c.tau;
    j["beta"] = c.beta;
    j["alpha_start"] = c.alpha_start;
    j["alpha_end"] = c.alpha_end;
    j["checkpoints"] = c.checkpoints;
    j["geom_thresholds"] = c.geom_thresholds;
    j["sep_thresholds"] = c.sep_thresholds;
    j["max_inner_iters"] = c.max_inner_iters;
    j["dilation_radius"] = c.dilation_radius;
    j["soft_temperature"] = c.soft_temperature;
    return j;
}

// Config echo plus relative artifact paths; everything a rerun needs.
inline void write_run_manifest(const std::string &path, const EditSpec &spec,
                               const EditConfig &cfg, const std::string &backend_name,
                               uint64_t seed,
                               const std::map<std::string, std::string> &outputs) {
    nlohmann::json j;
    j["backend"] = backend_name;
    j["seed"] = seed;
    j["spec"] = spec_to_json(spec);
    j["config"] = config_to_json(cfg);
    nlohmann::json outs;
    for (const auto &[k, v] : outputs) outs[k] = v;
    j["outputs"] = outs;
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("write_run_manifest: cannot write " + path);
    f << j.dump(2) << "\n";
}

// One line per (timestep, inner iteration).
inline void write_diagnostics_jsonl(const std::string &path, const EditDiagnostics &diag) {
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("write_diagnostics_jsonl: cannot write " + path);
    for (const StepRecord &r : diag.records) {
        nlohmann::json j;
        j["t"] = r.timestep;
        j["step"] = r.step_index;
        j["iter"] = r.inner_iter;
        j["checkpoint"] = r.checkpoint;
        j["optimized"] = r.optimized;
        j["alpha"] = r.alpha;
        j["grad_norm"] = r.grad_norm;
        j["l_pos"] = r.l_pos ? nlohmann::json(*r.l_pos) : nlohmann::json();
        j["l_size"] = r.l_size ? nlohmann::json(*r.l_size) : nlohmann::json();
        j["l_sep"] = r.l_sep ? nlohmann::json(*r.l_sep) : nlohmann::json();
        j["l_optim"] = r.l_optim;
        j["mask_area"] = r.mask_area;
        f << j.dump() << "\n";
    }
}

} // namespace flexedit
