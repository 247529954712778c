#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "flexedit/backend.hpp"

namespace flexedit {

static_assert(std::endian::native == std::endian::little,
              "trajectory files are little-endian; big-endian hosts are not supported");

// Source latents recorded during the forward stage.  steps[t] sits at
// diffusion level t, so the vector has T+1 entries.
struct LatentTrajectory {
    std::vector<Latent> steps;
    uint64_t seed = 0;

    int T() const { return static_cast<int>(steps.size()) - 1; }
};

inline void validate_trajectory(const LatentTrajectory &traj) {
    if (traj.steps.size() < 2)
        throw std::invalid_argument("trajectory: needs at least levels 0 and 1");
    const Tensor3 &d0 = traj.steps.front().data;
    if (d0.numel() == 0)
        throw std::invalid_argument("trajectory: empty latent");
    for (size_t t = 0; t < traj.steps.size(); ++t) {
        const Latent &z = traj.steps[t];
        if (z.timestep != static_cast<int>(t))
            throw std::invalid_argument("trajectory: step " + std::to_string(t) +
                                        " carries timestep " + std::to_string(z.timestep));
        if (!z.data.same_shape(d0))
            throw std::invalid_argument("trajectory: latent shape changes at step " +
                                        std::to_string(t));
        if (!all_finite(z.data))
            throw std::invalid_argument("trajectory: non-finite values at step " +
                                        std::to_string(t));
    }
}

// Deterministic inversion z_0 -> z_T.  Guidance is fixed at 1 here, i.e.
// the conditional prediction alone, so the editing stage can replay the
// trajectory exactly.
inline LatentTrajectory forward_stage(const Latent &z0, const DenoiserBackend &backend,
                                      const NoiseSchedule &schedule,
                                      const TextEmbedding &prompt) {
    validate_schedule(schedule);
    if (z0.timestep != 0)
        throw std::invalid_argument("forward_stage: input latent must sit at timestep 0");
    if (!all_finite(z0.data))
        throw std::invalid_argument("forward_stage: non-finite input latent");
    LatentTrajectory traj;
    traj.steps.reserve(schedule.T + 1);
    traj.steps.push_back(z0);
    for (int t = 0; t < schedule.T; ++t) {
        const Latent &cur = traj.steps.back();
        NoisePrediction pred = backend.predict_noise(cur, t, prompt);
        traj.steps.push_back(ddim_invert_step(cur, pred.eps, t, schedule));
    }
    return traj;
}

// Pass-through for precomputed trajectories; only validates.
inline const LatentTrajectory &forward_stage(const LatentTrajectory &recorded) {
    validate_trajectory(recorded);
    return recorded;
}

inline void save_trajectory(const std::string &dir, const LatentTrajectory &traj) {
    validate_trajectory(traj);
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const Tensor3 &d0 = traj.steps.front().data;

    nlohmann::json meta;
    meta["T"] = traj.T();
    meta["shape"] = {d0.c, d0.h, d0.w};
    meta["dtype"] = "f32";
    meta["byte_order"] = "little-endian";
    meta["seed"] = traj.seed;
    std::ofstream mf(fs::path(dir) / "meta.json");
    if (!mf)
        throw std::runtime_error("save_trajectory: cannot write meta.json in " + dir);
    mf << meta.dump(2) << "\n";
    mf.close();

    for (size_t t = 0; t < traj.steps.size(); ++t) {
        fs::path p = fs::path(dir) / ("z_" + std::to_string(t) + ".bin");
        std::ofstream f(p, std::ios::binary);
        if (!f)
            throw std::runtime_error("save_trajectory: cannot write " + p.string());
        const auto &v = traj.steps[t].data.v;
        f.write(reinterpret_cast<const char *>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(float)));
        if (!f)
            throw std::runtime_error("save_trajectory: short write on " + p.string());
    }
}

inline LatentTrajectory load_trajectory(const std::string &dir) {
    namespace fs = std::filesystem;
    fs::path meta_path = fs::path(dir) / "meta.json";
    std::ifstream mf(meta_path);
    if (!mf)
        throw std::runtime_error("load_trajectory: cannot open " + meta_path.string());
    nlohmann::json meta;
    try {
        mf >> meta;
    } catch (const nlohmann::json::exception &e) {
        throw std::runtime_error("load_trajectory: bad meta.json: " + std::string(e.what()));
    }

    const int T = meta.at("T").get<int>();
    const auto shape = meta.at("shape").get<std::vector<int>>();
    const std::string dtype = meta.at("dtype").get<std::string>();
    const std::string order = meta.at("byte_order").get<std::string>();
    if (T < 1)
        throw std::runtime_error("load_trajectory: meta T must be at least 1");
    if (shape.size() != 3 || shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0)
        throw std::runtime_error("load_trajectory: meta shape must be three positive dims");
    if (dtype != "f32")
        throw std::runtime_error("load_trajectory: unsupported dtype " + dtype);
    if (order != "little-endian")
        throw std::runtime_error("load_trajectory: unsupported byte order " + order);

    LatentTrajectory traj;
    if (meta.contains("seed"))
        traj.seed = meta["seed"].get<uint64_t>();
    const size_t numel =
        static_cast<size_t>(shape[0]) * static_cast<size_t>(shape[1]) * shape[2];

    std::vector<int> missing;
    for (int t = 0; t <= T; ++t)
        if (!fs::exists(fs::path(dir) / ("z_" + std::to_string(t) + ".bin")))
            missing.push_back(t);
    if (!missing.empty()) {
        std::ostringstream msg;
        msg << "load_trajectory: missing steps";
        for (int t : missing) msg << " " << t;
        throw std::runtime_error(msg.str());
    }

    for (int t = 0; t <= T; ++t) {
        fs::path p = fs::path(dir) / ("z_" + std::to_string(t) + ".bin");
        std::ifstream f(p, std::ios::binary);
        Latent z;
        z.timestep = t;
        z.data = Tensor3(shape[0], shape[1], shape[2]);
        f.read(reinterpret_cast<char *>(z.data.v.data()),
               static_cast<std::streamsize>(numel * sizeof(float)));
        if (static_cast<size_t>(f.gcount()) != numel * sizeof(float))
            throw std::runtime_error("load_trajectory: short read on " + p.string());
        traj.steps.push_back(std::move(z));
    }
    validate_trajectory(traj);
    return traj;
}

} // namespace flexedit
