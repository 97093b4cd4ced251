#include "avldm/avldm.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "codecs.hpp"
#include "config.hpp"
#include "data.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"

struct avldm_ctx {
    std::string last_error;
};

namespace {

constexpr const char* kVersion = "0.1.0";

avldm_status guard(avldm_ctx* ctx, const std::function<void()>& fn) {
    if (!ctx) return AVLDM_ERR_INVALID_ARG;
    try {
        fn();
        ctx->last_error.clear();
        return AVLDM_OK;
    } catch (const std::invalid_argument& e) {
        ctx->last_error = e.what();
        return AVLDM_ERR_INVALID_ARG;
    } catch (const std::runtime_error& e) {
        ctx->last_error = e.what();
        std::string msg = e.what();
        if (msg.find("diverged") != std::string::npos || msg.find("non-finite") != std::string::npos)
            return AVLDM_ERR_NUMERIC;
        if (msg.find("cannot read") != std::string::npos || msg.find("cannot write") != std::string::npos ||
            msg.find("missing") != std::string::npos || msg.find("truncated") != std::string::npos)
            return AVLDM_ERR_IO;
        if (msg.find("config") != std::string::npos) return AVLDM_ERR_CONFIG;
        return AVLDM_ERR_INTERNAL;
    } catch (const std::exception& e) {
        ctx->last_error = e.what();
        return AVLDM_ERR_INTERNAL;
    }
}

avldm_status need(avldm_ctx* ctx, bool cond, const char* msg) {
    if (cond) return AVLDM_OK;
    if (ctx) ctx->last_error = msg;
    return AVLDM_ERR_INVALID_ARG;
}

}  // namespace

extern "C" {

const char* avldm_version(void) { return kVersion; }

avldm_status avldm_ctx_new(avldm_ctx** out_ctx) {
    if (!out_ctx) return AVLDM_ERR_INVALID_ARG;
    *out_ctx = new (std::nothrow) avldm_ctx();
    return *out_ctx ? AVLDM_OK : AVLDM_ERR_INTERNAL;
}

void avldm_ctx_free(avldm_ctx* ctx) { delete ctx; }

const char* avldm_last_error(const avldm_ctx* ctx) { return ctx ? ctx->last_error.c_str() : "null context"; }

avldm_status avldm_make_dataset(avldm_ctx* ctx, const char* out_dir, int count, uint64_t seed_base, int misaligned) {
    if (avldm_status s = need(ctx, out_dir != nullptr, "out_dir is NULL"); s != AVLDM_OK) return s;
    return guard(ctx, [&] {
        avldm::MelAnalyzer mel;
        avldm::generate_dataset(avldm::resolve_output_path(out_dir), count, seed_base, misaligned, mel);
    });
}

avldm_status avldm_train(avldm_ctx* ctx, const char* config_path) {
    if (avldm_status s = need(ctx, config_path != nullptr, "config_path is NULL"); s != AVLDM_OK) return s;
    return guard(ctx, [&] {
        avldm::RunConfig cfg = avldm::RunConfig::from_file(config_path);
        avldm::train(cfg);
    });
}

avldm_status avldm_train_codec(avldm_ctx* ctx, const char* manifest_path, const char* out_dir, int steps,
                               uint64_t seed) {
    if (avldm_status s = need(ctx, manifest_path && out_dir && steps > 0, "need manifest, out_dir and steps > 0");
        s != AVLDM_OK)
        return s;
    return guard(ctx, [&] {
        namespace fs = std::filesystem;
        avldm::MelAnalyzer mel;
        auto entries = avldm::read_manifest(avldm::resolve_output_path(manifest_path));
        avldm::check(!entries.empty(), "manifest is empty");

        std::vector<avldm::Tensor> frames, specs;
        for (const auto& e : entries) {
            auto s = avldm::load_sample(e, mel);
            auto split = avldm::split_frames(s.video);
            frames.push_back(split[split.size() / 2]);  // one representative frame per clip
            avldm::Tensor sp({1, s.audio.data.shape[1], s.audio.data.shape[2]});
            sp.data = s.audio.data.data;
            specs.push_back(std::move(sp));
        }

        avldm::LearnedVideoCodec vc(seed);
        avldm::LearnedAudioCodec ac(seed);
        avldm::nn::Adam vopt(vc.params().all(), {1e-3, 0.9, 0.999, 1e-8});
        avldm::nn::Adam aopt(ac.params().all(), {1e-3, 0.9, 0.999, 1e-8});
        avldm::Rng rng(seed, "codec-train");
        const int64_t B = 8;
        for (int step = 0; step < steps; step++) {
            const auto& f0 = frames[0];
            avldm::Tensor fb({B, 3, f0.shape[1], f0.shape[2]});
            avldm::Tensor sb({B, 1, specs[0].shape[1], specs[0].shape[2]});
            for (int64_t i = 0; i < B; i++) {
                const auto& fr = frames[rng.below(frames.size())];
                const auto& sp = specs[rng.below(specs.size())];
                std::copy(fr.data.begin(), fr.data.end(), fb.data.begin() + i * fr.numel());
                std::copy(sp.data.begin(), sp.data.end(), sb.data.begin() + i * sp.numel());
            }
            double lv = vc.train_step(fb, vopt);
            double la = ac.train_step(sb, aopt);
            avldm::check(std::isfinite(lv) && std::isfinite(la), "codec training diverged: non-finite loss");
        }
        std::string dir = avldm::resolve_output_path(out_dir);
        fs::create_directories(dir);
        avldm::nn::save_checkpoint(dir + "/video_codec.avw", vc.params(), "{}");
        avldm::nn::save_checkpoint(dir + "/audio_codec.avw", ac.params(), "{}");
    });
}

avldm_status avldm_sample(avldm_ctx* ctx, const char* ckpt_path, const char* caption, int steps, uint64_t seed,
                          const char* out_dir, int export_png) {
    if (avldm_status s = need(ctx, ckpt_path && caption && out_dir, "ckpt_path, caption and out_dir are required");
        s != AVLDM_OK)
        return s;
    return guard(ctx, [&] { avldm::sample(ckpt_path, caption, steps, seed, out_dir, export_png != 0); });
}

avldm_status avldm_evaluate(avldm_ctx* ctx, const char* manifest, const char* generated, const char* metrics_csv,
                            const char* provider, const char* report_path) {
    if (avldm_status s = need(ctx, manifest && metrics_csv, "manifest and metrics_csv are required"); s != AVLDM_OK)
        return s;
    return guard(ctx, [&] {
        avldm::EvaluateRequest req;
        req.manifest = manifest;
        req.generated = generated ? generated : "";
        req.provider = provider ? provider : "toy";
        req.report_path = report_path ? report_path : "";
        std::stringstream ss(metrics_csv);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) req.metrics.push_back(item);
        avldm::EvalReport rep = avldm::evaluate(req);
        ctx->last_error.clear();
        // surface the report on stdout for CLI use
        std::fputs((rep.to_json() + "\n").c_str(), stdout);
    });
}

}  // extern "C"
