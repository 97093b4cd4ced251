// avldm command line: make-data / train / train-codec / sample / evaluate.
// Talks to the library exclusively through the C API in avldm/avldm.h.

#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "avldm/avldm.h"

namespace {

int run(avldm_ctx* ctx, avldm_status st) {
    if (st == AVLDM_OK) return 0;
    std::fprintf(stderr, "error (%d): %s\n", static_cast<int>(st), avldm_last_error(ctx));
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stream text-to-audible-video latent diffusion"};
    app.set_version_flag("--version", avldm_version());
    app.require_subcommand(1);

    avldm_ctx* ctx = nullptr;
    if (avldm_ctx_new(&ctx) != AVLDM_OK) {
        std::fprintf(stderr, "failed to create context\n");
        return 1;
    }

    // make-data
    std::string md_out = "data";
    int md_count = 64, md_misaligned = 0;
    uint64_t md_seed = 1;
    auto* md = app.add_subcommand("make-data", "generate a synthetic audible-video corpus");
    md->add_option("--out", md_out, "output directory")->required();
    md->add_option("--count", md_count, "number of aligned clips");
    md->add_option("--seed", md_seed, "base seed (clip i uses seed+i)");
    md->add_option("--misaligned", md_misaligned, "extra swapped-audio control entries");

    // train
    std::string tr_config;
    auto* tr = app.add_subcommand("train", "train the two-stream diffusion model");
    tr->add_option("--config", tr_config, "JSON config file")->required();

    // train-codec
    std::string tc_manifest, tc_out = "codecs";
    int tc_steps = 2000;
    uint64_t tc_seed = 1;
    auto* tc = app.add_subcommand("train-codec", "train the learned codec pair");
    tc->add_option("--manifest", tc_manifest, "corpus manifest")->required();
    tc->add_option("--out", tc_out, "output directory for codec checkpoints");
    tc->add_option("--steps", tc_steps, "optimizer steps");
    tc->add_option("--seed", tc_seed, "seed");

    // sample
    std::string sm_ckpt, sm_caption, sm_out = "sample_out";
    int sm_steps = 50;
    uint64_t sm_seed = 0;
    bool sm_png = false;
    auto* sm = app.add_subcommand("sample", "generate an audible video from a caption");
    sm->add_option("--ckpt", sm_ckpt, "model checkpoint")->required();
    sm->add_option("--caption", sm_caption, "text prompt")->required();
    sm->add_option("--steps", sm_steps, "denoising steps");
    sm->add_option("--seed", sm_seed, "sampling seed");
    sm->add_option("--out", sm_out, "output directory");
    sm->add_flag("--png", sm_png, "also export PNG frames");

    // evaluate
    std::string ev_manifest, ev_generated, ev_metrics = "avh,fvd,kvd,clipsim", ev_provider = "toy", ev_report;
    auto* ev = app.add_subcommand("evaluate", "compute evaluation metrics");
    ev->add_option("--manifest", ev_manifest, "reference manifest")->required();
    ev->add_option("--generated", ev_generated, "generated set (manifest or sample directory)");
    ev->add_option("--metrics", ev_metrics, "comma-separated metric list");
    ev->add_option("--provider", ev_provider, "embedding provider (toy|hash)");
    ev->add_option("--report", ev_report, "write the JSON report here");

    CLI11_PARSE(app, argc, argv);

    int rc = 0;
    if (md->parsed()) rc = run(ctx, avldm_make_dataset(ctx, md_out.c_str(), md_count, md_seed, md_misaligned));
    if (tr->parsed()) rc = run(ctx, avldm_train(ctx, tr_config.c_str()));
    if (tc->parsed()) rc = run(ctx, avldm_train_codec(ctx, tc_manifest.c_str(), tc_out.c_str(), tc_steps, tc_seed));
    if (sm->parsed())
        rc = run(ctx, avldm_sample(ctx, sm_ckpt.c_str(), sm_caption.c_str(), sm_steps, sm_seed, sm_out.c_str(),
                                   sm_png ? 1 : 0));
    if (ev->parsed())
        rc = run(ctx, avldm_evaluate(ctx, ev_manifest.c_str(), ev_generated.empty() ? nullptr : ev_generated.c_str(),
                                     ev_metrics.c_str(), ev_provider.c_str(),
                                     ev_report.empty() ? nullptr : ev_report.c_str()));

    avldm_ctx_free(ctx);
    return rc;
}
