#pragma once

#include <string>

#include "denoiser.hpp"

namespace avldm {

// Full run configuration. Serialized into every checkpoint, sample and
// report together with its hash; relative output paths honor the
// AVLDM_OUT_ROOT environment variable.
struct RunConfig {
    // schedule
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    // model
    DenoiserConfig model;
    bool bridge_enabled = true;

    // loss
    double lambda_eas = 0.1;
    double tau = 0.1;
    bool eas_pooled = false;  // pooled-cosine similarity variant

    // train
    int batch_size = 8;
    int steps = 2000;
    double lr = 1e-4;
    uint64_t seed = 1234;
    int checkpoint_every = 1000;

    // data
    std::string train_manifest;
    std::string codec = "analytic";  // or "learned"
    std::string codec_ckpt_video;
    std::string codec_ckpt_audio;

    // media geometry (drives latent shapes at sampling time)
    int video_frames = 20;
    int video_size = 64;
    double fps = 10.0;
    int mel_bins = 64;
    int spec_frames = 128;

    // sampling
    int ddim_steps = 50;

    std::string out_dir = "runs/default";

    static RunConfig from_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
    std::string to_json_text() const;
    std::string hash() const;
    void validate() const;

    // out_dir with the AVLDM_OUT_ROOT prefix applied (when set and relative)
    std::string resolved_out_dir() const;
};

std::string resolve_output_path(const std::string& path);

}  // namespace avldm
