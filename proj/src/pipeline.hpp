#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bridge.hpp"
#include "config.hpp"
#include "data.hpp"
#include "metrics.hpp"
#include "schedule.hpp"

namespace avldm {

// Both denoisers, the optional bridge and the similarity heads behind one
// parameter registry. Parameters are seeded per name, so the shared weights
// of bridged and bridge-free builds are bitwise identical.
struct TwoStreamModel {
    explicit TwoStreamModel(const RunConfig& cfg);

    const RunConfig cfg;
    nn::ParamRegistry reg;
    AudioUnet audio;
    VideoUnet video;
    std::optional<StreamBridge> bridge;
    SimilarityHead sim_head;
    TextProvider text;

    struct Forward {
        int eps_a = -1, eps_v = -1;  // noise estimates
        int f_a = -1, f_v = -1;      // post-bridge bottleneck tokens
    };
    // z_a [B,8,h,w], z_v [B,T,4,h,w]
    Forward forward(Graph& g, nn::Binder& bd, int z_a, int z_v, const std::vector<int>& t,
                    const TextBatch& text_batch) const;
};

struct StepLoss {
    int step = 0;
    double diff_audio = 0, diff_video = 0, eas = 0, total = 0;
};

struct TrainResult {
    std::vector<StepLoss> losses;
    std::string checkpoint_path;
    std::string loss_log_path;
    double wall_seconds = 0;
};

using StepCallback = std::function<void(const StepLoss&)>;

TrainResult train(const RunConfig& cfg, const StepCallback& on_step = nullptr);

// pre-encoded training corpus
struct EncodedSample {
    Tensor z_a;  // [8, h, w]
    Tensor z_v;  // [T, 4, h, w]
    std::string caption;
};
std::vector<EncodedSample> encode_corpus(const RunConfig& cfg, const std::vector<ManifestEntry>& entries);

struct SampleResult {
    std::string dir;
    std::string video_path, audio_path, metadata_path;
};

SampleResult sample(const std::string& ckpt_path, const std::string& caption, int steps, uint64_t seed,
                    const std::string& out_dir, bool export_png = false);

struct EvaluateRequest {
    std::string manifest;           // reference set
    std::string generated;          // manifest or sample-output directory; may be empty
    std::vector<std::string> metrics;  // avh, fvd, kvd, clipsim, fad
    std::string provider = "toy";
    std::string report_path;        // optional
};

EvalReport evaluate(const EvaluateRequest& req);

// Mean cosine between mean-pooled post-bottleneck stream features over
// aligned samples at a fixed probe timestep; the ablation-direction measure.
double mean_feature_cosine(const TwoStreamModel& model, const std::vector<EncodedSample>& samples, int t_probe,
                           uint64_t noise_seed);

// rebuild a model from a checkpoint's embedded config and load its weights
std::pair<std::unique_ptr<TwoStreamModel>, RunConfig> load_model(const std::string& ckpt_path);

}  // namespace avldm
