#pragma once

#include <string>
#include <vector>

#include "nn.hpp"
#include "text.hpp"

namespace avldm {

struct DenoiserConfig {
    int64_t base_width = 32;  // level-1 channels; level 2 (the bottleneck) is base*mult
    int64_t mult = 2;
    int64_t time_dim = 128;
    int64_t text_dim = 64;
    int heads = 4;
    int groups = 8;
    bool temporal = true;  // video stream only: temporal conv + attention

    int64_t bottleneck_width() const { return base_width * mult; }
};

// sinusoidal embedding of integer timesteps, [B, dim]
Tensor timestep_embedding(const std::vector<int>& ts, int64_t dim);

// batched caption conditioning: token matrix plus additive attention mask
struct TextBatch {
    Tensor tokens;  // [B, L, Dc]
    Tensor bias;    // [B, L]: 0 valid, -1e30 padded
};
TextBatch make_text_batch(const TextProvider& provider, const std::vector<std::string>& captions);

namespace detail {

struct TimeMlp {
    nn::Linear l1, l2;
    TimeMlp() = default;
    TimeMlp(nn::ParamRegistry& r, const std::string& name, int64_t dim, uint64_t seed);
    int forward(Graph& g, nn::Binder& bd, int temb) const;
};

// GN -> SiLU -> (+time) -> [temporal conv] -> conv3x3, plus skip. The
// temporal conv starts as an identity delta kernel so a fresh video model is
// exactly frame-independent.
struct ResBlock {
    nn::GroupNorm norm;
    nn::Linear time_proj;
    nn::Conv1d tconv;  // only when temporal
    nn::Conv2d conv;
    nn::Conv2d skip;  // 1x1, only when c_in != c_out
    bool has_skip = false;
    bool temporal = false;
    ResBlock() = default;
    ResBlock(nn::ParamRegistry& r, const std::string& name, int64_t c_in, int64_t c_out, const DenoiserConfig& cfg,
             bool temporal, uint64_t seed);
    // x [N, C, H, W] with N = B (audio) or B*T (video, frames folded);
    // temb [N, time_dim]; frames = T for temporal mixing, 1 otherwise
    int forward(Graph& g, nn::Binder& bd, int x, int temb, int64_t frames) const;
};

}  // namespace detail

// Two-level text-conditioned UNet over the audio latent [B, 8, Ha, Wa].
// encode() returns bottleneck tokens [B, N, W2]; decode() consumes the
// (possibly bridged) tokens and produces the noise estimate.
class AudioUnet {
public:
    struct State {
        int x1 = -1, x2 = -1, temb = -1;
        int64_t B = 0, h2 = 0, w2 = 0;
    };

    AudioUnet(nn::ParamRegistry& r, const std::string& prefix, const DenoiserConfig& cfg, uint64_t seed);

    int encode(Graph& g, nn::Binder& bd, int z_t, const std::vector<int>& t, const TextBatch& text, State* st) const;
    int decode(Graph& g, nn::Binder& bd, int f_tokens, const State& st) const;

    // convenience: encode + decode without a bridge
    std::pair<int, int> forward(Graph& g, nn::Binder& bd, int z_t, const std::vector<int>& t,
                                const TextBatch& text) const;

    const DenoiserConfig& config() const { return cfg_; }

private:
    DenoiserConfig cfg_;
    nn::Conv2d conv_in_, down_, merge3_, up_, merge4_, conv_out_;
    detail::ResBlock res1_, res2_, res3_, res4_;
    nn::Attention text_attn_;
    detail::TimeMlp time_mlp_;
    nn::GroupNorm norm_out_;
};

// Pseudo-3D video UNet over [B, T, 4, Hv, Wv]: every res block runs a 1D
// temporal conv before its 2D conv, and the bottleneck adds temporal
// attention (zero-initialized output) next to the text cross-attention.
class VideoUnet {
public:
    struct State {
        int x1 = -1, x2 = -1, temb = -1;
        int64_t B = 0, T = 0, h2 = 0, w2 = 0;
    };

    VideoUnet(nn::ParamRegistry& r, const std::string& prefix, const DenoiserConfig& cfg, uint64_t seed);

    int encode(Graph& g, nn::Binder& bd, int z_t, const std::vector<int>& t, const TextBatch& text, State* st) const;
    int decode(Graph& g, nn::Binder& bd, int f_tokens, const State& st) const;
    std::pair<int, int> forward(Graph& g, nn::Binder& bd, int z_t, const std::vector<int>& t,
                                const TextBatch& text) const;

    const DenoiserConfig& config() const { return cfg_; }

private:
    DenoiserConfig cfg_;
    nn::Conv2d conv_in_, down_, merge3_, up_, merge4_, conv_out_;
    detail::ResBlock res1_, res2_, res3_, res4_;
    nn::Attention text_attn_, temporal_attn_;
    detail::TimeMlp time_mlp_;
    nn::GroupNorm norm_out_;
};

}  // namespace avldm
