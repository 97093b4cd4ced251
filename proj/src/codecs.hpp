#pragma once

#include <memory>
#include <string>

#include "audio.hpp"
#include "nn.hpp"
#include "tensor.hpp"

namespace avldm {

// Frame stack, data [T, 3, H, W], values in [-1, 1]. H and W divisible by 8.
struct VideoTensor {
    Tensor data;
    double frame_rate = 10.0;

    int64_t frames() const { return data.shape[0]; }
    int64_t height() const { return data.shape[2]; }
    int64_t width() const { return data.shape[3]; }
};

enum class Modality { Audio, Video };

struct Latent {
    Tensor data;
    Modality modality;
};

constexpr int64_t kVideoLatentChannels = 4;
constexpr int64_t kAudioLatentChannels = 8;

void validate_video_input(const Tensor& x);            // [T,3,H,W], dims /8
void validate_audio_input(const Tensor& x);            // [1,Ha,Wa], dims /8
Shape video_latent_shape(const Shape& media_shape);    // [T,4,H/8,W/8]
Shape audio_latent_shape(const Shape& media_shape);    // [8,Ha/8,Wa/8]

class VideoCodec {
public:
    virtual ~VideoCodec() = default;
    virtual Latent encode(const VideoTensor& x) const = 0;
    virtual VideoTensor decode(const Latent& z) const = 0;
};

class AudioCodec {
public:
    virtual ~AudioCodec() = default;
    virtual Latent encode(const AudioSpectrogram& x) const = 0;
    virtual AudioSpectrogram decode(const Latent& z) const = 0;
};

// Analytic codecs: per 8x8 block, project onto a fixed orthonormal basis and
// keep exactly the channel budget (video 4, audio 8). decode(encode(x)) is
// the orthogonal projection onto that basis, so it is the identity on the
// codec's reproducible subspace and encode(decode(z)) == z for every latent.
class AnalyticVideoCodec : public VideoCodec {
public:
    Latent encode(const VideoTensor& x) const override;
    VideoTensor decode(const Latent& z) const override;
};

class AnalyticAudioCodec : public AudioCodec {
public:
    explicit AnalyticAudioCodec(int sample_rate = 16000, int hop = 256) : sample_rate_(sample_rate), hop_(hop) {}
    Latent encode(const AudioSpectrogram& x) const override;
    AudioSpectrogram decode(const Latent& z) const override;

private:
    int sample_rate_, hop_;
};

// Small convolutional autoencoders trained for reconstruction. Frozen once
// trained; encode/decode run inference graphs internally.
class LearnedVideoCodec : public VideoCodec {
public:
    explicit LearnedVideoCodec(uint64_t seed = 1);
    Latent encode(const VideoTensor& x) const override;
    VideoTensor decode(const Latent& z) const override;

    double train_step(const Tensor& frames, nn::Adam& adam);  // frames [B,3,H,W], returns mse
    nn::ParamRegistry& params() { return reg_; }

private:
    int enc_forward(Graph& g, nn::Binder& bd, int x) const;
    int dec_forward(Graph& g, nn::Binder& bd, int z) const;
    nn::ParamRegistry reg_;
    nn::Conv2d e1_, e2_, e3_, e4_, d1_, d2_, d3_, d4_;
};

class LearnedAudioCodec : public AudioCodec {
public:
    explicit LearnedAudioCodec(uint64_t seed = 1, int sample_rate = 16000, int hop = 256);
    Latent encode(const AudioSpectrogram& x) const override;
    AudioSpectrogram decode(const Latent& z) const override;

    double train_step(const Tensor& specs, nn::Adam& adam);  // specs [B,1,Ha,Wa]
    nn::ParamRegistry& params() { return reg_; }

private:
    int enc_forward(Graph& g, nn::Binder& bd, int x) const;
    int dec_forward(Graph& g, nn::Binder& bd, int z) const;
    nn::ParamRegistry reg_;
    nn::Conv2d e1_, e2_, e3_, e4_, d1_, d2_, d3_, d4_;
    int sample_rate_, hop_;
};

std::unique_ptr<VideoCodec> make_video_codec(const std::string& kind, const std::string& ckpt_path, uint64_t seed);
std::unique_ptr<AudioCodec> make_audio_codec(const std::string& kind, const std::string& ckpt_path, uint64_t seed);

}  // namespace avldm
