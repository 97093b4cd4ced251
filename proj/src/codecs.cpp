#include "codecs.hpp"

#include <cmath>

namespace avldm {

void validate_video_input(const Tensor& x) {
    check(x.rank() == 4, "video tensor must be [T,3,H,W], got " + shape_str(x.shape));
    check(x.shape[1] == 3, "video tensor needs 3 channels, got " + std::to_string(x.shape[1]));
    check(x.shape[2] % 8 == 0 && x.shape[3] % 8 == 0,
          "video spatial dims must be divisible by 8, got " + shape_str(x.shape));
    check(x.all_finite(), "video tensor has non-finite entries");
}

void validate_audio_input(const Tensor& x) {
    check(x.rank() == 3 && x.shape[0] == 1, "audio spectrogram must be [1,Ha,Wa], got " + shape_str(x.shape));
    check(x.shape[1] % 8 == 0 && x.shape[2] % 8 == 0,
          "spectrogram dims must be divisible by 8, got " + shape_str(x.shape));
    check(x.all_finite(), "spectrogram has non-finite entries");
}

Shape video_latent_shape(const Shape& s) { return {s[0], kVideoLatentChannels, s[2] / 8, s[3] / 8}; }
Shape audio_latent_shape(const Shape& s) { return {kAudioLatentChannels, s[1] / 8, s[2] / 8}; }

// ---- analytic codecs ----

namespace {

// orthonormal 1D DCT-II basis over 8 points: dct[k][i]
struct Dct8 {
    double b[8][8];
    Dct8() {
        for (int k = 0; k < 8; k++) {
            double norm = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int i = 0; i < 8; i++) b[k][i] = norm * std::cos(M_PI * (2 * i + 1) * k / 16.0);
        }
    }
};
const Dct8 kDct;

// zigzag order of 2D DCT coefficients (ky, kx), lowest frequencies first
constexpr int kZig[8][2] = {{0, 0}, {0, 1}, {1, 0}, {2, 0}, {1, 1}, {0, 2}, {0, 3}, {1, 2}};

}  // namespace

Latent AnalyticVideoCodec::encode(const VideoTensor& x) const {
    validate_video_input(x.data);
    const int64_t T = x.frames(), H = x.height(), W = x.width();
    const int64_t h = H / 8, w = W / 8;
    Latent z;
    z.modality = Modality::Video;
    z.data = Tensor({T, kVideoLatentChannels, h, w});
    for (int64_t t = 0; t < T; t++)
        for (int64_t by = 0; by < h; by++)
            for (int64_t bx = 0; bx < w; bx++) {
                // channels 0..2: per-color DC; channel 3: vertical mode-1 of the mean color
                double dc[3] = {0, 0, 0};
                double grad = 0.0;
                for (int r = 0; r < 8; r++)
                    for (int c2 = 0; c2 < 8; c2++) {
                        double mean = 0.0;
                        for (int ch = 0; ch < 3; ch++) {
                            double v = x.data[((t * 3 + ch) * H + by * 8 + r) * W + bx * 8 + c2];
                            dc[ch] += v / 8.0;
                            mean += v;
                        }
                        grad += (mean / std::sqrt(3.0)) * kDct.b[1][r] * kDct.b[0][c2];
                    }
                for (int ch = 0; ch < 3; ch++) z.data[((t * 4 + ch) * h + by) * w + bx] = dc[ch];
                z.data[((t * 4 + 3) * h + by) * w + bx] = grad;
            }
    return z;
}

VideoTensor AnalyticVideoCodec::decode(const Latent& z) const {
    check(z.modality == Modality::Video, "decode: latent is not video");
    check(z.data.rank() == 4 && z.data.shape[1] == kVideoLatentChannels,
          "video latent must be [T,4,h,w], got " + shape_str(z.data.shape));
    const int64_t T = z.data.shape[0], h = z.data.shape[2], w = z.data.shape[3];
    const int64_t H = h * 8, W = w * 8;
    VideoTensor x;
    x.data = Tensor({T, 3, H, W});
    for (int64_t t = 0; t < T; t++)
        for (int64_t by = 0; by < h; by++)
            for (int64_t bx = 0; bx < w; bx++) {
                double dc[3];
                for (int ch = 0; ch < 3; ch++) dc[ch] = z.data[((t * 4 + ch) * h + by) * w + bx];
                double grad = z.data[((t * 4 + 3) * h + by) * w + bx];
                for (int r = 0; r < 8; r++)
                    for (int c2 = 0; c2 < 8; c2++) {
                        double g = grad * kDct.b[1][r] * kDct.b[0][c2] / std::sqrt(3.0);
                        for (int ch = 0; ch < 3; ch++)
                            x.data[((t * 3 + ch) * H + by * 8 + r) * W + bx * 8 + c2] = dc[ch] / 8.0 + g;
                    }
            }
    return x;
}

Latent AnalyticAudioCodec::encode(const AudioSpectrogram& x) const {
    validate_audio_input(x.data);
    const int64_t H = x.data.shape[1], W = x.data.shape[2];
    const int64_t h = H / 8, w = W / 8;
    Latent z;
    z.modality = Modality::Audio;
    z.data = Tensor({kAudioLatentChannels, h, w});
    for (int64_t by = 0; by < h; by++)
        for (int64_t bx = 0; bx < w; bx++)
            for (int k = 0; k < 8; k++) {
                int ky = kZig[k][0], kx = kZig[k][1];
                double acc = 0.0;
                for (int r = 0; r < 8; r++)
                    for (int c = 0; c < 8; c++)
                        acc += x.data[(by * 8 + r) * W + bx * 8 + c] * kDct.b[ky][r] * kDct.b[kx][c];
                z.data[(k * h + by) * w + bx] = acc;
            }
    return z;
}

AudioSpectrogram AnalyticAudioCodec::decode(const Latent& z) const {
    check(z.modality == Modality::Audio, "decode: latent is not audio");
    check(z.data.rank() == 3 && z.data.shape[0] == kAudioLatentChannels,
          "audio latent must be [8,h,w], got " + shape_str(z.data.shape));
    const int64_t h = z.data.shape[1], w = z.data.shape[2];
    const int64_t H = h * 8, W = w * 8;
    AudioSpectrogram x;
    x.sample_rate = sample_rate_;
    x.hop = hop_;
    x.data = Tensor({1, H, W});
    for (int64_t by = 0; by < h; by++)
        for (int64_t bx = 0; bx < w; bx++)
            for (int r = 0; r < 8; r++)
                for (int c = 0; c < 8; c++) {
                    double acc = 0.0;
                    for (int k = 0; k < 8; k++)
                        acc += z.data[(k * h + by) * w + bx] * kDct.b[kZig[k][0]][r] * kDct.b[kZig[k][1]][c];
                    x.data[(by * 8 + r) * W + bx * 8 + c] = acc;
                }
    return x;
}

// ---- learned codecs ----

LearnedVideoCodec::LearnedVideoCodec(uint64_t seed) {
    using nn::Conv2d;
    e1_ = Conv2d(reg_, "venc.c1", 3, 16, 3, 2, 1, seed);
    e2_ = Conv2d(reg_, "venc.c2", 16, 32, 3, 2, 1, seed);
    e3_ = Conv2d(reg_, "venc.c3", 32, 32, 3, 2, 1, seed);
    e4_ = Conv2d(reg_, "venc.c4", 32, 4, 3, 1, 1, seed);
    d1_ = Conv2d(reg_, "vdec.c1", 4, 32, 3, 1, 1, seed);
    d2_ = Conv2d(reg_, "vdec.c2", 32, 32, 3, 1, 1, seed);
    d3_ = Conv2d(reg_, "vdec.c3", 32, 16, 3, 1, 1, seed);
    d4_ = Conv2d(reg_, "vdec.c4", 16, 3, 3, 1, 1, seed);
}

int LearnedVideoCodec::enc_forward(Graph& g, nn::Binder& bd, int x) const {
    x = g.silu(e1_.forward(g, bd, x));
    x = g.silu(e2_.forward(g, bd, x));
    x = g.silu(e3_.forward(g, bd, x));
    return e4_.forward(g, bd, x);
}

int LearnedVideoCodec::dec_forward(Graph& g, nn::Binder& bd, int z) const {
    int x = g.silu(d1_.forward(g, bd, z));
    x = g.upsample2d(x);
    x = g.silu(d2_.forward(g, bd, x));
    x = g.upsample2d(x);
    x = g.silu(d3_.forward(g, bd, x));
    x = g.upsample2d(x);
    return d4_.forward(g, bd, x);
}

Latent LearnedVideoCodec::encode(const VideoTensor& x) const {
    validate_video_input(x.data);
    Graph g;
    nn::Binder bd(g);
    int z = enc_forward(g, bd, g.input(x.data));  // [T,3,H,W]: frames as batch
    Latent out;
    out.modality = Modality::Video;
    out.data = g.val(z);
    return out;
}

VideoTensor LearnedVideoCodec::decode(const Latent& z) const {
    check(z.modality == Modality::Video && z.data.rank() == 4 && z.data.shape[1] == kVideoLatentChannels,
          "decode: bad video latent " + shape_str(z.data.shape));
    Graph g;
    nn::Binder bd(g);
    int x = dec_forward(g, bd, g.input(z.data));
    VideoTensor out;
    out.data = g.val(x);
    return out;
}

double LearnedVideoCodec::train_step(const Tensor& frames, nn::Adam& adam) {
    reg_.zero_grad();
    Graph g;
    nn::Binder bd(g);
    int x = g.input(frames);
    int rec = dec_forward(g, bd, enc_forward(g, bd, x));
    int loss = g.mse(rec, x);
    g.backward(loss);
    bd.collect_grads();
    adam.step();
    return g.val(loss)[0];
}

LearnedAudioCodec::LearnedAudioCodec(uint64_t seed, int sample_rate, int hop)
    : sample_rate_(sample_rate), hop_(hop) {
    using nn::Conv2d;
    e1_ = Conv2d(reg_, "aenc.c1", 1, 16, 3, 2, 1, seed);
    e2_ = Conv2d(reg_, "aenc.c2", 16, 32, 3, 2, 1, seed);
    e3_ = Conv2d(reg_, "aenc.c3", 32, 32, 3, 2, 1, seed);
    e4_ = Conv2d(reg_, "aenc.c4", 32, 8, 3, 1, 1, seed);
    d1_ = Conv2d(reg_, "adec.c1", 8, 32, 3, 1, 1, seed);
    d2_ = Conv2d(reg_, "adec.c2", 32, 32, 3, 1, 1, seed);
    d3_ = Conv2d(reg_, "adec.c3", 32, 16, 3, 1, 1, seed);
    d4_ = Conv2d(reg_, "adec.c4", 16, 1, 3, 1, 1, seed);
}

int LearnedAudioCodec::enc_forward(Graph& g, nn::Binder& bd, int x) const {
    x = g.silu(e1_.forward(g, bd, x));
    x = g.silu(e2_.forward(g, bd, x));
    x = g.silu(e3_.forward(g, bd, x));
    return e4_.forward(g, bd, x);
}

int LearnedAudioCodec::dec_forward(Graph& g, nn::Binder& bd, int z) const {
    int x = g.silu(d1_.forward(g, bd, z));
    x = g.upsample2d(x);
    x = g.silu(d2_.forward(g, bd, x));
    x = g.upsample2d(x);
    x = g.silu(d3_.forward(g, bd, x));
    x = g.upsample2d(x);
    return d4_.forward(g, bd, x);
}

Latent LearnedAudioCodec::encode(const AudioSpectrogram& x) const {
    validate_audio_input(x.data);
    Graph g;
    nn::Binder bd(g);
    int id4 = g.reshape(g.input(x.data), {1, 1, x.data.shape[1], x.data.shape[2]});
    int z = enc_forward(g, bd, id4);
    Latent out;
    out.modality = Modality::Audio;
    const Tensor& zt = g.val(z);  // [1,8,h,w]
    out.data.shape = {zt.shape[1], zt.shape[2], zt.shape[3]};
    out.data.data = zt.data;
    return out;
}

AudioSpectrogram LearnedAudioCodec::decode(const Latent& z) const {
    check(z.modality == Modality::Audio && z.data.rank() == 3 && z.data.shape[0] == kAudioLatentChannels,
          "decode: bad audio latent " + shape_str(z.data.shape));
    Graph g;
    nn::Binder bd(g);
    int id4 = g.reshape(g.input(z.data), {1, z.data.shape[0], z.data.shape[1], z.data.shape[2]});
    int x = dec_forward(g, bd, id4);
    AudioSpectrogram out;
    out.sample_rate = sample_rate_;
    out.hop = hop_;
    const Tensor& xt = g.val(x);  // [1,1,H,W]
    out.data.shape = {1, xt.shape[2], xt.shape[3]};
    out.data.data = xt.data;
    return out;
}

double LearnedAudioCodec::train_step(const Tensor& specs, nn::Adam& adam) {
    reg_.zero_grad();
    Graph g;
    nn::Binder bd(g);
    int x = g.input(specs);
    int rec = dec_forward(g, bd, enc_forward(g, bd, x));
    int loss = g.mse(rec, x);
    g.backward(loss);
    bd.collect_grads();
    adam.step();
    return g.val(loss)[0];
}

std::unique_ptr<VideoCodec> make_video_codec(const std::string& kind, const std::string& ckpt_path, uint64_t seed) {
    if (kind == "analytic") return std::make_unique<AnalyticVideoCodec>();
    if (kind == "learned") {
        auto c = std::make_unique<LearnedVideoCodec>(seed);
        if (!ckpt_path.empty()) nn::load_checkpoint(ckpt_path, c->params());
        return c;
    }
    throw std::invalid_argument("unknown video codec kind: " + kind);
}

std::unique_ptr<AudioCodec> make_audio_codec(const std::string& kind, const std::string& ckpt_path, uint64_t seed) {
    if (kind == "analytic") return std::make_unique<AnalyticAudioCodec>();
    if (kind == "learned") {
        auto c = std::make_unique<LearnedAudioCodec>(seed);
        if (!ckpt_path.empty()) nn::load_checkpoint(ckpt_path, c->params());
        return c;
    }
    throw std::invalid_argument("unknown audio codec kind: " + kind);
}

}  // namespace avldm
