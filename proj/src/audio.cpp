#include "audio.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <memory>

namespace avldm {

namespace {
double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

constexpr double kLogFloor = 1e-4;
constexpr double kLogLo = -4.0;  // log10(kLogFloor)
constexpr double kLogHi = 2.4;
}  // namespace

struct MelAnalyzer::Fft {
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;
    double* buf_real = nullptr;
    fftw_complex* buf_cplx = nullptr;
    int n = 0;

    explicit Fft(int n_fft) : n(n_fft) {
        buf_real = fftw_alloc_real(static_cast<size_t>(n));
        buf_cplx = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
        fwd = fftw_plan_dft_r2c_1d(n, buf_real, buf_cplx, FFTW_ESTIMATE);
        inv = fftw_plan_dft_c2r_1d(n, buf_cplx, buf_real, FFTW_ESTIMATE);
    }
    ~Fft() {
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(inv);
        fftw_free(buf_real);
        fftw_free(buf_cplx);
    }
};

MelAnalyzer::MelAnalyzer(MelConfig cfg) : cfg_(cfg), fft_(std::make_unique<Fft>(cfg.n_fft)) {
    check(cfg_.n_mels % 8 == 0, "mel bin count must be divisible by 8");
    window_.resize(static_cast<size_t>(cfg_.n_fft));
    for (int i = 0; i < cfg_.n_fft; i++)
        window_[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / cfg_.n_fft);

    const int nbins = cfg_.n_fft / 2 + 1;
    filters_.assign(static_cast<size_t>(cfg_.n_mels) * nbins, 0.0);
    const double mlo = hz_to_mel(cfg_.fmin), mhi = hz_to_mel(cfg_.fmax);
    std::vector<double> edges(static_cast<size_t>(cfg_.n_mels) + 2);
    for (int i = 0; i < cfg_.n_mels + 2; i++)
        edges[static_cast<size_t>(i)] = mel_to_hz(mlo + (mhi - mlo) * i / (cfg_.n_mels + 1));
    for (int m = 0; m < cfg_.n_mels; m++) {
        double lo = edges[static_cast<size_t>(m)], c = edges[static_cast<size_t>(m) + 1], hi = edges[static_cast<size_t>(m) + 2];
        double wsum = 0.0;
        for (int b = 0; b < nbins; b++) {
            double f = static_cast<double>(b) * cfg_.sample_rate / cfg_.n_fft;
            double w = 0.0;
            if (f > lo && f < hi) w = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
            filters_[static_cast<size_t>(m) * nbins + b] = w;
            wsum += w;
        }
        // area-normalize so a mel value is a weighted average of magnitudes
        if (wsum > 0)
            for (int b = 0; b < nbins; b++) filters_[static_cast<size_t>(m) * nbins + b] /= wsum;
    }
    filter_col_.assign(static_cast<size_t>(nbins), 0.0);
    for (int b = 0; b < nbins; b++)
        for (int m = 0; m < cfg_.n_mels; m++) filter_col_[static_cast<size_t>(b)] += filters_[static_cast<size_t>(m) * nbins + b];
}

MelAnalyzer::~MelAnalyzer() = default;

int64_t MelAnalyzer::samples_for_frames(int64_t frames) const {
    return (frames - 1) * cfg_.hop + cfg_.n_fft;
}

double MelAnalyzer::compress(double mel) {
    double d = std::log10(std::max(mel, 0.0) + kLogFloor);
    double x = (d - kLogLo) / (kLogHi - kLogLo);
    return std::clamp(x, 0.0, 1.0) * 2.0 - 1.0;
}

double MelAnalyzer::expand(double value) {
    double x = (std::clamp(value, -1.0, 1.0) + 1.0) / 2.0;
    double mel = std::pow(10.0, x * (kLogHi - kLogLo) + kLogLo) - kLogFloor;
    return std::max(mel, 0.0);
}

void MelAnalyzer::stft(const std::vector<double>& wav, int64_t frames, std::vector<double>& re,
                       std::vector<double>& im) const {
    const int nbins = cfg_.n_fft / 2 + 1;
    re.assign(static_cast<size_t>(frames) * nbins, 0.0);
    im.assign(static_cast<size_t>(frames) * nbins, 0.0);
    for (int64_t k = 0; k < frames; k++) {
        for (int i = 0; i < cfg_.n_fft; i++) {
            int64_t idx = k * cfg_.hop + i;
            double s = idx < static_cast<int64_t>(wav.size()) ? wav[static_cast<size_t>(idx)] : 0.0;
            fft_->buf_real[i] = s * window_[static_cast<size_t>(i)];
        }
        fftw_execute(fft_->fwd);
        for (int b = 0; b < nbins; b++) {
            re[static_cast<size_t>(k) * nbins + b] = fft_->buf_cplx[b][0];
            im[static_cast<size_t>(k) * nbins + b] = fft_->buf_cplx[b][1];
        }
    }
}

std::vector<double> MelAnalyzer::istft(const std::vector<double>& re, const std::vector<double>& im, int64_t frames,
                                       int64_t n_samples) const {
    const int nbins = cfg_.n_fft / 2 + 1;
    std::vector<double> out(static_cast<size_t>(n_samples), 0.0);
    std::vector<double> wsum(static_cast<size_t>(n_samples), 0.0);
    for (int64_t k = 0; k < frames; k++) {
        for (int b = 0; b < nbins; b++) {
            fft_->buf_cplx[b][0] = re[static_cast<size_t>(k) * nbins + b];
            fft_->buf_cplx[b][1] = im[static_cast<size_t>(k) * nbins + b];
        }
        fftw_execute(fft_->inv);
        for (int i = 0; i < cfg_.n_fft; i++) {
            int64_t idx = k * cfg_.hop + i;
            if (idx >= n_samples) break;
            double w = window_[static_cast<size_t>(i)];
            out[static_cast<size_t>(idx)] += fft_->buf_real[i] / cfg_.n_fft * w;
            wsum[static_cast<size_t>(idx)] += w * w;
        }
    }
    for (int64_t i = 0; i < n_samples; i++) out[static_cast<size_t>(i)] /= std::max(wsum[static_cast<size_t>(i)], 1e-8);
    return out;
}

AudioSpectrogram MelAnalyzer::analyze(const std::vector<double>& wav) const {
    check(!wav.empty(), "analyze: empty waveform");
    int64_t frames = 1 + std::max<int64_t>(0, (static_cast<int64_t>(wav.size()) - cfg_.n_fft + cfg_.hop - 1) / cfg_.hop);
    frames = (frames + 7) / 8 * 8;  // pad frame count to /8 contract

    const int nbins = cfg_.n_fft / 2 + 1;
    std::vector<double> re, im;
    stft(wav, frames, re, im);

    AudioSpectrogram spec;
    spec.sample_rate = cfg_.sample_rate;
    spec.hop = cfg_.hop;
    spec.data = Tensor({1, cfg_.n_mels, frames});
    for (int64_t k = 0; k < frames; k++) {
        for (int m = 0; m < cfg_.n_mels; m++) {
            double acc = 0.0;
            const double* fr = filters_.data() + static_cast<size_t>(m) * nbins;
            for (int b = 0; b < nbins; b++) {
                double x = re[static_cast<size_t>(k) * nbins + b];
                double y = im[static_cast<size_t>(k) * nbins + b];
                acc += fr[b] * std::sqrt(x * x + y * y);
            }
            spec.data[m * frames + k] = compress(acc);
        }
    }
    return spec;
}

std::vector<double> MelAnalyzer::synthesize(const AudioSpectrogram& spec, int iterations) const {
    check(spec.sample_rate == cfg_.sample_rate && spec.hop == cfg_.hop,
          "synthesize: spectrogram metadata does not match this analyzer");
    check(spec.data.rank() == 3 && spec.data.shape[0] == 1 && spec.data.shape[1] == cfg_.n_mels,
          "synthesize: bad spectrogram shape");
    const int64_t frames = spec.frames();
    const int nbins = cfg_.n_fft / 2 + 1;
    const int64_t n_samples = samples_for_frames(frames);

    // mel -> linear magnitude: transpose estimate refined by multiplicative
    // nonnegative least-squares updates so F*mag reproduces the mel values
    std::vector<double> mag(static_cast<size_t>(frames) * nbins, 0.0);
    std::vector<double> melv(static_cast<size_t>(cfg_.n_mels)), ftm(static_cast<size_t>(nbins)),
        u(static_cast<size_t>(cfg_.n_mels)), w(static_cast<size_t>(nbins));
    for (int64_t k = 0; k < frames; k++) {
        for (int m = 0; m < cfg_.n_mels; m++) melv[static_cast<size_t>(m)] = expand(spec.data[m * frames + k]);
        double* s = mag.data() + static_cast<size_t>(k) * nbins;
        for (int b = 0; b < nbins; b++) {
            double acc = 0.0;
            for (int m = 0; m < cfg_.n_mels; m++)
                acc += filters_[static_cast<size_t>(m) * nbins + b] * melv[static_cast<size_t>(m)];
            ftm[static_cast<size_t>(b)] = acc;
            s[b] = acc / std::max(filter_col_[static_cast<size_t>(b)], 1e-8);
        }
        for (int it = 0; it < 30; it++) {
            for (int m = 0; m < cfg_.n_mels; m++) {
                double acc = 0.0;
                const double* fr = filters_.data() + static_cast<size_t>(m) * nbins;
                for (int b = 0; b < nbins; b++) acc += fr[b] * s[b];
                u[static_cast<size_t>(m)] = acc;
            }
            for (int b = 0; b < nbins; b++) {
                double acc = 0.0;
                for (int m = 0; m < cfg_.n_mels; m++)
                    acc += filters_[static_cast<size_t>(m) * nbins + b] * u[static_cast<size_t>(m)];
                w[static_cast<size_t>(b)] = acc;
            }
            for (int b = 0; b < nbins; b++)
                s[b] *= ftm[static_cast<size_t>(b)] / std::max(w[static_cast<size_t>(b)], 1e-12);
        }
    }

    // Griffin-Lim with momentum, zero initial phase
    const double momentum = 0.9;
    const double gamma = momentum / (1.0 + momentum);
    std::vector<double> re(static_cast<size_t>(frames) * nbins), im(static_cast<size_t>(frames) * nbins, 0.0);
    std::vector<double> prev_re(re.size(), 0.0), prev_im(re.size(), 0.0);
    for (size_t i = 0; i < mag.size(); i++) re[i] = mag[i];
    std::vector<double> wav, est_re, est_im;
    for (int it = 0; it < iterations; it++) {
        wav = istft(re, im, frames, n_samples);
        stft(wav, frames, est_re, est_im);
        for (size_t i = 0; i < mag.size(); i++) {
            double pr = est_re[i] - gamma * prev_re[i];
            double pi = est_im[i] - gamma * prev_im[i];
            double a = std::sqrt(pr * pr + pi * pi);
            if (a < 1e-12) {
                re[i] = mag[i];
                im[i] = 0.0;
            } else {
                re[i] = mag[i] * pr / a;
                im[i] = mag[i] * pi / a;
            }
        }
        prev_re.swap(est_re);
        prev_im.swap(est_im);
    }
    return istft(re, im, frames, n_samples);
}

int mel_bin_of_frequency(const MelConfig& cfg, double f) {
    // centers are uniform in mel between fmin/fmax; invert the layout
    const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
    double m = hz_to_mel(f);
    double pos = (m - mlo) / (mhi - mlo) * (cfg.n_mels + 1) - 1.0;
    int bin = static_cast<int>(std::lround(pos));
    return std::clamp(bin, 0, cfg.n_mels - 1);
}

// ---- WAV ----

namespace {
void put_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::ofstream& f, uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }
}  // namespace

void write_wav16(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write wav: " + path);
    const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    f.write("RIFF", 4);
    put_u32(f, 36 + data_bytes);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    put_u32(f, 16);
    put_u16(f, 1);  // PCM
    put_u16(f, 1);  // mono
    put_u32(f, static_cast<uint32_t>(sample_rate));
    put_u32(f, static_cast<uint32_t>(sample_rate * 2));
    put_u16(f, 2);
    put_u16(f, 16);
    f.write("data", 4);
    put_u32(f, data_bytes);
    for (double s : samples) {
        double c = std::clamp(s, -1.0, 1.0);
        int16_t v = static_cast<int16_t>(std::lround(c * 32767.0));
        f.write(reinterpret_cast<const char*>(&v), 2);
    }
    if (!f) throw std::runtime_error("wav write failed: " + path);
}

std::vector<double> read_wav16(const std::string& path, int* sample_rate) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read wav: " + path);
    char tag[5] = {};
    uint32_t u32 = 0;
    uint16_t u16 = 0;
    f.read(tag, 4);
    if (std::strncmp(tag, "RIFF", 4) != 0) throw std::runtime_error("not a RIFF file: " + path);
    f.read(reinterpret_cast<char*>(&u32), 4);
    f.read(tag, 4);
    if (std::strncmp(tag, "WAVE", 4) != 0) throw std::runtime_error("not a WAVE file: " + path);
    int sr = 0;
    std::vector<double> samples;
    while (f.read(tag, 4)) {
        uint32_t chunk = 0;
        f.read(reinterpret_cast<char*>(&chunk), 4);
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            uint16_t fmt = 0, channels = 0, block = 0, bits = 0;
            uint32_t rate = 0, byterate = 0;
            f.read(reinterpret_cast<char*>(&fmt), 2);
            f.read(reinterpret_cast<char*>(&channels), 2);
            f.read(reinterpret_cast<char*>(&rate), 4);
            f.read(reinterpret_cast<char*>(&byterate), 4);
            f.read(reinterpret_cast<char*>(&block), 2);
            f.read(reinterpret_cast<char*>(&bits), 2);
            if (fmt != 1 || channels != 1 || bits != 16)
                throw std::runtime_error("expected 16-bit PCM mono wav: " + path);
            sr = static_cast<int>(rate);
            if (chunk > 16) f.seekg(chunk - 16, std::ios::cur);
        } else if (std::strncmp(tag, "data", 4) == 0) {
            samples.resize(chunk / 2);
            for (auto& s : samples) {
                int16_t v = 0;
                f.read(reinterpret_cast<char*>(&v), 2);
                s = v / 32767.0;
            }
            break;
        } else {
            f.seekg(chunk, std::ios::cur);
        }
    }
    if (sr == 0 || samples.empty()) throw std::runtime_error("malformed wav: " + path);
    if (sample_rate) *sample_rate = sr;
    (void)u16;
    return samples;
}

}  // namespace avldm
