#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace avldm {

// Normalized log-mel spectrogram, data [1, mel_bins, frames], values in
// [-1, 1] with -1 == digital silence. Frame count is always a multiple of 8.
struct AudioSpectrogram {
    Tensor data;
    int sample_rate = 16000;
    int hop = 256;

    int64_t mel_bins() const { return data.shape[1]; }
    int64_t frames() const { return data.shape[2]; }
};

struct MelConfig {
    int sample_rate = 16000;
    int n_fft = 1024;
    int hop = 256;
    int n_mels = 64;
    double fmin = 30.0;
    double fmax = 8000.0;
};

// STFT analysis / Griffin-Lim synthesis around the fixed mel representation.
// Analysis zero-pads the waveform so the frame count lands on a multiple
// of 8; synthesize() runs iterative phase recovery (32 rounds by default).
class MelAnalyzer {
public:
    explicit MelAnalyzer(MelConfig cfg = {});
    ~MelAnalyzer();
    MelAnalyzer(const MelAnalyzer&) = delete;
    MelAnalyzer& operator=(const MelAnalyzer&) = delete;

    const MelConfig& config() const { return cfg_; }

    AudioSpectrogram analyze(const std::vector<double>& wav) const;
    std::vector<double> synthesize(const AudioSpectrogram& spec, int iterations = 32) const;

    // samples needed for exactly `frames` analysis frames
    int64_t samples_for_frames(int64_t frames) const;

    // value mapping between mel magnitudes and the [-1,1] storage range
    static double compress(double mel);
    static double expand(double value);

private:
    struct Fft;
    MelConfig cfg_;
    std::vector<double> window_;
    std::vector<double> filters_;     // [n_mels, n_fft/2+1]
    std::vector<double> filter_col_;  // per-linear-bin column sums, for the transpose inverse
    std::unique_ptr<Fft> fft_;

    void stft(const std::vector<double>& wav, int64_t frames, std::vector<double>& re, std::vector<double>& im) const;
    std::vector<double> istft(const std::vector<double>& re, const std::vector<double>& im, int64_t frames,
                              int64_t n_samples) const;
};

// mel bin index of frequency f under the analyzer's filterbank layout
int mel_bin_of_frequency(const MelConfig& cfg, double f);

// 16-bit PCM mono WAV
void write_wav16(const std::string& path, const std::vector<double>& samples, int sample_rate);
std::vector<double> read_wav16(const std::string& path, int* sample_rate);

}  // namespace avldm
