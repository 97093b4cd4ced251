#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "audio.hpp"
#include "codecs.hpp"

namespace avldm {

// Shared unit-norm embedding space for evaluation. Every output is checked
// to be L2-normalized within 1e-6 at the point of use; violations raise.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string id() const = 0;
    virtual int64_t dim() const = 0;
    virtual std::vector<double> embed_frame(const Tensor& frame) const = 0;  // [3,H,W]
    virtual std::vector<double> embed_audio(const AudioSpectrogram& audio) const = 0;
    virtual std::vector<double> embed_text(const std::string& text) const = 0;
};

// Alignment-aware toy provider: the dominant mel bin of the audio and the
// shape's vertical position (mapped through the canonical pitch law) land in
// the same 2-d signal subspace, plus small content-seeded noise in the
// remaining dims. Ground-truth aligned pairs therefore score measurably
// higher than mismatched ones.
std::unique_ptr<EmbeddingProvider> make_toy_aligned_provider(int64_t dim = 16, double noise = 0.15);

// Pure content-hash provider (no alignment signal); useful for distribution
// metric self-tests.
std::unique_ptr<EmbeddingProvider> make_hash_provider(int64_t dim = 16);

std::unique_ptr<EmbeddingProvider> make_provider(const std::string& name);

struct DistributionStats {
    std::vector<double> mean;
    std::vector<double> cov;  // row-major [d, d], symmetric
    int64_t count = 0;
    int64_t dim() const { return static_cast<int64_t>(mean.size()); }
};

DistributionStats compute_stats(const std::vector<std::vector<double>>& samples);

// mean over frames of cos(E_v(frame_i), E_a(audio)), in [-1, 1]
double avh_score(const std::vector<Tensor>& frames, const AudioSpectrogram& audio, const EmbeddingProvider& p);

// |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}); the matrix root comes from an
// eigendecomposition of the symmetrized product with eigenvalues clipped at
// -1e-8 (more negative is an error).
double frechet_distance(const DistributionStats& s1, const DistributionStats& s2);

// Squared MMD with the polynomial kernel (x.y/d + 1)^3. Equal-size inputs
// use the paired U-statistic (unbiased, exactly zero on identical sets);
// otherwise the standard three-term unbiased estimator.
double kernel_distance(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y);

// mean frame-text cosine, scaled x100 for report parity
double prompt_similarity(const std::vector<Tensor>& frames, const std::string& caption, const EmbeddingProvider& p);

std::vector<Tensor> split_frames(const VideoTensor& video);

// evaluation report (JSON): provider id, sample counts, metric -> value
struct EvalReport {
    std::string provider;
    std::map<std::string, double> metrics;
    std::map<std::string, int64_t> counts;
    std::string config_hash;
    void write(const std::string& path) const;
    std::string to_json() const;
};

}  // namespace avldm
