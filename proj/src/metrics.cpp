#include "metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>

#include "data.hpp"
#include "json.hpp"

namespace avldm {

namespace {

void check_unit(const std::vector<double>& v, const std::string& who) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
        throw std::runtime_error("embedding from " + who + " is not unit-norm (|v| = " + std::to_string(std::sqrt(n2)) +
                                 ")");
}

void normalize(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    double n = std::sqrt(n2);
    check(n > 0, "cannot normalize zero embedding");
    for (double& x : v) x /= n;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); i++) acc += a[i] * b[i];
    return acc;
}

std::vector<double> seeded_noise(uint64_t seed, int64_t dim) {
    Rng rng(seed, "embed-noise");
    std::vector<double> v(static_cast<size_t>(dim));
    for (auto& x : v) x = rng.normal();
    return v;
}

uint64_t content_hash(const double* p, int64_t n) {
    // quantized so the hash is stable under tiny IO-roundtrip jitter
    uint64_t h = 0xcbf29ce484222325ull;
    for (int64_t i = 0; i < n; i++) {
        int32_t q = static_cast<int32_t>(std::lround(p[i] * 255.0));
        h = fnv1a64(&q, sizeof(q), h);
    }
    return h;
}

// vertical centroid (0..1) of above-background brightness in one frame
double frame_vertical_centroid(const Tensor& frame) {
    const int64_t H = frame.shape[1], W = frame.shape[2];
    double wsum = 0.0, ysum = 0.0;
    for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++) {
            double v = 0.0;
            for (int c = 0; c < 3; c++) v += frame[(c * H + y) * W + x];
            v = v / 3.0 + 0.85;  // lift above the canonical background
            if (v > 0.15) {
                wsum += v;
                ysum += v * (static_cast<double>(y) + 0.5) / static_cast<double>(H);
            }
        }
    return wsum > 1e-9 ? ysum / wsum : 0.5;
}

// mean dominant mel bin of a spectrogram, normalized to 0..1
double audio_pitch_position(const AudioSpectrogram& audio) {
    const int64_t M = audio.mel_bins(), F = audio.frames();
    double acc = 0.0;
    for (int64_t f = 0; f < F; f++) {
        int best = 0;
        double bv = -1e300;
        for (int64_t m = 0; m < M; m++) {
            double v = audio.data[m * F + f];
            if (v > bv) {
                bv = v;
                best = static_cast<int>(m);
            }
        }
        acc += static_cast<double>(best) / static_cast<double>(M - 1);
    }
    return acc / static_cast<double>(F);
}

class ToyAlignedProvider : public EmbeddingProvider {
public:
    ToyAlignedProvider(int64_t dim, double noise) : dim_(dim), noise_(noise) {
        check(dim_ >= 4, "toy provider needs dim >= 4");
    }
    std::string id() const override { return "toy-aligned-v1"; }
    int64_t dim() const override { return dim_; }

    std::vector<double> embed_frame(const Tensor& frame) const override {
        check(frame.rank() == 3 && frame.shape[0] == 3, "embed_frame expects [3,H,W]");
        double y = frame_vertical_centroid(frame);
        // map through the canonical pitch law into mel-bin space so the
        // coordinate matches what embed_audio observes
        PitchLaw law;
        MelConfig mc;
        double bin = mel_bin_of_frequency(mc, law.freq_at(y));
        double coord = bin / static_cast<double>(mc.n_mels - 1);
        return build(coord, content_hash(frame.ptr(), frame.numel()));
    }
    std::vector<double> embed_audio(const AudioSpectrogram& audio) const override {
        double coord = audio_pitch_position(audio);
        return build(coord, content_hash(audio.data.ptr(), audio.data.numel()));
    }
    std::vector<double> embed_text(const std::string& text) const override {
        auto v = seeded_noise(fnv1a64(text), dim_);
        normalize(v);
        return v;
    }

private:
    std::vector<double> build(double coord, uint64_t seed) const {
        std::vector<double> v(static_cast<size_t>(dim_), 0.0);
        v[0] = std::cos(M_PI * coord);
        v[1] = std::sin(M_PI * coord);
        auto n = seeded_noise(seed, dim_ - 2);
        for (int64_t i = 2; i < dim_; i++) v[static_cast<size_t>(i)] = noise_ * n[static_cast<size_t>(i - 2)];
        normalize(v);
        return v;
    }
    int64_t dim_;
    double noise_;
};

class HashProvider : public EmbeddingProvider {
public:
    explicit HashProvider(int64_t dim) : dim_(dim) {}
    std::string id() const override { return "hash-v1"; }
    int64_t dim() const override { return dim_; }
    std::vector<double> embed_frame(const Tensor& frame) const override {
        auto v = seeded_noise(content_hash(frame.ptr(), frame.numel()), dim_);
        normalize(v);
        return v;
    }
    std::vector<double> embed_audio(const AudioSpectrogram& audio) const override {
        auto v = seeded_noise(content_hash(audio.data.ptr(), audio.data.numel()), dim_);
        normalize(v);
        return v;
    }
    std::vector<double> embed_text(const std::string& text) const override {
        auto v = seeded_noise(fnv1a64(text), dim_);
        normalize(v);
        return v;
    }

private:
    int64_t dim_;
};

}  // namespace

std::unique_ptr<EmbeddingProvider> make_toy_aligned_provider(int64_t dim, double noise) {
    return std::make_unique<ToyAlignedProvider>(dim, noise);
}

std::unique_ptr<EmbeddingProvider> make_hash_provider(int64_t dim) { return std::make_unique<HashProvider>(dim); }

std::unique_ptr<EmbeddingProvider> make_provider(const std::string& name) {
    if (name == "toy" || name == "toy-aligned-v1") return make_toy_aligned_provider();
    if (name == "hash" || name == "hash-v1") return make_hash_provider();
    throw std::invalid_argument("unknown embedding provider: " + name);
}

std::vector<Tensor> split_frames(const VideoTensor& video) {
    const int64_t T = video.frames(), H = video.height(), W = video.width();
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; t++) {
        Tensor f({3, H, W});
        std::copy(video.data.data.begin() + t * 3 * H * W, video.data.data.begin() + (t + 1) * 3 * H * W,
                  f.data.begin());
        out.push_back(std::move(f));
    }
    return out;
}

DistributionStats compute_stats(const std::vector<std::vector<double>>& samples) {
    check(samples.size() >= 2, "distribution stats need at least 2 samples");
    const int64_t n = static_cast<int64_t>(samples.size());
    const int64_t d = static_cast<int64_t>(samples[0].size());
    DistributionStats st;
    st.count = n;
    st.mean.assign(static_cast<size_t>(d), 0.0);
    st.cov.assign(static_cast<size_t>(d * d), 0.0);
    for (const auto& s : samples) {
        check(static_cast<int64_t>(s.size()) == d, "stats: dimension mismatch");
        for (int64_t i = 0; i < d; i++) st.mean[static_cast<size_t>(i)] += s[static_cast<size_t>(i)];
    }
    for (auto& m : st.mean) m /= static_cast<double>(n);
    for (const auto& s : samples)
        for (int64_t i = 0; i < d; i++)
            for (int64_t j = 0; j < d; j++)
                st.cov[static_cast<size_t>(i * d + j)] +=
                    (s[static_cast<size_t>(i)] - st.mean[static_cast<size_t>(i)]) *
                    (s[static_cast<size_t>(j)] - st.mean[static_cast<size_t>(j)]);
    for (auto& c : st.cov) c /= static_cast<double>(n - 1);
    return st;
}

double avh_score(const std::vector<Tensor>& frames, const AudioSpectrogram& audio, const EmbeddingProvider& p) {
    check(!frames.empty(), "avh_score: need at least one frame");
    auto ea = p.embed_audio(audio);
    check_unit(ea, p.id() + ".embed_audio");
    check(static_cast<int64_t>(ea.size()) == p.dim(), "avh_score: provider dim mismatch");
    double acc = 0.0;
    for (const auto& f : frames) {
        auto ev = p.embed_frame(f);
        check_unit(ev, p.id() + ".embed_frame");
        check(ev.size() == ea.size(), "avh_score: embedding dimension mismatch");
        acc += dot(ev, ea);
    }
    return acc / static_cast<double>(frames.size());
}

double frechet_distance(const DistributionStats& s1, const DistributionStats& s2) {
    check(s1.dim() == s2.dim(), "frechet: dimension mismatch");
    const int64_t d = s1.dim();
    using Mat = Eigen::MatrixXd;
    Mat S1 = Eigen::Map<const Mat>(s1.cov.data(), d, d);
    Mat S2 = Eigen::Map<const Mat>(s2.cov.data(), d, d);
    // enforce symmetry before use
    S1 = 0.5 * (S1 + S1.transpose()).eval();
    S2 = 0.5 * (S2 + S2.transpose()).eval();

    double mean_term = 0.0;
    for (int64_t i = 0; i < d; i++) {
        double dm = s1.mean[static_cast<size_t>(i)] - s2.mean[static_cast<size_t>(i)];
        mean_term += dm * dm;
    }
    Mat prod = S1 * S2;
    Mat sym = 0.5 * (prod + prod.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(sym);
    check(es.info() == Eigen::Success, "frechet: eigendecomposition failed");
    double tr_sqrt = 0.0;
    for (int64_t i = 0; i < d; i++) {
        double ev = es.eigenvalues()(i);
        if (ev < -1e-8) throw std::runtime_error("frechet: covariance product is not PSD (eigenvalue " +
                                                 std::to_string(ev) + ")");
        tr_sqrt += std::sqrt(std::max(ev, 0.0));
    }
    return mean_term + S1.trace() + S2.trace() - 2.0 * tr_sqrt;
}

namespace {
double poly_kernel(const std::vector<double>& a, const std::vector<double>& b) {
    double d = static_cast<double>(a.size());
    double v = dot(a, b) / d + 1.0;
    return v * v * v;
}
}  // namespace

double kernel_distance(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
    const int64_t m = static_cast<int64_t>(x.size()), n = static_cast<int64_t>(y.size());
    check(m >= 2 && n >= 2, "kernel_distance: need at least 2 samples per set");
    if (m == n) {
        // paired U-statistic: sum_{i != j} [k(xi,xj) + k(yi,yj) - k(xi,yj) - k(xj,yi)] / (m(m-1))
        double acc = 0.0;
        for (int64_t i = 0; i < m; i++)
            for (int64_t j = 0; j < m; j++) {
                if (i == j) continue;
                acc += poly_kernel(x[static_cast<size_t>(i)], x[static_cast<size_t>(j)]) +
                       poly_kernel(y[static_cast<size_t>(i)], y[static_cast<size_t>(j)]) -
                       poly_kernel(x[static_cast<size_t>(i)], y[static_cast<size_t>(j)]) -
                       poly_kernel(x[static_cast<size_t>(j)], y[static_cast<size_t>(i)]);
            }
        return acc / static_cast<double>(m * (m - 1));
    }
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (int64_t i = 0; i < m; i++)
        for (int64_t j = 0; j < m; j++)
            if (i != j) kxx += poly_kernel(x[static_cast<size_t>(i)], x[static_cast<size_t>(j)]);
    for (int64_t i = 0; i < n; i++)
        for (int64_t j = 0; j < n; j++)
            if (i != j) kyy += poly_kernel(y[static_cast<size_t>(i)], y[static_cast<size_t>(j)]);
    for (int64_t i = 0; i < m; i++)
        for (int64_t j = 0; j < n; j++) kxy += poly_kernel(x[static_cast<size_t>(i)], y[static_cast<size_t>(j)]);
    return kxx / static_cast<double>(m * (m - 1)) + kyy / static_cast<double>(n * (n - 1)) -
           2.0 * kxy / static_cast<double>(m * n);
}

double prompt_similarity(const std::vector<Tensor>& frames, const std::string& caption, const EmbeddingProvider& p) {
    check(!frames.empty(), "prompt_similarity: need at least one frame");
    check(!caption.empty(), "prompt_similarity: empty caption");
    auto et = p.embed_text(caption);
    check_unit(et, p.id() + ".embed_text");
    double acc = 0.0;
    for (const auto& f : frames) {
        auto ev = p.embed_frame(f);
        check_unit(ev, p.id() + ".embed_frame");
        acc += dot(ev, et);
    }
    return acc / static_cast<double>(frames.size()) * 100.0;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["provider"] = provider;
    j["config_hash"] = config_hash;
    j["counts"] = counts;
    j["metrics"] = metrics;
    return j.dump(2);
}

void EvalReport::write(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write report: " + path);
    f << to_json() << "\n";
}

}  // namespace avldm
