#include "data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "media_io.hpp"

namespace avldm {

namespace {
constexpr double kMargin = 0.14;  // keeps the shape inside the frame

// triangle-wave reflection of p into [lo, hi]
double reflect(double p, double lo, double hi) {
    double span = hi - lo;
    double q = std::fmod(p - lo, 2.0 * span);
    if (q < 0) q += 2.0 * span;
    return q <= span ? lo + q : hi - (q - span);
}

struct ShapeStyle {
    const char* name;
    const char* color_name;
    double rgb[3];
    const char* timbre;
};

const ShapeStyle kStyles[3] = {
    {"circle", "red", {0.9, -0.45, -0.45}, "a soft pure tone"},
    {"square", "green", {-0.45, 0.9, -0.45}, "a bright reedy tone"},
    {"triangle", "blue", {-0.35, -0.35, 0.9}, "a hollow mellow tone"},
};

const char* motion_name(MotionKind m) {
    switch (m) {
        case MotionKind::Bounce: return "bounce";
        case MotionKind::Slide: return "slide";
        case MotionKind::Orbit: return "orbit";
    }
    return "";
}

const char* motion_phrase(MotionKind m) {
    switch (m) {
        case MotionKind::Bounce: return "bounces up and down";
        case MotionKind::Slide: return "slides across the frame";
        case MotionKind::Orbit: return "circles around the center";
    }
    return "";
}

const char* sound_phrase(MotionKind m) {
    switch (m) {
        case MotionKind::Bounce: return "rises and falls in step with it";
        case MotionKind::Slide: return "glides smoothly";
        case MotionKind::Orbit: return "wavers up and down";
    }
    return "";
}
}  // namespace

ShapeKind shape_from_string(const std::string& s) {
    if (s == "circle") return ShapeKind::Circle;
    if (s == "square") return ShapeKind::Square;
    if (s == "triangle") return ShapeKind::Triangle;
    throw std::invalid_argument("unknown shape: " + s);
}

MotionKind motion_from_string(const std::string& s) {
    if (s == "bounce") return MotionKind::Bounce;
    if (s == "slide") return MotionKind::Slide;
    if (s == "orbit") return MotionKind::Orbit;
    throw std::invalid_argument("unknown motion: " + s);
}

double PitchLaw::freq_at(double y_norm) const {
    double y = std::clamp(y_norm, 0.0, 1.0);
    return f_top * std::pow(f_bottom / f_top, y);
}

SceneSpec make_scene_spec(uint64_t seed) {
    Rng rng(seed, "scene");
    SceneSpec spec;
    spec.seed = seed;
    spec.shape = static_cast<ShapeKind>(rng.below(3));
    spec.motion = static_cast<MotionKind>(rng.below(3));
    return spec;
}

void scene_position(const SceneSpec& spec, double t, double* x, double* y) {
    Rng rng(spec.seed, "motion");
    const double lo = kMargin, hi = 1.0 - kMargin;
    switch (spec.motion) {
        case MotionKind::Bounce: {
            double y0 = rng.uniform(lo, hi);
            double vy = rng.uniform(0.9, 1.3);  // range traversals per second
            *x = 0.5;
            *y = reflect(y0 + vy * (hi - lo) * t, lo, hi);
            break;
        }
        case MotionKind::Slide: {
            double y0 = rng.uniform(lo, hi);
            double y1 = rng.uniform(lo, hi);
            double u = std::clamp(t / spec.duration, 0.0, 1.1);
            *x = lo + (hi - lo) * std::clamp(u, 0.0, 1.0);
            *y = y0 + (y1 - y0) * u;
            break;
        }
        case MotionKind::Orbit: {
            double phi0 = rng.uniform(0.0, 2.0 * M_PI);
            double omega = rng.uniform(0.4, 0.6);  // revolutions per second
            double r = 0.5 - kMargin;
            *x = 0.5 + r * std::cos(2.0 * M_PI * omega * t + phi0);
            *y = 0.5 + r * std::sin(2.0 * M_PI * omega * t + phi0);
            break;
        }
    }
    *y = std::clamp(*y, 0.0, 1.0);
    *x = std::clamp(*x, 0.0, 1.0);
}

namespace {

double shape_coverage(ShapeKind kind, double dx, double dy, double radius, double aa) {
    double d;
    switch (kind) {
        case ShapeKind::Circle:
            d = std::sqrt(dx * dx + dy * dy) - radius;
            break;
        case ShapeKind::Square:
            d = std::max(std::abs(dx), std::abs(dy)) - radius;
            break;
        case ShapeKind::Triangle: {
            // upward triangle via three edge half-planes (y grows downward)
            const double vx[3] = {0.0, 0.866 * radius, -0.866 * radius};
            const double vy[3] = {-radius, 0.5 * radius, 0.5 * radius};
            d = -1e9;
            for (int e = 0; e < 3; e++) {
                double ax = vx[e], ay = vy[e];
                double bx2 = vx[(e + 1) % 3], by2 = vy[(e + 1) % 3];
                double ex = bx2 - ax, ey = by2 - ay;
                double len = std::sqrt(ex * ex + ey * ey);
                double de = (ey * (dx - ax) - ex * (dy - ay)) / len;  // signed line distance, inside < 0
                d = std::max(d, de);
            }
            break;
        }
        default:
            d = 1.0;
    }
    return std::clamp(0.5 - d / aa, 0.0, 1.0);
}

std::string build_caption(const SceneSpec& spec) {
    const ShapeStyle& st = kStyles[static_cast<int>(spec.shape)];
    Rng rng(spec.seed, "caption");
    char buf[256];
    if (rng.below(2) == 0) {
        std::snprintf(buf, sizeof(buf), "A %s %s %s while %s %s.", st.color_name, st.name, motion_phrase(spec.motion),
                      st.timbre, sound_phrase(spec.motion));
    } else {
        std::snprintf(buf, sizeof(buf), "A %s %s %s. Meanwhile %s %s.", st.color_name, st.name,
                      motion_phrase(spec.motion), st.timbre, sound_phrase(spec.motion));
    }
    return buf;
}

}  // namespace

AudibleVideoSample generate_sample(const SceneSpec& spec, const MelAnalyzer& mel) {
    check(spec.duration > 0.0, "scene duration must be positive");
    check(spec.size % 8 == 0, "frame size must be divisible by 8");
    const int frames = static_cast<int>(std::lround(spec.duration * spec.fps));
    check(frames >= 1, "scene too short for one frame");

    AudibleVideoSample s;
    s.seed = spec.seed;
    s.audio_seed = spec.seed;
    s.aligned = true;
    s.caption = build_caption(spec);

    // ---- video ----
    const int sz = spec.size;
    const double radius = 0.11;
    const double aa = 1.5 / sz;
    const ShapeStyle& st = kStyles[static_cast<int>(spec.shape)];
    s.video.frame_rate = spec.fps;
    s.video.data = Tensor({frames, 3, sz, sz});
    for (int f = 0; f < frames; f++) {
        double t = (f + 0.5) / spec.fps;
        double cx, cy;
        scene_position(spec, t, &cx, &cy);
        for (int y = 0; y < sz; y++)
            for (int x = 0; x < sz; x++) {
                double px = (x + 0.5) / sz, py = (y + 0.5) / sz;
                double cov = shape_coverage(spec.shape, px - cx, py - cy, radius, aa);
                for (int c = 0; c < 3; c++) {
                    double bg = -0.85;
                    s.video.data[((static_cast<int64_t>(f) * 3 + c) * sz + y) * sz + x] =
                        bg + cov * (st.rgb[c] - bg);
                }
            }
    }

    // ---- audio: phase-continuous tone following the pitch law ----
    const MelConfig& mc = mel.config();
    int64_t want_frames = 1 + std::max<int64_t>(0, (static_cast<int64_t>(spec.duration * mc.sample_rate) - mc.n_fft +
                                                    mc.hop - 1) / mc.hop);
    want_frames = (want_frames + 7) / 8 * 8;
    const int64_t n_samples = mel.samples_for_frames(want_frames);
    s.waveform.resize(static_cast<size_t>(n_samples));
    double phase = 0.0;
    const double amp = 0.4;
    const double fade = 0.005 * mc.sample_rate;
    for (int64_t i = 0; i < n_samples; i++) {
        double t = static_cast<double>(i) / mc.sample_rate;
        double cx, cy;
        scene_position(spec, t, &cx, &cy);
        double f = spec.pitch_law.freq_at(cy);
        phase += 2.0 * M_PI * f / mc.sample_rate;
        double v = std::sin(phase);
        if (spec.shape == ShapeKind::Square) v += 0.3 * std::sin(3.0 * phase);
        if (spec.shape == ShapeKind::Triangle) v += 0.3 * std::sin(2.0 * phase);
        double env = 1.0;
        if (i < fade) env = static_cast<double>(i) / fade;
        if (i > n_samples - fade) env = static_cast<double>(n_samples - i) / fade;
        s.waveform[static_cast<size_t>(i)] = amp * v * env;
    }
    s.audio = mel.analyze(s.waveform);
    return s;
}

AudibleVideoSample make_misaligned(const AudibleVideoSample& s, const AudioSpectrogram& other_audio,
                                   const std::vector<double>& other_waveform, uint64_t other_audio_seed) {
    check(other_audio_seed != s.audio_seed,
          "make_misaligned: incoming audio has the same seed as the current track");
    AudibleVideoSample out = s;
    out.audio = other_audio;
    out.waveform = other_waveform;
    out.audio_seed = other_audio_seed;
    out.aligned = (other_audio_seed == s.seed);
    return out;
}

double alignment_fraction(const AudibleVideoSample& s, const SceneSpec& spec, const MelConfig& mel_cfg) {
    const int64_t frames = s.video.frames();
    const int64_t cols = s.audio.frames();
    const int64_t mels = s.audio.mel_bins();
    int64_t hits = 0;
    for (int64_t f = 0; f < frames; f++) {
        double t = (f + 0.5) / s.video.frame_rate;
        int64_t col = std::min<int64_t>(cols - 1, std::max<int64_t>(0, std::llround(t * mel_cfg.sample_rate / mel_cfg.hop)));
        int best = 0;
        double best_v = -1e300;
        for (int m = 0; m < mels; m++) {
            double v = s.audio.data[m * cols + col];
            if (v > best_v) {
                best_v = v;
                best = m;
            }
        }
        double cx, cy;
        scene_position(spec, t, &cx, &cy);
        int expect = mel_bin_of_frequency(mel_cfg, spec.pitch_law.freq_at(cy));
        if (std::abs(best - expect) <= 1) hits++;
    }
    return static_cast<double>(hits) / static_cast<double>(frames);
}

// ---- manifests ----

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write manifest: " + path);
    for (const auto& e : entries) {
        nlohmann::json j;
        j["path_video"] = e.path_video;
        j["path_audio"] = e.path_audio;
        j["caption"] = e.caption;
        j["aligned"] = e.aligned;
        j["seed"] = e.seed;
        j["audio_seed"] = e.audio_seed;
        f << j.dump() << "\n";
    }
    if (!f) throw std::runtime_error("manifest write failed: " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read manifest: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        lineno++;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.path_video = j.at("path_video");
            e.path_audio = j.at("path_audio");
            e.caption = j.at("caption");
            e.aligned = j.at("aligned");
            e.seed = j.at("seed");
            e.audio_seed = j.value("audio_seed", e.seed);
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw std::runtime_error("manifest parse error at " + path + ":" + std::to_string(lineno) + ": " +
                                     ex.what());
        }
    }
    return out;
}

AudibleVideoSample load_sample(const ManifestEntry& e, const MelAnalyzer& mel) {
    AudibleVideoSample s;
    if (!std::filesystem::exists(e.path_video)) throw std::runtime_error("missing media file: " + e.path_video);
    if (!std::filesystem::exists(e.path_audio)) throw std::runtime_error("missing media file: " + e.path_audio);
    s.video = read_frame_stack(e.path_video);
    int sr = 0;
    s.waveform = read_wav16(e.path_audio, &sr);
    check(sr == mel.config().sample_rate, "wav sample rate mismatch in " + e.path_audio);
    s.audio = mel.analyze(s.waveform);
    s.caption = e.caption;
    s.aligned = e.aligned;
    s.seed = e.seed;
    s.audio_seed = e.audio_seed;
    return s;
}

DatasetLayout generate_dataset(const std::string& dir, int count, uint64_t seed_base, int misaligned,
                               const MelAnalyzer& mel) {
    check(count >= 1, "dataset needs at least one sample");
    check(misaligned <= count, "cannot produce more misaligned entries than samples");
    std::filesystem::create_directories(dir);
    std::vector<ManifestEntry> entries;
    std::vector<AudibleVideoSample> samples;
    samples.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; i++) {
        SceneSpec spec = make_scene_spec(seed_base + static_cast<uint64_t>(i));
        AudibleVideoSample s = generate_sample(spec, mel);
        char vname[64], aname[64];
        std::snprintf(vname, sizeof(vname), "sample_%05d.avf", i);
        std::snprintf(aname, sizeof(aname), "sample_%05d.wav", i);
        write_frame_stack(dir + "/" + vname, s.video);
        write_wav16(dir + "/" + aname, s.waveform, mel.config().sample_rate);
        ManifestEntry e;
        e.path_video = dir + "/" + vname;
        e.path_audio = dir + "/" + aname;
        e.caption = s.caption;
        e.aligned = true;
        e.seed = s.seed;
        e.audio_seed = s.audio_seed;
        entries.push_back(e);
        samples.push_back(std::move(s));
    }
    // misaligned controls: video i paired with audio of sample i+1 (cyclic)
    for (int i = 0; i < misaligned; i++) {
        int j = (i + 1) % count;
        ManifestEntry e = entries[static_cast<size_t>(i)];
        e.path_audio = entries[static_cast<size_t>(j)].path_audio;
        e.aligned = false;
        e.audio_seed = entries[static_cast<size_t>(j)].seed;
        entries.push_back(e);
    }
    DatasetLayout layout;
    layout.dir = dir;
    layout.manifest_path = dir + "/manifest.jsonl";
    layout.count = static_cast<int>(entries.size());
    write_manifest(entries, layout.manifest_path);
    return layout;
}

}  // namespace avldm
