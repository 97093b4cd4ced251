#pragma once

#include <string>
#include <vector>

#include "audio.hpp"
#include "codecs.hpp"

namespace avldm {

enum class ShapeKind { Circle, Square, Triangle };
enum class MotionKind { Bounce, Slide, Orbit };

ShapeKind shape_from_string(const std::string& s);
MotionKind motion_from_string(const std::string& s);

// Monotone map from normalized vertical position (0 = top of frame) to tone
// frequency: higher on screen means higher pitch.
struct PitchLaw {
    double f_top = 1760.0;
    double f_bottom = 220.0;
    double freq_at(double y_norm) const;
};

struct SceneSpec {
    ShapeKind shape = ShapeKind::Circle;
    MotionKind motion = MotionKind::Bounce;
    PitchLaw pitch_law;
    double duration = 2.0;  // seconds; audio pads to the analysis frame grid
    double fps = 10.0;
    int size = 64;  // square frames
    uint64_t seed = 0;
};

// Random-but-deterministic spec for a corpus index.
SceneSpec make_scene_spec(uint64_t seed);

struct AudibleVideoSample {
    VideoTensor video;
    AudioSpectrogram audio;
    std::string caption;
    bool aligned = true;
    uint64_t seed = 0;        // scene seed (video + caption)
    uint64_t audio_seed = 0;  // seed of the audio track; == seed when aligned
    std::vector<double> waveform;
};

// shape center at time t, normalized [0,1] coords (y grows downward)
void scene_position(const SceneSpec& spec, double t, double* x, double* y);

AudibleVideoSample generate_sample(const SceneSpec& spec, const MelAnalyzer& mel);

// Swap in an audio track from another scene. The aligned flag becomes true
// only when the incoming audio's seed matches the video's seed (so swapping
// the original audio back restores the original sample). Swapping in the
// audio that is already present is an error.
AudibleVideoSample make_misaligned(const AudibleVideoSample& s, const AudioSpectrogram& other_audio,
                                   const std::vector<double>& other_waveform, uint64_t other_audio_seed);

// fraction of frames whose dominant mel bin matches pitch_law at the shape's
// rendered position within one bin; the generator's alignment oracle
double alignment_fraction(const AudibleVideoSample& s, const SceneSpec& spec, const MelConfig& mel_cfg);

// ---- manifests (one JSON record per line) ----

struct ManifestEntry {
    std::string path_video;
    std::string path_audio;
    std::string caption;
    bool aligned = true;
    uint64_t seed = 0;
    uint64_t audio_seed = 0;
};

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Reads media named by the entry (frame stack + wav -> analyzed spectrogram).
AudibleVideoSample load_sample(const ManifestEntry& e, const MelAnalyzer& mel);

struct DatasetLayout {
    std::string dir;
    std::string manifest_path;
    int count = 0;
};

// Generates `count` aligned samples with seeds [seed_base, seed_base+count),
// plus `misaligned` extra entries whose audio is taken from the next sample
// (cyclically). Returns the manifest location.
DatasetLayout generate_dataset(const std::string& dir, int count, uint64_t seed_base, int misaligned,
                               const MelAnalyzer& mel);

}  // namespace avldm
