#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "media_io.hpp"

namespace avldm::test {

// Small-geometry corpus for integration tests: 16x16 frames, 4 video frames,
// 32 spectrogram frames. Returns the manifest path.
inline std::string make_tiny_corpus(const std::string& dir, int count, uint64_t seed_base) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    MelAnalyzer mel;
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < count; i++) {
        SceneSpec spec = make_scene_spec(seed_base + static_cast<uint64_t>(i));
        spec.size = 16;
        spec.duration = 0.55;
        AudibleVideoSample s = generate_sample(spec, mel);
        ManifestEntry e;
        e.path_video = dir + "/s" + std::to_string(i) + ".avf";
        e.path_audio = dir + "/s" + std::to_string(i) + ".wav";
        e.caption = s.caption;
        e.aligned = true;
        e.seed = s.seed;
        e.audio_seed = s.audio_seed;
        write_frame_stack(e.path_video, s.video);
        write_wav16(e.path_audio, s.waveform, mel.config().sample_rate);
        entries.push_back(e);
    }
    std::string manifest = dir + "/manifest.jsonl";
    write_manifest(entries, manifest);
    return manifest;
}

inline RunConfig tiny_config(const std::string& manifest, const std::string& out_dir) {
    RunConfig c;
    c.timesteps = 50;
    c.model.base_width = 8;
    c.model.mult = 2;
    c.model.time_dim = 16;
    c.model.text_dim = 8;
    c.model.heads = 2;
    c.model.groups = 4;
    c.batch_size = 2;
    c.steps = 4;
    c.checkpoint_every = 0;
    c.train_manifest = manifest;
    c.video_frames = 4;
    c.video_size = 16;
    c.spec_frames = 32;
    c.ddim_steps = 10;
    c.out_dir = out_dir;
    return c;
}

}  // namespace avldm::test
