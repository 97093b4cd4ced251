#include "config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace avldm {

using nlohmann::json;

static json to_json(const RunConfig& c) {
    json j;
    j["schedule"] = {{"timesteps", c.timesteps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
    j["model"] = {{"base_width", c.model.base_width}, {"mult", c.model.mult},   {"time_dim", c.model.time_dim},
                  {"text_dim", c.model.text_dim},     {"heads", c.model.heads}, {"groups", c.model.groups},
                  {"temporal", c.model.temporal}};
    j["bridge"] = {{"enabled", c.bridge_enabled}};
    j["loss"] = {{"lambda_eas", c.lambda_eas}, {"tau", c.tau}, {"eas_pooled", c.eas_pooled}};
    j["train"] = {{"batch_size", c.batch_size}, {"steps", c.steps},     {"lr", c.lr},
                  {"seed", c.seed},             {"checkpoint_every", c.checkpoint_every}};
    j["data"] = {{"train_manifest", c.train_manifest}, {"codec", c.codec},
                 {"codec_ckpt_video", c.codec_ckpt_video}, {"codec_ckpt_audio", c.codec_ckpt_audio},
                 {"video_frames", c.video_frames},     {"video_size", c.video_size},
                 {"fps", c.fps},                       {"mel_bins", c.mel_bins},
                 {"spec_frames", c.spec_frames}};
    j["sample"] = {{"ddim_steps", c.ddim_steps}};
    j["out_dir"] = c.out_dir;
    return j;
}

static RunConfig parse(const json& j) {
    RunConfig c;
    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        c.timesteps = s.value("timesteps", c.timesteps);
        c.beta_start = s.value("beta_start", c.beta_start);
        c.beta_end = s.value("beta_end", c.beta_end);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        c.model.base_width = m.value("base_width", c.model.base_width);
        c.model.mult = m.value("mult", c.model.mult);
        c.model.time_dim = m.value("time_dim", c.model.time_dim);
        c.model.text_dim = m.value("text_dim", c.model.text_dim);
        c.model.heads = m.value("heads", c.model.heads);
        c.model.groups = m.value("groups", c.model.groups);
        c.model.temporal = m.value("temporal", c.model.temporal);
    }
    if (j.contains("bridge")) c.bridge_enabled = j["bridge"].value("enabled", c.bridge_enabled);
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        c.lambda_eas = l.value("lambda_eas", c.lambda_eas);
        c.tau = l.value("tau", c.tau);
        c.eas_pooled = l.value("eas_pooled", c.eas_pooled);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        c.batch_size = t.value("batch_size", c.batch_size);
        c.steps = t.value("steps", c.steps);
        c.lr = t.value("lr", c.lr);
        c.seed = t.value("seed", c.seed);
        c.checkpoint_every = t.value("checkpoint_every", c.checkpoint_every);
    }
    if (j.contains("data")) {
        const auto& d = j["data"];
        c.train_manifest = d.value("train_manifest", c.train_manifest);
        c.codec = d.value("codec", c.codec);
        c.codec_ckpt_video = d.value("codec_ckpt_video", c.codec_ckpt_video);
        c.codec_ckpt_audio = d.value("codec_ckpt_audio", c.codec_ckpt_audio);
        c.video_frames = d.value("video_frames", c.video_frames);
        c.video_size = d.value("video_size", c.video_size);
        c.fps = d.value("fps", c.fps);
        c.mel_bins = d.value("mel_bins", c.mel_bins);
        c.spec_frames = d.value("spec_frames", c.spec_frames);
    }
    if (j.contains("sample")) c.ddim_steps = j["sample"].value("ddim_steps", c.ddim_steps);
    c.out_dir = j.value("out_dir", c.out_dir);
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json_text(ss.str());
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("config parse error: ") + e.what());
    }
    RunConfig c = parse(j);
    c.validate();
    return c;
}

std::string RunConfig::to_json_text() const { return to_json(*this).dump(2); }

std::string RunConfig::hash() const {
    // nlohmann keeps object keys sorted, so dump() is canonical
    return hex16(fnv1a64(to_json(*this).dump()));
}

void RunConfig::validate() const {
    check(timesteps >= 1, "config: timesteps must be >= 1");
    check(beta_start > 0 && beta_start <= beta_end && beta_end < 1, "config: bad beta range");
    check(lambda_eas >= 0.0, "config: lambda_eas must be nonnegative");
    check(tau > 0.0, "config: tau must be positive");
    check(batch_size >= 1 && steps >= 0, "config: bad train sizes");
    check(lr > 0.0, "config: lr must be positive");
    check(model.base_width >= 8 && model.base_width % model.groups == 0,
          "config: base_width must be a positive multiple of the norm group count");
    check(model.time_dim % 2 == 0, "config: time_dim must be even");
    check(model.bottleneck_width() % model.heads == 0, "config: width not divisible by heads");
    check(video_size % 8 == 0 && mel_bins % 8 == 0 && spec_frames % 8 == 0, "config: media dims must be /8");
    check(ddim_steps >= 1 && ddim_steps <= timesteps, "config: ddim_steps out of range");
    check(codec == "analytic" || codec == "learned", "config: codec must be 'analytic' or 'learned'");
}

std::string resolve_output_path(const std::string& path) {
    const char* root = std::getenv("AVLDM_OUT_ROOT");
    if (!root || !*root) return path;
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(root) / p).string();
}

std::string RunConfig::resolved_out_dir() const { return resolve_output_path(out_dir); }

}  // namespace avldm
