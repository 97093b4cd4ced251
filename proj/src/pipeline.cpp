#include "pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "media_io.hpp"

namespace avldm {

namespace fs = std::filesystem;

TwoStreamModel::TwoStreamModel(const RunConfig& cfg_in)
    : cfg(cfg_in),
      audio(reg, "audio_unet", [&] {
          DenoiserConfig c = cfg_in.model;
          c.temporal = false;
          return c;
      }(), cfg_in.seed),
      video(reg, "video_unet", cfg_in.model, cfg_in.seed),
      sim_head(reg, "sim", cfg_in.model.bottleneck_width(), cfg_in.seed),
      text(cfg_in.model.text_dim, 16, 0x7ea7) {
    if (cfg.bridge_enabled)
        bridge.emplace(reg, "bridge", cfg.model.bottleneck_width(), cfg.model.heads, cfg.seed);
}

TwoStreamModel::Forward TwoStreamModel::forward(Graph& g, nn::Binder& bd, int z_a, int z_v, const std::vector<int>& t,
                                                const TextBatch& text_batch) const {
    AudioUnet::State sa;
    VideoUnet::State sv;
    int f_a = audio.encode(g, bd, z_a, t, text_batch, &sa);
    int f_v = video.encode(g, bd, z_v, t, text_batch, &sv);
    if (bridge) {
        auto [fa_hat, fv_hat] = bridge->forward(g, bd, f_a, f_v);
        f_a = fa_hat;
        f_v = fv_hat;
    }
    Forward out;
    out.f_a = f_a;
    out.f_v = f_v;
    out.eps_a = audio.decode(g, bd, f_a, sa);
    out.eps_v = video.decode(g, bd, f_v, sv);
    return out;
}

std::vector<EncodedSample> encode_corpus(const RunConfig& cfg, const std::vector<ManifestEntry>& entries) {
    check(!entries.empty(), "training corpus is empty");
    MelAnalyzer mel;
    auto vcodec = make_video_codec(cfg.codec, cfg.codec_ckpt_video, cfg.seed);
    auto acodec = make_audio_codec(cfg.codec, cfg.codec_ckpt_audio, cfg.seed);
    std::vector<EncodedSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        AudibleVideoSample s = load_sample(e, mel);
        EncodedSample enc;
        enc.z_a = acodec->encode(s.audio).data;
        enc.z_v = vcodec->encode(s.video).data;
        enc.caption = s.caption;
        out.push_back(std::move(enc));
    }
    return out;
}

namespace {

Tensor gaussian(const Shape& shape, Rng& rng) { return Tensor::randn(shape, rng); }

struct BatchTensors {
    Tensor z_a_t, z_v_t, eps_a, eps_v;
    std::vector<std::string> captions;
};

BatchTensors assemble_batch(const RunConfig& cfg, const std::vector<EncodedSample>& corpus, int step,
                            const NoiseSchedule& sched, int* t_out) {
    const int64_t B = cfg.batch_size;
    Rng batch_rng(cfg.seed, "batch", static_cast<uint64_t>(step));
    Rng t_rng(cfg.seed, "timestep", static_cast<uint64_t>(step));
    Rng ea_rng(cfg.seed, "eps_audio", static_cast<uint64_t>(step));
    Rng ev_rng(cfg.seed, "eps_video", static_cast<uint64_t>(step));

    const int t = 1 + static_cast<int>(t_rng.below(static_cast<uint64_t>(sched.T)));
    *t_out = t;

    const Shape& sa = corpus[0].z_a.shape;
    const Shape& sv = corpus[0].z_v.shape;
    BatchTensors b;
    b.z_a_t = Tensor({B, sa[0], sa[1], sa[2]});
    b.z_v_t = Tensor({B, sv[0], sv[1], sv[2], sv[3]});
    b.eps_a = Tensor(b.z_a_t.shape);
    b.eps_v = Tensor(b.z_v_t.shape);
    for (int64_t i = 0; i < B; i++) {
        const auto& s = corpus[batch_rng.below(corpus.size())];
        Tensor ea = gaussian(s.z_a.shape, ea_rng);
        Tensor ev = gaussian(s.z_v.shape, ev_rng);
        Tensor za = forward_sample(s.z_a, t, ea, sched);
        Tensor zv = forward_sample(s.z_v, t, ev, sched);
        std::copy(za.data.begin(), za.data.end(), b.z_a_t.data.begin() + i * za.numel());
        std::copy(zv.data.begin(), zv.data.end(), b.z_v_t.data.begin() + i * zv.numel());
        std::copy(ea.data.begin(), ea.data.end(), b.eps_a.data.begin() + i * ea.numel());
        std::copy(ev.data.begin(), ev.data.end(), b.eps_v.data.begin() + i * ev.numel());
        b.captions.push_back(s.caption);
    }
    return b;
}

void append_loss_line(std::ofstream& log, const StepLoss& l) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", l.step, l.diff_audio, l.diff_video, l.eas,
                  l.total);
    log << buf;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    auto entries = read_manifest(cfg.train_manifest);
    auto corpus = encode_corpus(cfg, entries);

    TwoStreamModel model(cfg);
    nn::Adam adam(model.reg.all(), {cfg.lr, 0.9, 0.999, 1e-8});
    NoiseSchedule sched = make_linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);

    const std::string out_dir = cfg.resolved_out_dir();
    fs::create_directories(out_dir);
    {
        std::ofstream f(out_dir + "/config.json");
        f << cfg.to_json_text() << "\n";
    }
    const std::string log_path = out_dir + "/loss_log.csv";
    std::ofstream log(log_path);
    if (!log) throw std::runtime_error("cannot write loss log: " + log_path);
    log << "step,loss_diff_audio,loss_diff_video,loss_eas,loss_total\n";

    // text embeddings are deterministic per caption; cache batches per unique caption set later if needed
    TrainResult result;
    result.losses.reserve(static_cast<size_t>(cfg.steps));

    auto meta = [&](int step) {
        nlohmann::json m;
        m["config"] = nlohmann::json::parse(cfg.to_json_text());
        m["config_hash"] = cfg.hash();
        m["seed"] = cfg.seed;
        m["step"] = step;
        return m.dump();
    };

    for (int step = 1; step <= cfg.steps; step++) {
        int t = 0;
        BatchTensors batch = assemble_batch(cfg, corpus, step, sched, &t);
        TextBatch tb = make_text_batch(model.text, batch.captions);

        model.reg.zero_grad();
        Graph g;
        nn::Binder bd(g);
        int z_a = g.input(std::move(batch.z_a_t));
        int z_v = g.input(std::move(batch.z_v_t));
        std::vector<int> ts(static_cast<size_t>(cfg.batch_size), t);
        auto fwd = model.forward(g, bd, z_a, z_v, ts, tb);

        int l_a = g.mse(fwd.eps_a, g.input(std::move(batch.eps_a)));
        int l_v = g.mse(fwd.eps_v, g.input(std::move(batch.eps_v)));
        int sim = model.sim_head.similarity_matrix(g, bd, fwd.f_a, fwd.f_v, cfg.eas_pooled);
        int l_eas = eas_loss_node(g, sim, cfg.tau);
        int total = g.add(g.add(l_a, l_v), g.scale(l_eas, cfg.lambda_eas));

        StepLoss sl;
        sl.step = step;
        sl.diff_audio = g.val(l_a)[0];
        sl.diff_video = g.val(l_v)[0];
        sl.eas = g.val(l_eas)[0];
        sl.total = g.val(total)[0];
        if (!std::isfinite(sl.total))
            throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step) +
                                     " (config " + cfg.hash() + ")");

        g.backward(total);
        bd.collect_grads();
        adam.step();

        append_loss_line(log, sl);
        result.losses.push_back(sl);
        if (on_step) on_step(sl);

        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "/ckpt_%06d.avw", step);
            nn::save_checkpoint(out_dir + name, model.reg, meta(step));
        }
    }

    result.checkpoint_path = out_dir + "/final.avw";
    nn::save_checkpoint(result.checkpoint_path, model.reg, meta(cfg.steps));
    result.loss_log_path = log_path;
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::json rep;
    rep["config_hash"] = cfg.hash();
    rep["seed"] = cfg.seed;
    rep["steps"] = cfg.steps;
    rep["wall_seconds"] = result.wall_seconds;
    if (!result.losses.empty()) {
        rep["first_loss"] = result.losses.front().total;
        rep["final_loss"] = result.losses.back().total;
    }
    std::ofstream rf(out_dir + "/train_report.json");
    rf << rep.dump(2) << "\n";
    return result;
}

std::pair<std::unique_ptr<TwoStreamModel>, RunConfig> load_model(const std::string& ckpt_path) {
    std::string meta = nn::read_checkpoint_meta(ckpt_path);
    nlohmann::json m = nlohmann::json::parse(meta);
    check(m.contains("config"), "checkpoint has no embedded config: " + ckpt_path);
    RunConfig cfg = RunConfig::from_json_text(m["config"].dump());
    auto model = std::make_unique<TwoStreamModel>(cfg);
    nn::load_checkpoint(ckpt_path, model->reg);
    return {std::move(model), cfg};
}

SampleResult sample(const std::string& ckpt_path, const std::string& caption, int steps, uint64_t seed,
                    const std::string& out_dir_in, bool export_png) {
    check(!caption.empty(), "sample: caption must not be empty");
    auto [model, cfg] = load_model(ckpt_path);
    check(steps >= 1 && steps <= cfg.timesteps, "sample: step count out of range");

    NoiseSchedule sched = make_linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    const int64_t hs = cfg.video_size / 8;
    const Shape za_shape{1, kAudioLatentChannels, cfg.mel_bins / 8, cfg.spec_frames / 8};
    const Shape zv_shape{1, cfg.video_frames, kVideoLatentChannels, hs, hs};

    Rng rng(seed, "sample-init");
    Tensor z_a = Tensor::randn(za_shape, rng);
    Tensor z_v = Tensor::randn(zv_shape, rng);
    TextBatch tb = make_text_batch(model->text, {caption});

    auto taus = ddim_timesteps(sched, steps);
    for (size_t i = 0; i < taus.size(); i++) {
        const int t = taus[i];
        const int t_prev = i + 1 < taus.size() ? taus[i + 1] : 0;
        Graph g;
        nn::Binder bd(g);
        auto fwd = model->forward(g, bd, g.input(z_a), g.input(z_v), {t}, tb);
        z_a = ddim_step(z_a, g.val(fwd.eps_a), t, t_prev, sched);
        z_v = ddim_step(z_v, g.val(fwd.eps_v), t, t_prev, sched);
    }

    auto vcodec = make_video_codec(cfg.codec, cfg.codec_ckpt_video, cfg.seed);
    auto acodec = make_audio_codec(cfg.codec, cfg.codec_ckpt_audio, cfg.seed);

    Latent la;
    la.modality = Modality::Audio;
    la.data.shape = {za_shape[1], za_shape[2], za_shape[3]};
    la.data.data = z_a.data;
    Latent lv;
    lv.modality = Modality::Video;
    lv.data.shape = {zv_shape[1], zv_shape[2], zv_shape[3], zv_shape[4]};
    lv.data.data = z_v.data;

    AudioSpectrogram spec = acodec->decode(la);
    for (auto& v : spec.data.data) v = std::clamp(v, -1.0, 1.0);
    VideoTensor video = vcodec->decode(lv);
    for (auto& v : video.data.data) v = std::clamp(v, -1.0, 1.0);
    video.frame_rate = cfg.fps;

    MelAnalyzer mel;
    std::vector<double> wav = mel.synthesize(spec, 32);

    const std::string out_dir = resolve_output_path(out_dir_in);
    fs::create_directories(out_dir);
    SampleResult res;
    res.dir = out_dir;
    res.video_path = out_dir + "/frames.avf";
    res.audio_path = out_dir + "/audio.wav";
    res.metadata_path = out_dir + "/metadata.json";
    write_frame_stack(res.video_path, video);
    write_wav16(res.audio_path, wav, mel.config().sample_rate);
    if (export_png) export_png_sequence(out_dir + "/frames_png", video);

    nlohmann::json meta;
    meta["caption"] = caption;
    meta["seed"] = seed;
    meta["steps"] = steps;
    meta["config_hash"] = cfg.hash();
    meta["video"] = "frames.avf";
    meta["audio"] = "audio.wav";
    std::ofstream mf(res.metadata_path);
    mf << meta.dump(2) << "\n";
    return res;
}

// ---- evaluation ----

namespace {

struct EvalSample {
    VideoTensor video;
    AudioSpectrogram audio;
    std::string caption;
    bool aligned = true;
};

std::vector<EvalSample> load_eval_manifest(const std::string& path, const MelAnalyzer& mel) {
    auto entries = read_manifest(path);
    std::vector<EvalSample> out;
    for (const auto& e : entries) {
        AudibleVideoSample s = load_sample(e, mel);
        out.push_back({std::move(s.video), std::move(s.audio), s.caption, s.aligned});
    }
    return out;
}

std::vector<EvalSample> load_generated_dir(const std::string& dir, const MelAnalyzer& mel) {
    std::vector<EvalSample> out;
    std::vector<fs::path> metas;
    for (const auto& p : fs::recursive_directory_iterator(dir))
        if (p.is_regular_file() && p.path().filename() == "metadata.json") metas.push_back(p.path());
    std::sort(metas.begin(), metas.end());
    for (const auto& mp : metas) {
        std::ifstream f(mp);
        nlohmann::json j = nlohmann::json::parse(f);
        EvalSample s;
        s.video = read_frame_stack((mp.parent_path() / j["video"].get<std::string>()).string());
        int sr = 0;
        auto wav = read_wav16((mp.parent_path() / j["audio"].get<std::string>()).string(), &sr);
        s.audio = mel.analyze(wav);
        s.caption = j["caption"];
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<EvalSample> load_eval_set(const std::string& path, const MelAnalyzer& mel) {
    if (fs::is_directory(path)) {
        auto s = load_generated_dir(path, mel);
        if (s.empty()) throw std::runtime_error("no samples found under " + path);
        return s;
    }
    auto s = load_eval_manifest(path, mel);
    if (s.empty()) throw std::runtime_error("manifest is empty: " + path);
    return s;
}

std::vector<double> clip_video_embedding(const EvalSample& s, const EmbeddingProvider& p) {
    auto frames = split_frames(s.video);
    std::vector<double> acc(static_cast<size_t>(p.dim()), 0.0);
    for (const auto& f : frames) {
        auto e = p.embed_frame(f);
        for (size_t i = 0; i < acc.size(); i++) acc[i] += e[i];
    }
    double n2 = 0;
    for (double v : acc) n2 += v * v;
    double n = std::sqrt(n2);
    check(n > 0, "degenerate clip embedding");
    for (auto& v : acc) v /= n;
    return acc;
}

}  // namespace

EvalReport evaluate(const EvaluateRequest& req) {
    check(!req.metrics.empty(), "evaluate: no metrics requested");
    MelAnalyzer mel;
    auto provider = make_provider(req.provider);

    auto reference = load_eval_set(req.manifest, mel);
    std::vector<EvalSample> generated;
    const bool has_gen = !req.generated.empty();
    if (has_gen) generated = load_eval_set(req.generated, mel);
    const std::vector<EvalSample>& subjects = has_gen ? generated : reference;

    EvalReport rep;
    rep.provider = provider->id();
    rep.counts["reference"] = static_cast<int64_t>(reference.size());
    rep.counts["subjects"] = static_cast<int64_t>(subjects.size());
    {
        nlohmann::json inv;
        inv["manifest"] = req.manifest;
        inv["generated"] = req.generated;
        inv["metrics"] = req.metrics;
        inv["provider"] = req.provider;
        rep.config_hash = hex16(fnv1a64(inv.dump()));
    }

    for (const std::string& m : req.metrics) {
        if (m == "avh") {
            double acc = 0;
            for (const auto& s : subjects) acc += avh_score(split_frames(s.video), s.audio, *provider);
            rep.metrics["avh"] = acc / static_cast<double>(subjects.size()) * 100.0;
        } else if (m == "clipsim") {
            double acc = 0;
            for (const auto& s : subjects) acc += prompt_similarity(split_frames(s.video), s.caption, *provider);
            rep.metrics["clipsim"] = acc / static_cast<double>(subjects.size());
        } else if (m == "fvd" || m == "kvd" || m == "fad") {
            if (!has_gen)
                throw std::invalid_argument("metric '" + m + "' needs a generated set next to the reference set");
            if (m == "fad") {
                std::vector<std::vector<double>> ge, re;
                for (const auto& s : generated) ge.push_back(provider->embed_audio(s.audio));
                for (const auto& s : reference) re.push_back(provider->embed_audio(s.audio));
                rep.metrics["fad"] = frechet_distance(compute_stats(ge), compute_stats(re));
            } else {
                std::vector<std::vector<double>> ge, re;
                for (const auto& s : generated) ge.push_back(clip_video_embedding(s, *provider));
                for (const auto& s : reference) re.push_back(clip_video_embedding(s, *provider));
                if (m == "fvd")
                    rep.metrics["fvd"] = frechet_distance(compute_stats(ge), compute_stats(re));
                else
                    rep.metrics["kvd"] = kernel_distance(ge, re);
            }
        } else {
            throw std::invalid_argument("unknown metric: " + m);
        }
    }

    if (!req.report_path.empty()) rep.write(resolve_output_path(req.report_path));
    return rep;
}

double mean_feature_cosine(const TwoStreamModel& model, const std::vector<EncodedSample>& samples, int t_probe,
                           uint64_t noise_seed) {
    check(!samples.empty(), "mean_feature_cosine: no samples");
    NoiseSchedule sched = make_linear_schedule(model.cfg.timesteps, model.cfg.beta_start, model.cfg.beta_end);
    double acc = 0.0;
    for (size_t i = 0; i < samples.size(); i++) {
        const auto& s = samples[i];
        Rng rng(noise_seed, "probe", i);
        Tensor ea = Tensor::randn(s.z_a.shape, rng);
        Tensor ev = Tensor::randn(s.z_v.shape, rng);
        Tensor za = forward_sample(s.z_a, t_probe, ea, sched);
        Tensor zv = forward_sample(s.z_v, t_probe, ev, sched);
        Graph g;
        nn::Binder bd(g);
        int ia = g.reshape(g.input(za), {1, za.shape[0], za.shape[1], za.shape[2]});
        int iv = g.reshape(g.input(zv), {1, zv.shape[0], zv.shape[1], zv.shape[2], zv.shape[3]});
        TextBatch tb = make_text_batch(model.text, {s.caption});
        auto fwd = model.forward(g, bd, ia, iv, {t_probe}, tb);
        const Tensor& fa = g.val(fwd.f_a);
        const Tensor& fv = g.val(fwd.f_v);
        const int64_t D = fa.shape[2];
        std::vector<double> pa(static_cast<size_t>(D), 0.0), pv(static_cast<size_t>(D), 0.0);
        for (int64_t tok = 0; tok < fa.shape[1]; tok++)
            for (int64_t d = 0; d < D; d++) pa[static_cast<size_t>(d)] += fa[tok * D + d];
        for (int64_t tok = 0; tok < fv.shape[1]; tok++)
            for (int64_t d = 0; d < D; d++) pv[static_cast<size_t>(d)] += fv[tok * D + d];
        double na = 0, nv = 0, dp = 0;
        for (int64_t d = 0; d < D; d++) {
            na += pa[static_cast<size_t>(d)] * pa[static_cast<size_t>(d)];
            nv += pv[static_cast<size_t>(d)] * pv[static_cast<size_t>(d)];
            dp += pa[static_cast<size_t>(d)] * pv[static_cast<size_t>(d)];
        }
        acc += dp / (std::sqrt(na) * std::sqrt(nv) + 1e-12);
    }
    return acc / static_cast<double>(samples.size());
}

}  // namespace avldm
