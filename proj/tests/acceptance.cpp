// Acceptance suite: runs every top-level criterion at its stated tolerance
// and prints one [PASS]/[FAIL] line each. Exits nonzero if any fail.
//
// Thresholds for the training-sanity criterion were pinned after a pilot run
// of the shipped default config on a 2-core container; the pilot numbers are
// recorded in README.md next to the invocation instructions.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "bridge.hpp"
#include "data.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"

using namespace avldm;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& what, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", criterion, what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) g_failures++;
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

// ---------- criterion 1: diffusion algebra ----------

void criterion_1() {
    const double t0 = now_seconds();
    auto sched = make_linear_schedule(1000, 1e-4, 0.02);
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < 100; i++) {
        Shape shape{2 + static_cast<int64_t>(rng.below(3)), 2 + static_cast<int64_t>(rng.below(4)),
                    2 + static_cast<int64_t>(rng.below(4))};
        Tensor z0 = Tensor::randn(shape, rng);
        Tensor eps = Tensor::randn(shape, rng);
        int t = 1 + static_cast<int>(rng.below(1000));
        Tensor zt = forward_sample(z0, t, eps, sched);
        Tensor rec = ddim_step(zt, eps, t, 0, sched);
        for (int64_t j = 0; j < z0.numel(); j++) worst = std::max(worst, std::abs(rec[j] - z0[j]));
    }
    // chained 50-step inversion with the exact-noise oracle
    {
        Tensor z0 = Tensor::randn({4, 4, 4}, rng);
        Tensor eps = Tensor::randn({4, 4, 4}, rng);
        auto taus = ddim_timesteps(sched, 50);
        Tensor z = forward_sample(z0, taus.front(), eps, sched);
        for (size_t i = 0; i < taus.size(); i++) {
            int t = taus[i];
            int t_prev = i + 1 < taus.size() ? taus[i + 1] : 0;
            Tensor e(z.shape);
            double ab = sched.alpha_bar_at(t);
            for (int64_t j = 0; j < z.numel(); j++) e[j] = (z[j] - std::sqrt(ab) * z0[j]) / std::sqrt(1.0 - ab);
            z = ddim_step(z, e, t, t_prev, sched);
        }
        for (int64_t j = 0; j < z0.numel(); j++) worst = std::max(worst, std::abs(z[j] - z0[j]));
    }
    const double dt = now_seconds() - t0;
    char detail[128];
    std::snprintf(detail, sizeof(detail), "max abs error %.3g, %.2f s", worst, dt);
    report(1, "exact-noise DDIM inversion recovers z0", worst < 1e-5 && dt < 10.0, detail);
}

// ---------- criterion 2: gradient suite ----------

double fd_loss_gradients_mse() {
    Rng rng(201);
    Tensor a = Tensor::randn({3, 5}, rng), b = Tensor::randn({3, 5}, rng);
    Graph g;
    int ia = g.leaf(a), ib = g.input(b);
    g.backward(g.mse(ia, ib));
    double worst = 0.0;
    const double h = 1e-5;
    for (int64_t i = 0; i < a.numel(); i++) {
        Tensor ap = a, am = a;
        ap[i] += h;
        am[i] -= h;
        double num = (noise_estimation_loss(ap, b) - noise_estimation_loss(am, b)) / (2 * h);
        double an = g.grad(ia)[i];
        if (std::abs(an) + std::abs(num) < 1e-12) continue;
        worst = std::max(worst, std::abs(an - num) / (std::abs(an) + std::abs(num)));
    }
    return worst;
}

double fd_eas_gradients() {
    nn::ParamRegistry reg;
    SimilarityHead head(reg, "s", 6, 202);
    Rng rng(203);
    Tensor fa = Tensor::randn({3, 4, 6}, rng), fv = Tensor::randn({3, 5, 6}, rng);

    auto eval = [&](const Tensor& A, const Tensor& V) {
        Graph g;
        nn::Binder bd(g);
        int s = head.similarity_matrix(g, bd, g.input(A), g.input(V), false);
        return g.val(eas_loss_node(g, s, 0.1))[0];
    };

    Graph g;
    nn::Binder bd(g);
    int ia = g.leaf(fa), iv = g.leaf(fv);
    int s = head.similarity_matrix(g, bd, ia, iv, false);
    g.backward(eas_loss_node(g, s, 0.1));

    const double h = 1e-5;
    double worst = 0.0;
    Rng pick(204);
    // token features
    for (int k = 0; k < 2; k++) {
        const Tensor& base = k == 0 ? fa : fv;
        int id = k == 0 ? ia : iv;
        for (int probe = 0; probe < 8; probe++) {
            int64_t i = static_cast<int64_t>(pick.below(static_cast<uint64_t>(base.numel())));
            Tensor p = base, m = base;
            p[i] += h;
            m[i] -= h;
            double num = k == 0 ? (eval(p, fv) - eval(m, fv)) / (2 * h) : (eval(fa, p) - eval(fa, m)) / (2 * h);
            double an = g.grad(id)[i];
            if (std::abs(an) + std::abs(num) < 1e-10) continue;
            worst = std::max(worst, std::abs(an - num) / (std::abs(an) + std::abs(num)));
        }
    }
    // l_beta weight heads
    Graph g2;
    nn::Binder bd2(g2);
    int s2 = head.similarity_matrix(g2, bd2, g2.input(fa), g2.input(fv), false);
    g2.backward(eas_loss_node(g2, s2, 0.1));
    bd2.collect_grads();
    for (nn::Parameter* p : reg.all()) {
        for (int probe = 0; probe < 3; probe++) {
            int64_t i = static_cast<int64_t>(pick.below(static_cast<uint64_t>(p->value.numel())));
            double an = p->grad[i];
            double save = p->value[i];
            p->value[i] = save + h;
            double fp = eval(fa, fv);
            p->value[i] = save - h;
            double fm = eval(fa, fv);
            p->value[i] = save;
            double num = (fp - fm) / (2 * h);
            if (std::abs(an) + std::abs(num) < 1e-10) continue;
            worst = std::max(worst, std::abs(an - num) / (std::abs(an) + std::abs(num)));
        }
    }
    return worst;
}

double fd_denoiser_gradients() {
    DenoiserConfig cfg;
    cfg.base_width = 8;
    cfg.mult = 2;
    cfg.time_dim = 16;
    cfg.text_dim = 8;
    cfg.heads = 2;
    cfg.groups = 4;

    TextProvider provider(8, 16);
    TextBatch tb = make_text_batch(provider, {"gradient probe"});
    double worst = 0.0;
    const double h = 1e-5;

    auto probe_model = [&](auto& unet, nn::ParamRegistry& reg, const Tensor& z, const Tensor& target, int t) {
        auto run = [&](bool with_grad) {
            Graph g;
            nn::Binder bd(g);
            auto [eps, f] = unet.forward(g, bd, g.input(z), {t}, tb);
            (void)f;
            int loss = g.mse(eps, g.input(target));
            if (with_grad) {
                g.backward(loss);
                bd.collect_grads();
            }
            return g.val(loss)[0];
        };
        reg.zero_grad();
        run(true);
        Rng pick(205);
        for (nn::Parameter* p : reg.all()) {
            int64_t i = static_cast<int64_t>(pick.below(static_cast<uint64_t>(p->value.numel())));
            double an = p->grad[i];
            double save = p->value[i];
            p->value[i] = save + h;
            double fp = run(false);
            p->value[i] = save - h;
            double fm = run(false);
            p->value[i] = save;
            double num = (fp - fm) / (2 * h);
            if (std::abs(an) + std::abs(num) < 1e-8) continue;
            worst = std::max(worst, std::abs(an - num) / (std::abs(an) + std::abs(num)));
        }
    };

    Rng rng(206);
    {
        nn::ParamRegistry reg;
        AudioUnet unet(reg, "a", cfg, 207);
        nn::init_parameter(*reg.find("a.conv_out.weight"), nn::Init::HeNormal, 208, 72, 72);
        Tensor z = Tensor::randn({1, 8, 8, 8}, rng), target = Tensor::randn({1, 8, 8, 8}, rng);
        probe_model(unet, reg, z, target, 17);
    }
    {
        nn::ParamRegistry reg;
        VideoUnet unet(reg, "v", cfg, 209);
        nn::init_parameter(*reg.find("v.conv_out.weight"), nn::Init::HeNormal, 210, 72, 72);
        nn::init_parameter(*reg.find("v.res2.tconv.weight"), nn::Init::HeNormal, 211, 48, 48);
        nn::init_parameter(*reg.find("v.temporal_attn.out.weight"), nn::Init::XavierNormal, 212, 16, 16);
        Tensor z = Tensor::randn({1, 2, 4, 8, 8}, rng), target = Tensor::randn({1, 2, 4, 8, 8}, rng);
        probe_model(unet, reg, z, target, 600);
    }
    return worst;
}

void criterion_2() {
    double w_mse = fd_loss_gradients_mse();
    double w_eas = fd_eas_gradients();
    double w_unet = fd_denoiser_gradients();
    char detail[160];
    std::snprintf(detail, sizeof(detail), "rel err: noise loss %.3g, eas %.3g, denoisers %.3g", w_mse, w_eas, w_unet);
    report(2, "analytic gradients match central finite differences", w_mse < 1e-6 && w_eas < 1e-4 && w_unet < 1e-4,
           detail);
}

// ---------- criterion 3: contrastive identities ----------

void criterion_3() {
    nn::ParamRegistry reg;
    SimilarityHead head(reg, "s", 6, 301);
    Rng rng(302);

    bool ok = true;
    std::string note;

    // B = 1 is exactly zero
    double l1 = eas_loss({Tensor::randn({3, 6}, rng)}, {Tensor::randn({4, 6}, rng)}, head, 0.1);
    ok = ok && l1 == 0.0;

    // uniform-similarity batch of 8
    Tensor pa = Tensor::randn({2, 6}, rng), pv = Tensor::randn({3, 6}, rng);
    double l8 = eas_loss(std::vector<Tensor>(8, pa), std::vector<Tensor>(8, pv), head, 0.1);
    double err8 = std::abs(l8 - 2.0 * std::log(8.0));
    ok = ok && err8 < 1e-9;

    // random batches against an independent brute-force oracle
    auto naive_s = [&](const Tensor& fa, const Tensor& fv) {
        auto weights = [&](const Tensor& toks, const nn::Linear& l) {
            const int64_t N = toks.shape[0], D = toks.shape[1];
            std::vector<double> w(static_cast<size_t>(N));
            double mx = -1e300;
            for (int64_t t = 0; t < N; t++) {
                double acc = l.b->value[0];
                for (int64_t d = 0; d < D; d++) acc += l.w->value[d] * toks[t * D + d];
                w[static_cast<size_t>(t)] = acc;
                mx = std::max(mx, acc);
            }
            double sum = 0;
            for (auto& v : w) {
                v = std::exp(v - mx);
                sum += v;
            }
            for (auto& v : w) v /= sum;
            return w;
        };
        auto wa = weights(fa, head.la), wv = weights(fv, head.lv);
        const int64_t D = fa.shape[1];
        std::vector<double> pa2(static_cast<size_t>(D), 0), pv2(static_cast<size_t>(D), 0);
        for (int64_t t = 0; t < fa.shape[0]; t++)
            for (int64_t d = 0; d < D; d++) pa2[static_cast<size_t>(d)] += wa[static_cast<size_t>(t)] * fa[t * D + d];
        for (int64_t t = 0; t < fv.shape[0]; t++)
            for (int64_t d = 0; d < D; d++) pv2[static_cast<size_t>(d)] += wv[static_cast<size_t>(t)] * fv[t * D + d];
        auto cosd = [&](const double* x, const std::vector<double>& y) {
            double dot = 0, nx = 0, ny = 0;
            for (int64_t d = 0; d < D; d++) {
                dot += x[d] * y[static_cast<size_t>(d)];
                nx += x[d] * x[d];
                ny += y[static_cast<size_t>(d)] * y[static_cast<size_t>(d)];
            }
            return dot / (std::sqrt(nx) * std::sqrt(ny));
        };
        double s = 0;
        for (int64_t t = 0; t < fa.shape[0]; t++) s += wa[static_cast<size_t>(t)] * cosd(fa.ptr() + t * D, pv2);
        for (int64_t t = 0; t < fv.shape[0]; t++) s += wv[static_cast<size_t>(t)] * cosd(fv.ptr() + t * D, pa2);
        return s;
    };

    double worst_oracle = 0.0;
    for (int rep = 0; rep < 3; rep++) {
        std::vector<Tensor> fa, fv;
        for (int i = 0; i < 4; i++) {
            fa.push_back(Tensor::randn({3, 6}, rng));
            fv.push_back(Tensor::randn({5, 6}, rng));
        }
        double S[4][4];
        for (int i = 0; i < 4; i++)
            for (int j = 0; j < 4; j++) S[i][j] = naive_s(fa[static_cast<size_t>(i)], fv[static_cast<size_t>(j)]);
        double expect = 0;
        for (int i = 0; i < 4; i++) {
            double dr = 0, dc = 0;
            for (int j = 0; j < 4; j++) {
                dr += std::exp(S[i][j] / 0.1);
                dc += std::exp(S[j][i] / 0.1);
            }
            expect += -std::log(std::exp(S[i][i] / 0.1) / dr) - std::log(std::exp(S[i][i] / 0.1) / dc);
        }
        expect /= 4.0;
        worst_oracle = std::max(worst_oracle, std::abs(eas_loss(fa, fv, head, 0.1) - expect));
    }
    ok = ok && worst_oracle < 1e-10;

    char detail[160];
    std::snprintf(detail, sizeof(detail), "B=1: %.3g, |B=8 - 2ln8|: %.3g, oracle gap: %.3g", l1, err8, worst_oracle);
    report(3, "contrastive identities", ok, detail);
}

// ---------- criterion 4: metric identities ----------

struct AxisProvider : EmbeddingProvider {
    explicit AxisProvider(int64_t d) : d_(d) {}
    std::string id() const override { return "axis"; }
    int64_t dim() const override { return d_; }
    std::vector<double> embed_frame(const Tensor& f) const override { return unit(static_cast<int>(f[0])); }
    std::vector<double> embed_audio(const AudioSpectrogram&) const override { return unit(audio_axis); }
    std::vector<double> embed_text(const std::string&) const override { return unit(0); }
    std::vector<double> unit(int a) const {
        std::vector<double> v(static_cast<size_t>(d_), 0.0);
        v[static_cast<size_t>(a % d_)] = 1.0;
        return v;
    }
    int audio_axis = 0;
    int64_t d_;
};

void criterion_4() {
    Rng rng(401);
    bool ok = true;

    // frechet on identical stats
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 30; i++) {
        std::vector<double> v(5);
        double n2 = 0;
        for (auto& x : v) {
            x = rng.normal();
            n2 += x * x;
        }
        for (auto& x : v) x /= std::sqrt(n2);
        xs.push_back(v);
    }
    auto st = compute_stats(xs);
    double f_same = std::abs(frechet_distance(st, st));
    ok = ok && f_same < 1e-8;

    // 1-D closed form
    double worst_1d = 0;
    for (int rep = 0; rep < 10; rep++) {
        double m1 = rng.normal(), m2 = rng.normal(), s1 = 0.3 + rng.uniform(), s2 = 0.3 + rng.uniform();
        DistributionStats a, b;
        a.mean = {m1};
        a.cov = {s1 * s1};
        a.count = 4;
        b.mean = {m2};
        b.cov = {s2 * s2};
        b.count = 4;
        double expect = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
        worst_1d = std::max(worst_1d, std::abs(frechet_distance(a, b) - expect));
    }
    ok = ok && worst_1d < 1e-10;

    // kernel self-test
    double k_same = std::abs(kernel_distance(xs, xs));
    ok = ok && k_same < 1e-6;

    // avh trivial cases, exact
    AxisProvider p(8);
    AudioSpectrogram dummy;
    dummy.data = Tensor({1, 8, 8});
    auto mkframe = [](int axis) {
        Tensor f({3, 8, 8});
        f[0] = axis;
        return f;
    };
    p.audio_axis = 2;
    bool avh_ok = avh_score({mkframe(2), mkframe(2)}, dummy, p) == 1.0;
    avh_ok = avh_ok && avh_score({mkframe(3), mkframe(4)}, dummy, p) == 0.0;
    avh_ok = avh_ok && avh_score({mkframe(2), mkframe(3)}, dummy, p) == 0.5;
    ok = ok && avh_ok;

    char detail[160];
    std::snprintf(detail, sizeof(detail), "frechet self %.3g, 1-D gap %.3g, kernel self %.3g, avh exact %s", f_same,
                  worst_1d, k_same, avh_ok ? "yes" : "no");
    report(4, "metric identities", ok, detail);
}

// ---------- criterion 5: alignment ordering ----------

void criterion_5() {
    const double t0 = now_seconds();
    MelAnalyzer mel;
    auto provider = make_toy_aligned_provider();
    const int n = 200;
    std::vector<double> aligned, swapped;
    std::vector<AudibleVideoSample> samples;
    samples.reserve(n);
    for (int i = 0; i < n; i++)
        samples.push_back(generate_sample(make_scene_spec(20000 + static_cast<uint64_t>(i)), mel));
    for (int i = 0; i < n; i++) {
        aligned.push_back(avh_score(split_frames(samples[static_cast<size_t>(i)].video),
                                    samples[static_cast<size_t>(i)].audio, *provider));
        const auto& other = samples[static_cast<size_t>((i + 1) % n)];
        auto sw = make_misaligned(samples[static_cast<size_t>(i)], other.audio, other.waveform, other.seed);
        swapped.push_back(avh_score(split_frames(sw.video), sw.audio, *provider));
    }
    auto mean_var = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double var = 0;
        for (double x : v) var += (x - m) * (x - m);
        var /= static_cast<double>(v.size() - 1);
        return std::pair<double, double>(m, var);
    };
    auto [ma, va] = mean_var(aligned);
    auto [ms, vs] = mean_var(swapped);
    double tstat = (ma - ms) / std::sqrt(va / n + vs / n);
    const double dt = now_seconds() - t0;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "mean aligned %.4f vs swapped %.4f, t = %.1f, %.1f s", ma, ms, tstat, dt);
    report(5, "avh separates aligned from misaligned pairs", ma - ms > 0 && tstat > 5.0 && dt < 120.0, detail);
}

// ---------- criteria 6-8: training runs ----------

RunConfig full_config(const std::string& manifest, const std::string& out_dir) {
    RunConfig c;  // defaults carry the canonical schedule/model/loss settings
    c.train_manifest = manifest;
    c.out_dir = out_dir;
    return c;
}

void criteria_6_7_8() {
    fs::remove_all("acceptance_tmp");
    MelAnalyzer mel;
    auto train_set = generate_dataset("acceptance_tmp/train", 64, 1, 0, mel);
    auto eval_set = generate_dataset("acceptance_tmp/eval", 16, 1001, 0, mel);

    // ---- criterion 8: identity at init (step-1 losses bitwise equal) ----
    {
        RunConfig on = full_config(train_set.manifest_path, "acceptance_tmp/run_id_on");
        on.steps = 1;
        RunConfig off = on;
        off.bridge_enabled = false;
        off.out_dir = "acceptance_tmp/run_id_off";
        auto r_on = train(on);
        auto r_off = train(off);
        bool ok = std::memcmp(&r_on.losses[0].diff_audio, &r_off.losses[0].diff_audio, sizeof(double)) == 0 &&
                  std::memcmp(&r_on.losses[0].diff_video, &r_off.losses[0].diff_video, sizeof(double)) == 0 &&
                  std::memcmp(&r_on.losses[0].eas, &r_off.losses[0].eas, sizeof(double)) == 0 &&
                  std::memcmp(&r_on.losses[0].total, &r_off.losses[0].total, sizeof(double)) == 0;
        char detail[160];
        std::snprintf(detail, sizeof(detail), "step-1 totals %.17g vs %.17g", r_on.losses[0].total,
                      r_off.losses[0].total);
        report(8, "zero-init bridge matches the bridge-free losses bitwise", ok, detail);
    }

    // ---- criterion 6: training sanity (full run) ----
    RunConfig cfg = full_config(train_set.manifest_path, "acceptance_tmp/run_full");
    double first_total = 0, tail_total = 0;
    bool finite = true;
    const double t0 = now_seconds();
    TrainResult full;
    try {
        full = train(cfg);
    } catch (const std::exception& e) {
        report(6, "training sanity", false, std::string("aborted: ") + e.what());
        report(7, "ablation direction", false, "skipped: training failed");
        return;
    }
    const double dt = now_seconds() - t0;
    first_total = full.losses.front().total;
    const int tail = 25;
    for (int i = 0; i < tail; i++) tail_total += full.losses[full.losses.size() - 1 - i].total;
    tail_total /= tail;
    for (const auto& l : full.losses) finite = finite && std::isfinite(l.total);
    {
        char detail[200];
        std::snprintf(detail, sizeof(detail),
                      "step-1 total %.4f, mean of last %d steps %.4f (ratio %.3f), %.1f min, finite %s", first_total,
                      tail, tail_total, tail_total / first_total, dt / 60.0, finite ? "yes" : "no");
        report(6, "2k-step training halves the loss in under 20 min", tail_total < 0.5 * first_total && finite &&
                                                                          dt < 20.0 * 60.0,
               detail);
    }

    // ---- criterion 7: ablation direction ----
    {
        // matched-budget comparison: both configurations trained the same
        // number of steps; the full run serves as the enabled arm
        RunConfig off = cfg;
        off.bridge_enabled = false;
        off.lambda_eas = 0.0;
        off.out_dir = "acceptance_tmp/run_ablate_off";
        TrainResult r_off = train(off);

        auto eval_entries = read_manifest(eval_set.manifest_path);
        auto eval_enc = encode_corpus(cfg, eval_entries);

        auto [model_on, cfg_on] = load_model(full.checkpoint_path);
        auto [model_off, cfg_off] = load_model(r_off.checkpoint_path);
        const int t_probe = cfg.timesteps / 4;
        double cos_on = mean_feature_cosine(*model_on, eval_enc, t_probe, 4242);
        double cos_off = mean_feature_cosine(*model_off, eval_enc, t_probe, 4242);
        char detail[160];
        std::snprintf(detail, sizeof(detail), "held-out feature cosine: enabled %.4f vs disabled %.4f", cos_on,
                      cos_off);
        report(7, "cross-attention + alignment loss raise stream agreement", cos_on > cos_off, detail);
    }
}

}  // namespace

int main() {
    std::printf("running acceptance criteria\n");
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criteria_6_7_8();
    std::printf("%s (%d failure%s)\n", g_failures == 0 ? "ALL CRITERIA PASSED" : "CRITERIA FAILED", g_failures,
                g_failures == 1 ? "" : "s");
    return g_failures == 0 ? 0 : 1;
}
