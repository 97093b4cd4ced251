#include <cmath>
#include <cstring>

#include "denoiser.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace avldm;
using avldm::test::max_abs_diff;

namespace {

DenoiserConfig tiny_cfg(bool temporal = true) {
    DenoiserConfig c;
    c.base_width = 8;
    c.mult = 2;
    c.time_dim = 16;
    c.text_dim = 8;
    c.heads = 2;
    c.groups = 4;
    c.temporal = temporal;
    return c;
}

TextBatch text_for(const TextProvider& p, const std::vector<std::string>& caps) { return make_text_batch(p, caps); }

}  // namespace

TEST_CASE("audio denoiser contract") {
    nn::ParamRegistry reg;
    AudioUnet unet(reg, "a", tiny_cfg(), 5);
    TextProvider provider(8, 16);
    TextBatch tb = text_for(provider, {"a red circle hums"});

    SUBCASE("8 channels accepted, 4 rejected") {
        Graph g;
        nn::Binder bd(g);
        Rng rng(1);
        int ok = g.input(Tensor::randn({1, 8, 8, 8}, rng));
        CHECK_NOTHROW(unet.forward(g, bd, ok, {10}, tb));
        Graph g2;
        nn::Binder bd2(g2);
        int bad = g2.input(Tensor::randn({1, 4, 8, 8}, rng));
        CHECK_THROWS_WITH_AS(unet.forward(g2, bd2, bad, {10}, tb), doctest::Contains("8 input channels"),
                             std::invalid_argument);
    }
    SUBCASE("zero-initialized output layer gives eps_pred == 0 for any input") {
        Graph g;
        nn::Binder bd(g);
        Rng rng(2);
        int z = g.input(Tensor::randn({2, 8, 8, 8}, rng, 3.0));
        auto [eps, f] = unet.forward(g, bd, z, {3, 900}, text_for(provider, {"x y", "p q"}));
        for (int64_t i = 0; i < g.val(eps).numel(); i++) CHECK(g.val(eps)[i] == 0.0);
        CHECK(g.val(f).shape == Shape{2, 4 * 4, 16});
    }
    SUBCASE("permuting the batch permutes outputs identically") {
        // train one step first so conv_out is nonzero and outputs informative
        nn::ParamRegistry reg2;
        AudioUnet u2(reg2, "a", tiny_cfg(), 5);
        nn::init_parameter(*reg2.find("a.conv_out.weight"), nn::Init::HeNormal, 99, 72, 72);

        Rng rng(3);
        Tensor z({3, 8, 8, 8});
        for (auto& v : z.data) v = rng.normal();
        TextBatch tb3 = text_for(provider, {"one tone", "two tones", "three tones"});

        Graph g;
        nn::Binder bd(g);
        auto [eps, f] = u2.forward(g, bd, g.input(z), {5, 17, 44}, tb3);

        // permuted batch (2, 0, 1)
        Tensor zp({3, 8, 8, 8});
        const int perm[3] = {2, 0, 1};
        for (int i = 0; i < 3; i++)
            std::copy(z.data.begin() + perm[i] * 512, z.data.begin() + (perm[i] + 1) * 512,
                      zp.data.begin() + i * 512);
        TextBatch tbp = text_for(provider, {"three tones", "one tone", "two tones"});
        Graph g2;
        nn::Binder bd2(g2);
        auto [eps_p, f_p] = u2.forward(g2, bd2, g2.input(zp), {44, 5, 17}, tbp);

        for (int i = 0; i < 3; i++) {
            const double* a = g.val(eps).ptr() + perm[i] * 512;
            const double* b = g2.val(eps_p).ptr() + i * 512;
            CHECK(std::memcmp(a, b, 512 * sizeof(double)) == 0);
        }
        (void)f;
        (void)f_p;
    }
}

TEST_CASE("video denoiser degeneracies") {
    TextProvider provider(8, 16);
    TextBatch tb = text_for(provider, {"a blue triangle slides"});

    SUBCASE("identity temporal init equals the pure 2D path") {
        nn::ParamRegistry r_t, r_2d;
        VideoUnet with_t(r_t, "v", tiny_cfg(true), 7);
        VideoUnet plain(r_2d, "v", tiny_cfg(false), 7);
        Rng rng(4);
        Tensor z = Tensor::randn({2, 3, 4, 8, 8}, rng);

        Graph g1;
        nn::Binder b1(g1);
        auto [e1, f1] = with_t.forward(g1, b1, g1.input(z), {7, 300}, text_for(provider, {"a b", "c d"}));
        Graph g2;
        nn::Binder b2(g2);
        auto [e2, f2] = plain.forward(g2, b2, g2.input(z), {7, 300}, text_for(provider, {"a b", "c d"}));
        CHECK(max_abs_diff(g1.val(e1), g2.val(e2)) == 0.0);
        CHECK(max_abs_diff(g1.val(f1), g2.val(f2)) == 0.0);
    }
    SUBCASE("single-frame input runs and equals the 2D path") {
        nn::ParamRegistry r_t, r_2d;
        VideoUnet with_t(r_t, "v", tiny_cfg(true), 7);
        VideoUnet plain(r_2d, "v", tiny_cfg(false), 7);
        Rng rng(5);
        Tensor z = Tensor::randn({1, 1, 4, 8, 8}, rng);
        Graph g1;
        nn::Binder b1(g1);
        auto [e1, f1] = with_t.forward(g1, b1, g1.input(z), {50}, tb);
        Graph g2;
        nn::Binder b2(g2);
        auto [e2, f2] = plain.forward(g2, b2, g2.input(z), {50}, tb);
        CHECK(max_abs_diff(g1.val(e1), g2.val(e2)) == 0.0);
        (void)f1;
        (void)f2;
    }
    SUBCASE("frame shuffle equivariance at degenerate init") {
        nn::ParamRegistry reg;
        VideoUnet unet(reg, "v", tiny_cfg(true), 7);
        nn::init_parameter(*reg.find("v.conv_out.weight"), nn::Init::HeNormal, 98, 72, 72);
        Rng rng(6);
        const int64_t T = 4, fsz = 4 * 8 * 8;
        Tensor z = Tensor::randn({1, T, 4, 8, 8}, rng);
        Graph g1;
        nn::Binder b1(g1);
        auto [e1, f1] = unet.forward(g1, b1, g1.input(z), {123}, tb);

        const int perm[4] = {3, 1, 0, 2};
        Tensor zp({1, T, 4, 8, 8});
        for (int i = 0; i < 4; i++)
            std::copy(z.data.begin() + perm[i] * fsz, z.data.begin() + (perm[i] + 1) * fsz,
                      zp.data.begin() + i * fsz);
        Graph g2;
        nn::Binder b2(g2);
        auto [e2, f2] = unet.forward(g2, b2, g2.input(zp), {123}, tb);
        for (int i = 0; i < 4; i++) {
            const double* a = g1.val(e1).ptr() + perm[i] * fsz;
            const double* b = g2.val(e2).ptr() + i * fsz;
            CHECK(std::memcmp(a, b, fsz * sizeof(double)) == 0);
        }
        (void)f1;
        (void)f2;
    }
    SUBCASE("wrong rank / channels rejected") {
        nn::ParamRegistry reg;
        VideoUnet unet(reg, "v", tiny_cfg(true), 7);
        Graph g;
        nn::Binder bd(g);
        Rng rng(8);
        CHECK_THROWS(unet.forward(g, bd, g.input(Tensor::randn({2, 4, 8, 8}, rng)), {1, 1}, tb));
        CHECK_THROWS(unet.forward(g, bd, g.input(Tensor::randn({1, 2, 8, 8, 8}, rng)), {1}, tb));
    }
}

TEST_CASE("conditioning and shape preservation") {
    TextProvider provider(8, 16);

    SUBCASE("changing the caption changes eps_pred once text attention reaches the output") {
        nn::ParamRegistry reg;
        AudioUnet unet(reg, "a", tiny_cfg(), 11);
        nn::init_parameter(*reg.find("a.conv_out.weight"), nn::Init::HeNormal, 97, 72, 72);
        Rng rng(9);
        Tensor z = Tensor::randn({1, 8, 8, 8}, rng);
        Graph g1;
        nn::Binder b1(g1);
        auto [e1, f1] = unet.forward(g1, b1, g1.input(z), {40}, text_for(provider, {"a soft low hum"}));
        Graph g2;
        nn::Binder b2(g2);
        auto [e2, f2] = unet.forward(g2, b2, g2.input(z), {40}, text_for(provider, {"a sharp high whistle"}));
        CHECK(max_abs_diff(g1.val(e1), g2.val(e2)) > 1e-12);
        (void)f1;
        (void)f2;
    }
    SUBCASE("property: eps shape equals latent shape for random legal sizes") {
        TextProvider prov8(8, 16);
        Rng rng(10);
        for (int rep = 0; rep < 4; rep++) {
            nn::ParamRegistry reg;
            AudioUnet au(reg, "a", tiny_cfg(), 13);
            int64_t h = 8 * (1 + static_cast<int64_t>(rng.below(2)));
            int64_t w = 8 * (1 + static_cast<int64_t>(rng.below(3)));
            Graph g;
            nn::Binder bd(g);
            Tensor z = Tensor::randn({2, 8, h, w}, rng);
            auto [eps, f] = au.forward(g, bd, g.input(z), {1, 2}, text_for(prov8, {"a", "b"}));
            CHECK(g.val(eps).shape == z.shape);
            (void)f;

            nn::ParamRegistry reg2;
            VideoUnet vu(reg2, "v", tiny_cfg(), 13);
            int64_t T = 1 + static_cast<int64_t>(rng.below(3));
            Graph g2;
            nn::Binder bd2(g2);
            Tensor zv = Tensor::randn({1, T, 4, h, w}, rng);
            auto [epsv, fv] = vu.forward(g2, bd2, g2.input(zv), {5}, text_for(prov8, {"c"}));
            CHECK(g2.val(epsv).shape == zv.shape);
            (void)fv;
        }
    }
}

TEST_CASE("miniature denoiser gradient check") {
    // frozen 2-level miniatures of both streams; analytic parameter grads of
    // the noise-estimation loss vs central finite differences
    TextProvider provider(8, 16);
    TextBatch tb = make_text_batch(provider, {"gradient probe tone"});

    auto check_model = [&](auto&& run_loss, nn::ParamRegistry& reg) {
        reg.zero_grad();
        double base = run_loss(true);
        (void)base;
        Rng pick(31337);
        const double h = 1e-5;
        double worst = 0.0;
        for (nn::Parameter* p : reg.all()) {
            for (int probe = 0; probe < 2; probe++) {
                int64_t idx = static_cast<int64_t>(pick.below(static_cast<uint64_t>(p->value.numel())));
                double analytic = p->grad[idx];
                double save = p->value[idx];
                p->value[idx] = save + h;
                double fp = run_loss(false);
                p->value[idx] = save - h;
                double fm = run_loss(false);
                p->value[idx] = save;
                double numeric = (fp - fm) / (2 * h);
                if (std::abs(analytic) + std::abs(numeric) < 1e-8) continue;
                double rel = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric));
                worst = std::max(worst, rel);
            }
        }
        return worst;
    };

    SUBCASE("audio stream") {
        nn::ParamRegistry reg;
        AudioUnet unet(reg, "a", tiny_cfg(), 21);
        nn::init_parameter(*reg.find("a.conv_out.weight"), nn::Init::HeNormal, 96, 72, 72);
        Rng rng(22);
        Tensor z = Tensor::randn({1, 8, 8, 8}, rng);
        Tensor target = Tensor::randn(z.shape, rng);
        auto run = [&](bool with_grad) {
            Graph g;
            nn::Binder bd(g);
            auto [eps, f] = unet.forward(g, bd, g.input(z), {37}, tb);
            (void)f;
            int loss = g.mse(eps, g.input(target));
            if (with_grad) {
                g.backward(loss);
                bd.collect_grads();
            }
            return g.val(loss)[0];
        };
        CHECK(check_model(run, reg) < 1e-4);
    }
    SUBCASE("video stream") {
        nn::ParamRegistry reg;
        VideoUnet unet(reg, "v", tiny_cfg(true), 23);
        nn::init_parameter(*reg.find("v.conv_out.weight"), nn::Init::HeNormal, 95, 72, 72);
        // move temporal layers off their degenerate init so their grads are live
        nn::init_parameter(*reg.find("v.res1.tconv.weight"), nn::Init::HeNormal, 94, 24, 24);
        nn::init_parameter(*reg.find("v.temporal_attn.out.weight"), nn::Init::XavierNormal, 93, 16, 16);
        Rng rng(24);
        Tensor z = Tensor::randn({1, 2, 4, 8, 8}, rng);
        Tensor target = Tensor::randn(z.shape, rng);
        auto run = [&](bool with_grad) {
            Graph g;
            nn::Binder bd(g);
            auto [eps, f] = unet.forward(g, bd, g.input(z), {81}, tb);
            (void)f;
            int loss = g.mse(eps, g.input(target));
            if (with_grad) {
                g.backward(loss);
                bd.collect_grads();
            }
            return g.val(loss)[0];
        };
        CHECK(check_model(run, reg) < 1e-4);
    }
}

TEST_CASE("timestep embedding") {
    Tensor e = timestep_embedding({0, 10, 999}, 16);
    CHECK(e.shape == Shape{3, 16});
    // t=0: sin parts 0, cos parts 1
    for (int i = 0; i < 8; i++) {
        CHECK(e[i] == 0.0);
        CHECK(e[8 + i] == 1.0);
    }
    // deterministic
    Tensor e2 = timestep_embedding({0, 10, 999}, 16);
    CHECK(std::memcmp(e.ptr(), e2.ptr(), sizeof(double) * e.numel()) == 0);
}
