#include <cmath>
#include <cstring>

#include "doctest.h"
#include "helpers.hpp"
#include "schedule.hpp"

using namespace avldm;
using avldm::test::max_abs_diff;

TEST_CASE("make_linear_schedule") {
    SUBCASE("endpoints are exact") {
        auto s = make_linear_schedule(1000, 1e-4, 0.02);
        CHECK(s.beta_at(1) == 1e-4);
        CHECK(s.beta_at(1000) == 0.02);
    }
    SUBCASE("single step") {
        auto s = make_linear_schedule(1, 0.01, 0.02);
        CHECK(s.beta_at(1) == 0.01);
        CHECK(s.alpha_bar_at(1) == doctest::Approx(0.99).epsilon(1e-15));
    }
    SUBCASE("alpha_bar matches a direct product oracle") {
        auto s = make_linear_schedule(10, 0.1, 0.1);
        CHECK(s.alpha_bar_at(10) == doctest::Approx(std::pow(0.9, 10)).epsilon(1e-12));
        // and at every t, against an independently accumulated product
        auto s2 = make_linear_schedule(57, 3e-4, 0.04);
        double prod = 1.0;
        for (int t = 1; t <= 57; t++) {
            prod *= 1.0 - s2.beta_at(t);
            CHECK(std::abs(s2.alpha_bar_at(t) - prod) / prod < 1e-12);
        }
    }
    SUBCASE("invariants: beta in (0,1), alpha_bar strictly decreasing in (0,1]") {
        auto s = make_linear_schedule(100, 1e-4, 0.05);
        double prev = 1.0;
        for (int t = 1; t <= 100; t++) {
            CHECK(s.beta_at(t) > 0.0);
            CHECK(s.beta_at(t) < 1.0);
            CHECK(s.alpha_bar_at(t) > 0.0);
            CHECK(s.alpha_bar_at(t) < prev);
            prev = s.alpha_bar_at(t);
        }
    }
    SUBCASE("rejects bad arguments") {
        CHECK_THROWS(make_linear_schedule(0, 1e-4, 0.02));
        CHECK_THROWS(make_linear_schedule(10, 0.02, 0.01));
        CHECK_THROWS(make_linear_schedule(10, 0.0, 0.02));
        CHECK_THROWS(make_linear_schedule(10, 0.5, 1.0));
    }
}

TEST_CASE("forward_sample") {
    auto sched = make_linear_schedule(100, 1e-3, 0.05);
    Rng rng(7);
    Tensor z0 = Tensor::randn({3, 4}, rng);

    SUBCASE("zero noise gives sqrt(abar)*z0") {
        Tensor eps({3, 4}, 0.0);
        Tensor zt = forward_sample(z0, 40, eps, sched);
        double c = std::sqrt(sched.alpha_bar_at(40));
        for (int64_t i = 0; i < z0.numel(); i++) CHECK(zt[i] == doctest::Approx(c * z0[i]).epsilon(1e-15));
    }
    SUBCASE("identity limit: abar == 1 returns z0") {
        NoiseSchedule s;
        s.T = 5;
        s.beta.assign(5, 1e-300);
        s.alpha_bar.assign(5, 1.0);
        Tensor eps = Tensor::randn({3, 4}, rng);
        Tensor zt = forward_sample(z0, 3, eps, s);
        CHECK(max_abs_diff(zt, z0) < 1e-12);
    }
    SUBCASE("Monte Carlo variance matches 1 - abar_t") {
        const int n = 10000;
        const int t = 25;
        Tensor zz({1}, 0.0);
        double sum = 0, sum2 = 0;
        Rng r(123);
        for (int i = 0; i < n; i++) {
            Tensor eps({1});
            eps[0] = r.normal();
            double v = forward_sample(zz, t, eps, sched)[0];
            sum += v;
            sum2 += v * v;
        }
        double mean = sum / n;
        double var = sum2 / n - mean * mean;
        double expect = 1.0 - sched.alpha_bar_at(t);
        double se = expect * std::sqrt(2.0 / (n - 1));
        CHECK(std::abs(var - expect) < 3 * se);
    }
    SUBCASE("sample mean converges to sqrt(abar)*z0") {
        const int n = 10000;
        const int t = 60;
        Tensor zz({1});
        zz[0] = 1.7;
        Rng r(321);
        double sum = 0;
        for (int i = 0; i < n; i++) {
            Tensor eps({1});
            eps[0] = r.normal();
            sum += forward_sample(zz, t, eps, sched)[0];
        }
        double mean = sum / n;
        double expect = std::sqrt(sched.alpha_bar_at(t)) * 1.7;
        double se = std::sqrt((1.0 - sched.alpha_bar_at(t)) / n);
        CHECK(std::abs(mean - expect) < 4 * se);
    }
    SUBCASE("shape / range errors") {
        Tensor eps({4, 3}, 0.0);
        CHECK_THROWS(forward_sample(z0, 10, eps, sched));
        Tensor ok({3, 4}, 0.0);
        CHECK_THROWS(forward_sample(z0, 0, ok, sched));
        CHECK_THROWS(forward_sample(z0, 101, ok, sched));
    }
}

TEST_CASE("posterior_step") {
    auto sched = make_linear_schedule(50, 1e-3, 0.06);

    SUBCASE("matches the closed-form Bayesian posterior mean on scalars") {
        Rng rng(11);
        for (int rep = 0; rep < 20; rep++) {
            int t = 2 + static_cast<int>(rng.below(49));
            double z0 = rng.normal();
            double eps = rng.normal();
            Tensor z0t({1}), epst({1}), zerot({1}, 0.0);
            z0t[0] = z0;
            epst[0] = eps;
            Tensor zt = forward_sample(z0t, t, epst, sched);
            Tensor zprev = posterior_step(zt, epst, t, sched, zerot);
            // q(z_{t-1} | z_t, z0) mean
            double ab_t = sched.alpha_bar_at(t), ab_p = sched.alpha_bar_at(t - 1), beta = sched.beta_at(t);
            double alpha = 1.0 - beta;
            double mu = (std::sqrt(ab_p) * beta * z0 + std::sqrt(alpha) * (1.0 - ab_p) * zt[0]) / (1.0 - ab_t);
            CHECK(std::abs(zprev[0] - mu) < 1e-10);
        }
    }
    SUBCASE("zero noise returns mu exactly") {
        Rng rng(13);
        Tensor zt = Tensor::randn({2, 3}, rng), eps = Tensor::randn({2, 3}, rng);
        Tensor zero({2, 3}, 0.0);
        Tensor a = posterior_step(zt, eps, 30, sched, zero);
        Tensor b = posterior_step(zt, eps, 30, sched, zero);
        CHECK(max_abs_diff(a, b) == 0.0);
    }
    SUBCASE("t=1 returns x0-estimate, ignoring noise") {
        auto s1 = make_linear_schedule(1, 0.01, 0.01);
        Rng rng(17);
        Tensor z0 = Tensor::randn({4}, rng), eps = Tensor::randn({4}, rng), big_noise({4}, 1e6);
        Tensor z1 = forward_sample(z0, 1, eps, s1);
        Tensor out = posterior_step(z1, eps, 1, s1, big_noise);
        CHECK(max_abs_diff(out, z0) < 1e-10);
    }
    SUBCASE("perfect-oracle ancestral trajectory contracts toward z0") {
        // 1-D toy distribution; E|z_t - z0| must fall monotonically in t
        // (checked statistically over 2000 trajectories).
        auto s = make_linear_schedule(50, 1e-3, 0.08);
        const int ntraj = 2000;
        std::vector<double> mean_err(51, 0.0);
        Rng rng(29);
        for (int k = 0; k < ntraj; k++) {
            double z0 = rng.uniform() < 0.5 ? -1.0 : 1.0;
            z0 += 0.1 * rng.normal();
            double z = rng.normal();  // z_T ~ N(0,1)
            mean_err[50] += std::abs(z - z0);
            for (int t = 50; t >= 1; t--) {
                double ab = s.alpha_bar_at(t);
                double eps = (z - std::sqrt(ab) * z0) / std::sqrt(1.0 - ab);
                Tensor zt({1}), ep({1}), noi({1});
                zt[0] = z;
                ep[0] = eps;
                noi[0] = rng.normal();
                z = posterior_step(zt, ep, t, s, noi)[0];
                mean_err[t - 1] += std::abs(z - z0);
            }
        }
        for (auto& v : mean_err) v /= ntraj;
        for (int t = 50; t >= 1; t--) {
            // strictly decreasing in expectation, small statistical slack
            CHECK(mean_err[t - 1] < mean_err[t] * 1.02);
        }
        CHECK(mean_err[0] < 0.05);
    }
}

TEST_CASE("ddim_step") {
    auto sched = make_linear_schedule(200, 1e-4, 0.03);
    Rng rng(43);

    SUBCASE("exact-noise inversion to t_prev=0 recovers z0") {
        Tensor z0 = Tensor::randn({4, 5}, rng);
        Tensor eps = Tensor::randn({4, 5}, rng);
        Tensor zt = forward_sample(z0, 150, eps, sched);
        Tensor rec = ddim_step(zt, eps, 150, 0, sched);
        CHECK(max_abs_diff(rec, z0) < 1e-10);
    }
    SUBCASE("deterministic: identical calls bitwise-identical") {
        Tensor zt = Tensor::randn({3, 3}, rng), eps = Tensor::randn({3, 3}, rng);
        Tensor a = ddim_step(zt, eps, 100, 37, sched);
        Tensor b = ddim_step(zt, eps, 100, 37, sched);
        CHECK(std::memcmp(a.ptr(), b.ptr(), sizeof(double) * a.numel()) == 0);
    }
    SUBCASE("50-step exact-noise trajectory returns to z0") {
        Tensor z0 = Tensor::randn({6, 6}, rng);
        Tensor eps = Tensor::randn({6, 6}, rng);
        auto ts = ddim_timesteps(sched, 50);
        REQUIRE(ts.front() == 200);
        REQUIRE(ts.back() == 1);
        Tensor z = forward_sample(z0, ts.front(), eps, sched);
        for (size_t i = 0; i < ts.size(); i++) {
            int t = ts[i];
            int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
            // oracle predictor: the exact noise connecting z to z0 at t
            Tensor e(z.shape);
            double ab = sched.alpha_bar_at(t);
            for (int64_t j = 0; j < z.numel(); j++) e[j] = (z[j] - std::sqrt(ab) * z0[j]) / std::sqrt(1.0 - ab);
            z = ddim_step(z, e, t, t_prev, sched);
        }
        CHECK(max_abs_diff(z, z0) < 1e-4);
    }
    SUBCASE("rejects t_prev >= t and out-of-range t") {
        Tensor z({2}, 0.0), e({2}, 0.0);
        CHECK_THROWS(ddim_step(z, e, 10, 10, sched));
        CHECK_THROWS(ddim_step(z, e, 10, 12, sched));
        CHECK_THROWS(ddim_step(z, e, 500, 10, sched));
    }
}

TEST_CASE("noise_estimation_loss") {
    SUBCASE("identity and constant offset") {
        Rng rng(47);
        Tensor a = Tensor::randn({3, 4}, rng);
        CHECK(noise_estimation_loss(a, a) == 0.0);
        Tensor b = a;
        for (auto& v : b.data) v += 1.0;
        CHECK(noise_estimation_loss(b, a) == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("matches an independent double-loop oracle") {
        Rng rng(53);
        Tensor a = Tensor::randn({3, 4}, rng), b = Tensor::randn({3, 4}, rng);
        double acc = 0.0;
        for (int i = 0; i < 3; i++)
            for (int j = 0; j < 4; j++) {
                double d = a[i * 4 + j] - b[i * 4 + j];
                acc += d * d;
            }
        acc /= 12.0;
        CHECK(std::abs(noise_estimation_loss(a, b) - acc) < 1e-12);
    }
    SUBCASE("analytic gradient matches central differences") {
        Rng rng(59);
        Tensor a = Tensor::randn({2, 3}, rng), b = Tensor::randn({2, 3}, rng);
        Graph g;
        int ia = g.leaf(a), ib = g.input(b);
        int loss = g.mse(ia, ib);
        g.backward(loss);
        const double h = 1e-5;
        for (int64_t i = 0; i < a.numel(); i++) {
            Tensor ap = a;
            ap[i] += h;
            Tensor am = a;
            am[i] -= h;
            double num = (noise_estimation_loss(ap, b) - noise_estimation_loss(am, b)) / (2 * h);
            double an = g.grad(ia)[i];
            CHECK(std::abs(an - num) / std::max(1e-9, std::abs(an) + std::abs(num)) < 1e-6);
        }
    }
    SUBCASE("shape mismatch") {
        Tensor a({2, 3}), b({3, 2});
        CHECK_THROWS(noise_estimation_loss(a, b));
    }
}

TEST_CASE("multimodal_diffusion_loss") {
    CHECK(multimodal_diffusion_loss(0.0, 0.0) == 0.0);
    CHECK(multimodal_diffusion_loss(0.5, 0.25) == 0.75);
    CHECK(multimodal_diffusion_loss(0.25, 0.5) == multimodal_diffusion_loss(0.5, 0.25));
    SUBCASE("equals independently recomputed constituents") {
        Rng rng(61);
        Tensor pa = Tensor::randn({4, 4}, rng), ta = Tensor::randn({4, 4}, rng);
        Tensor pv = Tensor::randn({2, 8}, rng), tv = Tensor::randn({2, 8}, rng);
        double la = 0, lv = 0;
        for (int i = 0; i < 16; i++) {
            double d = pa[i] - ta[i];
            la += d * d;
            double e = pv[i] - tv[i];
            lv += e * e;
        }
        la /= 16;
        lv /= 16;
        double total = multimodal_diffusion_loss(noise_estimation_loss(pa, ta), noise_estimation_loss(pv, tv));
        CHECK(std::abs(total - (la + lv)) < 1e-12);
    }
}
