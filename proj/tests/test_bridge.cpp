#include <cmath>
#include <cstring>

#include "bridge.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace avldm;
using avldm::test::max_abs_diff;

namespace {
Tensor rand_t(const Shape& s, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return Tensor::randn(s, rng, scale);
}

// independent reimplementation of the weighted token similarity for oracles
double naive_similarity(const Tensor& fa, const Tensor& fv, const Tensor& wa_w, double wa_b, const Tensor& wv_w,
                        double wv_b) {
    auto softmax_weights = [](const Tensor& toks, const Tensor& w, double b) {
        const int64_t N = toks.shape[0], D = toks.shape[1];
        std::vector<double> logits(static_cast<size_t>(N));
        for (int64_t t = 0; t < N; t++) {
            double acc = b;
            for (int64_t d = 0; d < D; d++) acc += w[d] * toks[t * D + d];
            logits[static_cast<size_t>(t)] = acc;
        }
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double sum = 0;
        for (auto& v : logits) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (auto& v : logits) v /= sum;
        return logits;
    };
    auto pool = [](const Tensor& toks, const std::vector<double>& w) {
        const int64_t N = toks.shape[0], D = toks.shape[1];
        std::vector<double> p(static_cast<size_t>(D), 0.0);
        for (int64_t t = 0; t < N; t++)
            for (int64_t d = 0; d < D; d++) p[static_cast<size_t>(d)] += w[static_cast<size_t>(t)] * toks[t * D + d];
        return p;
    };
    auto cosv = [](const double* a, const std::vector<double>& b) {
        double dot = 0, na = 0, nb = 0;
        for (size_t i = 0; i < b.size(); i++) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    auto wa = softmax_weights(fa, wa_w, wa_b);
    auto wv = softmax_weights(fv, wv_w, wv_b);
    auto pa = pool(fa, wa);
    auto pv = pool(fv, wv);
    double s = 0;
    for (int64_t t = 0; t < fa.shape[0]; t++) s += wa[static_cast<size_t>(t)] * cosv(fa.ptr() + t * fa.shape[1], pv);
    for (int64_t t = 0; t < fv.shape[0]; t++) s += wv[static_cast<size_t>(t)] * cosv(fv.ptr() + t * fv.shape[1], pa);
    return s;
}
}  // namespace

TEST_CASE("cross attention bridge") {
    SUBCASE("zero-initialized bridge is exactly the identity") {
        nn::ParamRegistry reg;
        StreamBridge bridge(reg, "b", 16, 2, 3);
        Tensor fa = rand_t({2, 5, 16}, 1), fv = rand_t({2, 9, 16}, 2);
        Graph g;
        nn::Binder bd(g);
        auto [fah, fvh] = bridge.forward(g, bd, g.input(fa), g.input(fv));
        CHECK(std::memcmp(g.val(fah).ptr(), fa.ptr(), sizeof(double) * fa.numel()) == 0);
        CHECK(std::memcmp(g.val(fvh).ptr(), fv.ptr(), sizeof(double) * fv.numel()) == 0);
    }
    SUBCASE("single key/value token: every query gets the same attended value") {
        nn::ParamRegistry reg;
        nn::Attention attn(reg, "x", 16, 16, 2, 5, false);  // nonzero out projection
        Tensor fq = rand_t({1, 6, 16}, 3), fkv = rand_t({1, 1, 16}, 4);
        Graph g;
        nn::Binder bd(g);
        int out = cross_attention(g, bd, attn, g.input(fq), g.input(fkv));
        // residual removed: rows of (out - fq) must all be identical
        const Tensor& o = g.val(out);
        for (int64_t t = 1; t < 6; t++)
            for (int64_t d = 0; d < 16; d++) {
                double r0 = o[d] - fq[d];
                double rt = o[t * 16 + d] - fq[t * 16 + d];
                CHECK(rt == doctest::Approx(r0).epsilon(1e-12));
            }
    }
    SUBCASE("permuting key/value tokens leaves the output unchanged") {
        nn::ParamRegistry reg;
        nn::Attention attn(reg, "x", 16, 16, 2, 6, false);
        Tensor fq = rand_t({1, 4, 16}, 7), fkv = rand_t({1, 8, 16}, 8);
        Graph g;
        nn::Binder bd(g);
        int base = cross_attention(g, bd, attn, g.input(fq), g.input(fkv));
        Rng rng(9);
        for (int rep = 0; rep < 10; rep++) {
            std::vector<int> perm(8);
            for (int i = 0; i < 8; i++) perm[i] = i;
            for (int i = 7; i > 0; i--) std::swap(perm[i], perm[rng.below(static_cast<uint64_t>(i + 1))]);
            Tensor fkv_p({1, 8, 16});
            for (int i = 0; i < 8; i++)
                std::copy(fkv.data.begin() + perm[i] * 16, fkv.data.begin() + (perm[i] + 1) * 16,
                          fkv_p.data.begin() + i * 16);
            Graph g2;
            nn::Binder bd2(g2);
            int out = cross_attention(g2, bd2, attn, g2.input(fq), g2.input(fkv_p));
            CHECK(max_abs_diff(g2.val(out), g.val(base)) < 1e-12);
        }
    }
    SUBCASE("empty key/value sequence rejected") {
        nn::ParamRegistry reg;
        StreamBridge bridge(reg, "b", 16, 2, 3);
        Graph g;
        nn::Binder bd(g);
        int fa = g.input(rand_t({1, 3, 16}, 10));
        int fv = g.input(Tensor({1, 0, 16}));
        CHECK_THROWS(bridge.forward(g, bd, fa, fv));
    }
    SUBCASE("shape preserving for random token counts (property)") {
        Rng rng(11);
        for (int rep = 0; rep < 6; rep++) {
            nn::ParamRegistry reg;
            StreamBridge bridge(reg, "b", 16, 2, 12);
            int64_t na = 1 + static_cast<int64_t>(rng.below(20)), nv = 1 + static_cast<int64_t>(rng.below(20));
            Tensor fa = rand_t({2, na, 16}, rng.next_u64()), fv = rand_t({2, nv, 16}, rng.next_u64());
            Graph g;
            nn::Binder bd(g);
            auto [fah, fvh] = bridge.forward(g, bd, g.input(fa), g.input(fv));
            CHECK(g.val(fah).shape == fa.shape);
            CHECK(g.val(fvh).shape == fv.shape);
        }
    }
}

TEST_CASE("weighted similarity") {
    nn::ParamRegistry reg;
    SimilarityHead head(reg, "s", 6, 13);

    SUBCASE("identical single tokens give s = 2") {
        Tensor f({1, 6});
        for (int i = 0; i < 6; i++) f[i] = 0.3 * (i + 1);
        CHECK(weighted_similarity(f, f, head) == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("all-equal cosines collapse to 2c") {
        // every audio token identical, every video token identical
        Tensor fa({3, 6}), fv({5, 6});
        Rng rng(14);
        Tensor a = Tensor::randn({6}, rng), v = Tensor::randn({6}, rng);
        for (int t = 0; t < 3; t++)
            for (int d = 0; d < 6; d++) fa[t * 6 + d] = a[d];
        for (int t = 0; t < 5; t++)
            for (int d = 0; d < 6; d++) fv[t * 6 + d] = v[d];
        double dot = 0, na = 0, nv = 0;
        for (int d = 0; d < 6; d++) {
            dot += a[d] * v[d];
            na += a[d] * a[d];
            nv += v[d] * v[d];
        }
        double c = dot / (std::sqrt(na) * std::sqrt(nv));
        CHECK(weighted_similarity(fa, fv, head) == doctest::Approx(2 * c).epsilon(1e-10));
    }
    SUBCASE("random 4-token case matches the naive double-loop oracle") {
        Tensor fa = rand_t({4, 6}, 15), fv = rand_t({4, 6}, 16);
        double expect = naive_similarity(fa, fv, head.la.w->value, head.la.b->value[0], head.lv.w->value,
                                         head.lv.b->value[0]);
        CHECK(std::abs(weighted_similarity(fa, fv, head) - expect) < 1e-10);
    }
    SUBCASE("bounded in [-2, 2] (property)") {
        Rng rng(17);
        for (int rep = 0; rep < 20; rep++) {
            Tensor fa = rand_t({1 + rng.below(6), 6}, rng.next_u64(), 2.0);
            Tensor fv = rand_t({1 + rng.below(6), 6}, rng.next_u64(), 2.0);
            double s = weighted_similarity(fa, fv, head);
            CHECK(s >= -2.0 - 1e-9);
            CHECK(s <= 2.0 + 1e-9);
        }
    }
    SUBCASE("token weights sum to 1 within 1e-12 (property)") {
        Rng rng(18);
        for (int rep = 0; rep < 10; rep++) {
            Tensor f = rand_t({2, 1 + rng.below(9), 6}, rng.next_u64(), 1.5);
            Graph g;
            nn::Binder bd(g);
            int w = head.weights(g, bd, g.input(f), rep % 2 == 0);
            const Tensor& wv = g.val(w);
            for (int64_t b = 0; b < wv.shape[0]; b++) {
                double sum = 0;
                for (int64_t t = 0; t < wv.shape[1]; t++) sum += wv[b * wv.shape[1] + t];
                CHECK(std::abs(sum - 1.0) < 1e-12);
            }
        }
    }
    SUBCASE("empty sequence rejected") {
        Tensor fa({0, 6}), fv({2, 6});
        CHECK_THROWS(weighted_similarity(fa, fv, head));
    }
}

TEST_CASE("eas contrastive loss") {
    nn::ParamRegistry reg;
    SimilarityHead head(reg, "s", 6, 19);

    SUBCASE("B = 1 gives exactly zero") {
        std::vector<Tensor> fa{rand_t({3, 6}, 20)}, fv{rand_t({5, 6}, 21)};
        CHECK(eas_loss(fa, fv, head, 0.1) == 0.0);
    }
    SUBCASE("uniform similarities at B = 8 give 2 ln 8") {
        // identical tokens across the whole batch make every pair equally similar
        Tensor proto_a = rand_t({2, 6}, 22), proto_v = rand_t({4, 6}, 23);
        std::vector<Tensor> fa(8, proto_a), fv(8, proto_v);
        CHECK(std::abs(eas_loss(fa, fv, head, 0.1) - 2.0 * std::log(8.0)) < 1e-9);
    }
    SUBCASE("random B = 4 batch matches a brute-force oracle") {
        std::vector<Tensor> fa, fv;
        for (int i = 0; i < 4; i++) {
            fa.push_back(rand_t({3, 6}, 100 + static_cast<uint64_t>(i)));
            fv.push_back(rand_t({5, 6}, 200 + static_cast<uint64_t>(i)));
        }
        // oracle: naive similarity matrix + explicit log-sum-exp denominators
        const double tau = 0.1;
        double S[4][4];
        for (int i = 0; i < 4; i++)
            for (int j = 0; j < 4; j++)
                S[i][j] = naive_similarity(fa[static_cast<size_t>(i)], fv[static_cast<size_t>(j)],
                                           head.la.w->value, head.la.b->value[0], head.lv.w->value,
                                           head.lv.b->value[0]);
        double loss = 0;
        for (int i = 0; i < 4; i++) {
            double den_row = 0, den_col = 0;
            for (int j = 0; j < 4; j++) {
                den_row += std::exp(S[i][j] / tau);
                den_col += std::exp(S[j][i] / tau);
            }
            loss += -std::log(std::exp(S[i][i] / tau) / den_row) - std::log(std::exp(S[i][i] / tau) / den_col);
        }
        loss /= 4.0;
        CHECK(std::abs(eas_loss(fa, fv, head, tau) - loss) < 1e-10);
    }
    SUBCASE("raising a positive pair's similarity lowers the loss") {
        Rng rng(24);
        Tensor sim = Tensor::randn({4, 4}, rng, 0.3);
        auto loss_of = [](const Tensor& s, double tau) {
            Graph g;
            int l = eas_loss_node(g, g.input(s), tau);
            return g.val(l)[0];
        };
        double base = loss_of(sim, 0.1);
        Tensor bumped = sim;
        bumped[1 * 4 + 1] += 0.01;  // positive pair (1,1)
        CHECK(loss_of(bumped, 0.1) < base);
        Tensor off = sim;
        off[1 * 4 + 2] += 0.01;  // negative pair: loss must rise
        CHECK(loss_of(off, 0.1) > base);
    }
    SUBCASE("batch size mismatch and bad tau rejected") {
        std::vector<Tensor> fa{rand_t({2, 6}, 25)}, fv{rand_t({2, 6}, 26), rand_t({2, 6}, 27)};
        CHECK_THROWS(eas_loss(fa, fv, head, 0.1));
        std::vector<Tensor> fv1{rand_t({2, 6}, 28)};
        CHECK_THROWS(eas_loss(fa, fv1, head, 0.0));
        CHECK_THROWS(eas_loss(fa, fv1, head, -1.0));
    }
    SUBCASE("gradients through tokens and the weight heads match finite differences") {
        Tensor fa = rand_t({2, 3, 6}, 29), fv = rand_t({2, 4, 6}, 30);
        // pack all trainables and both token sets as leaves
        auto run = [&](const Tensor& fa_in, const Tensor& fv_in, const Tensor& law, const Tensor& lab,
                       const Tensor& lvw, const Tensor& lvb, Graph* gout, std::vector<int>* ids) {
            Graph& g = *gout;
            head.la.w->value = law;
            head.la.b->value = lab;
            head.lv.w->value = lvw;
            head.lv.b->value = lvb;
            nn::Binder bd(g);
            int ia = g.leaf(fa_in), iv = g.leaf(fv_in);
            int s = head.similarity_matrix(g, bd, ia, iv, false);
            int loss = eas_loss_node(g, s, 0.1);
            if (ids) {
                *ids = {ia, iv, bd.use(*head.la.w), bd.use(*head.la.b), bd.use(*head.lv.w), bd.use(*head.lv.b)};
            }
            return loss;
        };
        Tensor law = head.la.w->value, lab = head.la.b->value, lvw = head.lv.w->value, lvb = head.lv.b->value;

        Graph g;
        std::vector<int> ids;
        int loss = run(fa, fv, law, lab, lvw, lvb, &g, &ids);
        g.backward(loss);

        std::vector<Tensor> inputs = {fa, fv, law, lab, lvw, lvb};
        const double h = 1e-5;
        double worst = 0;
        Rng pick(31);
        for (size_t k = 0; k < inputs.size(); k++) {
            for (int probe = 0; probe < 4; probe++) {
                int64_t idx = static_cast<int64_t>(pick.below(static_cast<uint64_t>(inputs[k].numel())));
                std::vector<Tensor> xs = inputs;
                xs[k][idx] += h;
                Graph gp;
                double fp = gp.val(run(xs[0], xs[1], xs[2], xs[3], xs[4], xs[5], &gp, nullptr))[0];
                xs[k][idx] -= 2 * h;
                Graph gm;
                double fm = gm.val(run(xs[0], xs[1], xs[2], xs[3], xs[4], xs[5], &gm, nullptr))[0];
                double numeric = (fp - fm) / (2 * h);
                double analytic = g.grad(ids[k])[idx];
                if (std::abs(analytic) + std::abs(numeric) < 1e-9) continue;
                worst = std::max(worst, std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric)));
            }
        }
        head.la.w->value = law;
        head.la.b->value = lab;
        head.lv.w->value = lvw;
        head.lv.b->value = lvb;
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("total objective") {
    CHECK(total_loss(1.0, 0.5, 0.0) == 1.0);
    CHECK(total_loss(1.0, 0.5, 0.1) == doctest::Approx(1.05).epsilon(1e-15));
    CHECK(total_loss(0.7, 0.0, 2.0) == 0.7);
    CHECK_THROWS(total_loss(1.0, 0.5, -0.1));
}
