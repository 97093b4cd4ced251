#include "denoiser.hpp"

#include <cmath>

#include "codecs.hpp"

namespace avldm {

Tensor timestep_embedding(const std::vector<int>& ts, int64_t dim) {
    check(dim % 2 == 0, "time embedding dim must be even");
    const int64_t B = static_cast<int64_t>(ts.size());
    const int64_t half = dim / 2;
    Tensor e({B, dim});
    for (int64_t b = 0; b < B; b++)
        for (int64_t i = 0; i < half; i++) {
            double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            double a = ts[static_cast<size_t>(b)] * freq;
            e[b * dim + i] = std::sin(a);
            e[b * dim + half + i] = std::cos(a);
        }
    return e;
}

TextBatch make_text_batch(const TextProvider& provider, const std::vector<std::string>& captions) {
    const int64_t B = static_cast<int64_t>(captions.size());
    const int64_t L = provider.max_tokens(), D = provider.dim();
    TextBatch tb;
    tb.tokens = Tensor({B, L, D});
    tb.bias = Tensor({B, L});
    for (int64_t b = 0; b < B; b++) {
        TextEmbedding e = provider.embed(captions[static_cast<size_t>(b)]);
        for (int64_t i = 0; i < L; i++) {
            tb.bias[b * L + i] = e.mask[static_cast<size_t>(i)] ? 0.0 : -1e30;
            for (int64_t d = 0; d < D; d++) tb.tokens[(b * L + i) * D + d] = e.tokens[i * D + d];
        }
    }
    return tb;
}

namespace detail {

TimeMlp::TimeMlp(nn::ParamRegistry& r, const std::string& name, int64_t dim, uint64_t seed) {
    l1 = nn::Linear(r, name + ".l1", dim, dim, seed);
    l2 = nn::Linear(r, name + ".l2", dim, dim, seed);
}

int TimeMlp::forward(Graph& g, nn::Binder& bd, int temb) const {
    return l2.forward(g, bd, g.silu(l1.forward(g, bd, temb)));
}

ResBlock::ResBlock(nn::ParamRegistry& r, const std::string& name, int64_t c_in, int64_t c_out,
                   const DenoiserConfig& cfg, bool temporal_, uint64_t seed)
    : temporal(temporal_) {
    int gr = static_cast<int>(std::min<int64_t>(cfg.groups, c_in));
    while (c_in % gr != 0) gr--;
    norm = nn::GroupNorm(r, name + ".norm", c_in, gr);
    time_proj = nn::Linear(r, name + ".time", cfg.time_dim, c_in, seed);
    if (temporal) {
        tconv = nn::Conv1d(r, name + ".tconv", c_in, c_in, 3, 1, seed);
        nn::init_parameter(*tconv.w, nn::Init::TemporalDelta, seed, 0, 0);
    }
    conv = nn::Conv2d(r, name + ".conv", c_in, c_out, 3, 1, 1, seed);
    if (c_in != c_out) {
        skip = nn::Conv2d(r, name + ".skip", c_in, c_out, 1, 1, 0, seed);
        has_skip = true;
    }
}

int ResBlock::forward(Graph& g, nn::Binder& bd, int x, int temb, int64_t frames) const {
    int h = norm.forward(g, bd, x);
    h = g.silu(h);
    h = g.add_channel_bias(h, time_proj.forward(g, bd, temb));
    if (temporal && frames > 1) {
        // [B*T, C, H, W] -> [B, H, W, C, T] -> conv over T -> back
        const Shape s = g.val(h).shape;
        const int64_t BT = s[0], C = s[1], H = s[2], W = s[3];
        const int64_t B = BT / frames;
        int v = g.reshape(h, {B, frames, C, H, W});
        v = g.permute(v, {0, 3, 4, 2, 1});        // [B, H, W, C, T]
        v = g.reshape(v, {B * H * W, C, frames});
        v = tconv.forward(g, bd, v);
        v = g.reshape(v, {B, H, W, C, frames});
        v = g.permute(v, {0, 4, 3, 1, 2});        // [B, T, C, H, W]
        h = g.reshape(v, {BT, C, H, W});
    }
    h = conv.forward(g, bd, h);
    int sk = has_skip ? skip.forward(g, bd, x) : x;
    return g.add(sk, h);
}

}  // namespace detail

// ---- audio ----

AudioUnet::AudioUnet(nn::ParamRegistry& r, const std::string& prefix, const DenoiserConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
    const int64_t w1 = cfg.base_width, w2 = cfg.bottleneck_width();
    conv_in_ = nn::Conv2d(r, prefix + ".conv_in", kAudioLatentChannels, w1, 3, 1, 1, seed);
    res1_ = detail::ResBlock(r, prefix + ".res1", w1, w1, cfg, false, seed);
    down_ = nn::Conv2d(r, prefix + ".down", w1, w2, 3, 2, 1, seed);
    res2_ = detail::ResBlock(r, prefix + ".res2", w2, w2, cfg, false, seed);
    text_attn_ = nn::Attention(r, prefix + ".text_attn", w2, cfg.text_dim, cfg.heads, seed, false);
    merge3_ = nn::Conv2d(r, prefix + ".merge3", 2 * w2, w2, 1, 1, 0, seed);
    res3_ = detail::ResBlock(r, prefix + ".res3", w2, w2, cfg, false, seed);
    up_ = nn::Conv2d(r, prefix + ".up", w2, w1, 1, 1, 0, seed);
    merge4_ = nn::Conv2d(r, prefix + ".merge4", 2 * w1, w1, 1, 1, 0, seed);
    res4_ = detail::ResBlock(r, prefix + ".res4", w1, w1, cfg, false, seed);
    norm_out_ = nn::GroupNorm(r, prefix + ".norm_out", w1, cfg.groups);
    conv_out_ = nn::Conv2d(r, prefix + ".conv_out", w1, kAudioLatentChannels, 3, 1, 1, seed, nn::Init::Zero);
    time_mlp_ = detail::TimeMlp(r, prefix + ".time_mlp", cfg.time_dim, seed);
}

int AudioUnet::encode(Graph& g, nn::Binder& bd, int z_t, const std::vector<int>& t, const TextBatch& text,
                      State* st) const {
    const Shape s = g.val(z_t).shape;
    check(s.size() == 4, "audio denoiser expects [B,8,Ha,Wa], got " + shape_str(s));
    check(s[1] == kAudioLatentChannels,
          "audio denoiser needs 8 input channels, got " + std::to_string(s[1]));
    check(static_cast<int64_t>(t.size()) == s[0], "audio denoiser: one timestep per sample");

    int temb = g.input(timestep_embedding(t, cfg_.time_dim));
    temb = time_mlp_.forward(g, bd, temb);

    int x = conv_in_.forward(g, bd, z_t);
    int x1 = res1_.forward(g, bd, x, temb, 1);
    int xd = down_.forward(g, bd, x1);
    int x2 = res2_.forward(g, bd, xd, temb, 1);

    const Shape s2 = g.val(x2).shape;  // [B, w2, h2, w2c]
    st->B = s2[0];
    st->h2 = s2[2];
    st->w2 = s2[3];
    st->x1 = x1;
    st->x2 = x2;
    st->temb = temb;

    int tokens = g.reshape(g.permute(x2, {0, 2, 3, 1}), {st->B, st->h2 * st->w2, cfg_.bottleneck_width()});
    int tb = g.input(text.tokens);
    int mask = g.input(text.bias);
    return text_attn_.forward(g, bd, tokens, tb, mask);
}

int AudioUnet::decode(Graph& g, nn::Binder& bd, int f_tokens, const State& st) const {
    const int64_t w2 = cfg_.bottleneck_width();
    int xm = g.permute(g.reshape(f_tokens, {st.B, st.h2, st.w2, w2}), {0, 3, 1, 2});
    int x3 = merge3_.forward(g, bd, g.concat(xm, st.x2, 1));
    x3 = res3_.forward(g, bd, x3, st.temb, 1);
    int xu = up_.forward(g, bd, g.upsample2d(x3));
    int x4 = merge4_.forward(g, bd, g.concat(xu, st.x1, 1));
    x4 = res4_.forward(g, bd, x4, st.temb, 1);
    int out = g.silu(norm_out_.forward(g, bd, x4));
    return conv_out_.forward(g, bd, out);
}

std::pair<int, int> AudioUnet::forward(Graph& g, nn::Binder& bd, int z_t, const std::vector<int>& t,
                                       const TextBatch& text) const {
    State st;
    int f = encode(g, bd, z_t, t, text, &st);
    int eps = decode(g, bd, f, st);
    return {eps, f};
}

// ---- video ----

VideoUnet::VideoUnet(nn::ParamRegistry& r, const std::string& prefix, const DenoiserConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
    const int64_t w1 = cfg.base_width, w2 = cfg.bottleneck_width();
    const bool tc = cfg.temporal;
    conv_in_ = nn::Conv2d(r, prefix + ".conv_in", kVideoLatentChannels, w1, 3, 1, 1, seed);
    res1_ = detail::ResBlock(r, prefix + ".res1", w1, w1, cfg, tc, seed);
    down_ = nn::Conv2d(r, prefix + ".down", w1, w2, 3, 2, 1, seed);
    res2_ = detail::ResBlock(r, prefix + ".res2", w2, w2, cfg, tc, seed);
    if (tc) temporal_attn_ = nn::Attention(r, prefix + ".temporal_attn", w2, w2, cfg.heads, seed, true);
    text_attn_ = nn::Attention(r, prefix + ".text_attn", w2, cfg.text_dim, cfg.heads, seed, false);
    merge3_ = nn::Conv2d(r, prefix + ".merge3", 2 * w2, w2, 1, 1, 0, seed);
    res3_ = detail::ResBlock(r, prefix + ".res3", w2, w2, cfg, tc, seed);
    up_ = nn::Conv2d(r, prefix + ".up", w2, w1, 1, 1, 0, seed);
    merge4_ = nn::Conv2d(r, prefix + ".merge4", 2 * w1, w1, 1, 1, 0, seed);
    res4_ = detail::ResBlock(r, prefix + ".res4", w1, w1, cfg, tc, seed);
    norm_out_ = nn::GroupNorm(r, prefix + ".norm_out", w1, cfg.groups);
    conv_out_ = nn::Conv2d(r, prefix + ".conv_out", w1, kVideoLatentChannels, 3, 1, 1, seed, nn::Init::Zero);
    time_mlp_ = detail::TimeMlp(r, prefix + ".time_mlp", cfg.time_dim, seed);
}

int VideoUnet::encode(Graph& g, nn::Binder& bd, int z_t, const std::vector<int>& t, const TextBatch& text,
                      State* st) const {
    const Shape s = g.val(z_t).shape;
    check(s.size() == 5, "video denoiser expects [B,T,4,H,W], got " + shape_str(s));
    check(s[2] == kVideoLatentChannels,
          "video denoiser needs 4 input channels, got " + std::to_string(s[2]));
    check(static_cast<int64_t>(t.size()) == s[0], "video denoiser: one timestep per sample");
    const int64_t B = s[0], T = s[1], H = s[3], W = s[4];

    int temb_b = g.input(timestep_embedding(t, cfg_.time_dim));
    temb_b = time_mlp_.forward(g, bd, temb_b);
    int temb = g.repeat_rows(temb_b, T);  // per folded frame

    int x = g.reshape(z_t, {B * T, kVideoLatentChannels, H, W});
    x = conv_in_.forward(g, bd, x);
    int x1 = res1_.forward(g, bd, x, temb, T);
    int xd = down_.forward(g, bd, x1);
    int x2 = res2_.forward(g, bd, xd, temb, T);

    const Shape s2 = g.val(x2).shape;  // [B*T, w2, h2, w2c]
    const int64_t w2 = cfg_.bottleneck_width();
    st->B = B;
    st->T = T;
    st->h2 = s2[2];
    st->w2 = s2[3];
    st->x1 = x1;
    st->x2 = x2;
    st->temb = temb;

    int tokens;
    if (cfg_.temporal) {
        // temporal attention: tokens over T per spatial site
        int v = g.reshape(x2, {B, T, w2, st->h2, st->w2});
        v = g.permute(v, {0, 3, 4, 1, 2});                       // [B, h, w, T, C]
        int ttok = g.reshape(v, {B * st->h2 * st->w2, T, w2});
        ttok = temporal_attn_.forward(g, bd, ttok, ttok, -1);
        v = g.reshape(ttok, {B, st->h2, st->w2, T, w2});
        v = g.permute(v, {0, 3, 1, 2, 4});                       // [B, T, h, w, C]
        tokens = g.reshape(v, {B, T * st->h2 * st->w2, w2});
    } else {
        int v = g.reshape(x2, {B, T, w2, st->h2, st->w2});
        v = g.permute(v, {0, 1, 3, 4, 2});
        tokens = g.reshape(v, {B, T * st->h2 * st->w2, w2});
    }
    int tb = g.input(text.tokens);
    int mask = g.input(text.bias);
    return text_attn_.forward(g, bd, tokens, tb, mask);
}

int VideoUnet::decode(Graph& g, nn::Binder& bd, int f_tokens, const State& st) const {
    const int64_t w2 = cfg_.bottleneck_width();
    int v = g.reshape(f_tokens, {st.B, st.T, st.h2, st.w2, w2});
    int xm = g.reshape(g.permute(v, {0, 1, 4, 2, 3}), {st.B * st.T, w2, st.h2, st.w2});
    int x3 = merge3_.forward(g, bd, g.concat(xm, st.x2, 1));
    x3 = res3_.forward(g, bd, x3, st.temb, st.T);
    int xu = up_.forward(g, bd, g.upsample2d(x3));
    int x4 = merge4_.forward(g, bd, g.concat(xu, st.x1, 1));
    x4 = res4_.forward(g, bd, x4, st.temb, st.T);
    int out = g.silu(norm_out_.forward(g, bd, x4));
    out = conv_out_.forward(g, bd, out);
    const Shape s = g.val(out).shape;
    return g.reshape(out, {st.B, st.T, kVideoLatentChannels, s[2], s[3]});
}

std::pair<int, int> VideoUnet::forward(Graph& g, nn::Binder& bd, int z_t, const std::vector<int>& t,
                                       const TextBatch& text) const {
    State st;
    int f = encode(g, bd, z_t, t, text, &st);
    int eps = decode(g, bd, f, st);
    return {eps, f};
}

}  // namespace avldm
