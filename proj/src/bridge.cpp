#include "bridge.hpp"

#include <cmath>

namespace avldm {

StreamBridge::StreamBridge(nn::ParamRegistry& r, const std::string& prefix, int64_t width, int heads, uint64_t seed) {
    a_from_v_ = nn::Attention(r, prefix + ".a_from_v", width, width, heads, seed, true);
    v_from_a_ = nn::Attention(r, prefix + ".v_from_a", width, width, heads, seed, true);
}

std::pair<int, int> StreamBridge::forward(Graph& g, nn::Binder& bd, int f_a, int f_v) const {
    int fa_hat = cross_attention(g, bd, a_from_v_, f_a, f_v);
    int fv_hat = cross_attention(g, bd, v_from_a_, f_v, f_a);
    return {fa_hat, fv_hat};
}

int cross_attention(Graph& g, nn::Binder& bd, const nn::Attention& attn, int f_q, int f_kv) {
    check(g.val(f_q).rank() == 3 && g.val(f_kv).rank() == 3, "cross_attention: expect token tensors [B,N,D]");
    check(g.val(f_kv).shape[1] >= 1, "cross_attention: empty key/value sequence");
    check(g.val(f_q).shape[1] >= 1, "cross_attention: empty query sequence");
    return attn.forward(g, bd, f_q, f_kv, -1);
}

SimilarityHead::SimilarityHead(nn::ParamRegistry& r, const std::string& prefix, int64_t dim, uint64_t seed) {
    la = nn::Linear(r, prefix + ".l_beta_a", dim, 1, seed);
    lv = nn::Linear(r, prefix + ".l_beta_v", dim, 1, seed);
}

int SimilarityHead::weights(Graph& g, nn::Binder& bd, int tokens, bool audio) const {
    const Shape s = g.val(tokens).shape;  // copy: ops below may grow the node store
    check(s.size() == 3, "similarity weights: expect [B,N,D]");
    const nn::Linear& l = audio ? la : lv;
    int logits = l.forward(g, bd, tokens);              // [B,N,1]
    logits = g.reshape(logits, {s[0], s[1]});
    return g.softmax_lastdim(logits);                   // weights sum to 1 per sample
}

int SimilarityHead::similarity_matrix(Graph& g, nn::Binder& bd, int f_a, int f_v, bool pooled) const {
    check(g.val(f_a).shape[0] == g.val(f_v).shape[0], "similarity: batch size mismatch");
    check(g.val(f_a).shape[2] == g.val(f_v).shape[2], "similarity: token width mismatch");
    int wa = weights(g, bd, f_a, true);
    int wv = weights(g, bd, f_v, false);
    int pool_a = g.pool_rows(f_a, wa);  // [B,D]
    int pool_v = g.pool_rows(f_v, wv);
    if (pooled) return g.cos_matrix(pool_a, pool_v);
    int s1 = g.weighted_cos_sim(f_a, wa, pool_v);                      // S1[i,j] = sum_t wa[i,t] cos(a_it, pool_v_j)
    int s2 = g.transpose_last2(g.weighted_cos_sim(f_v, wv, pool_a));   // S2[i,j] = sum_t wv[j,t] cos(v_jt, pool_a_i)
    return g.add(s1, s2);
}

double weighted_similarity(const Tensor& f_a, const Tensor& f_v, const SimilarityHead& head) {
    check(f_a.rank() == 2 && f_v.rank() == 2, "weighted_similarity: expect single sequences [N,D]");
    check(f_a.shape[0] >= 1 && f_v.shape[0] >= 1, "weighted_similarity: empty token sequence");
    Graph g;
    nn::Binder bd(g);
    int a = g.reshape(g.input(f_a), {1, f_a.shape[0], f_a.shape[1]});
    int v = g.reshape(g.input(f_v), {1, f_v.shape[0], f_v.shape[1]});
    int s = head.similarity_matrix(g, bd, a, v, false);
    return g.val(s)[0];
}

int eas_loss_node(Graph& g, int sim_matrix, double tau) {
    check(tau > 0.0, "eas_loss: tau must be positive");
    int logits = g.scale(sim_matrix, 1.0 / tau);
    int row = g.cross_entropy_diag(logits);                       // audio anchors vs video candidates
    int col = g.cross_entropy_diag(g.transpose_last2(logits));    // video anchors vs audio candidates
    return g.add(row, col);
}

double eas_loss(const std::vector<Tensor>& batch_f_a, const std::vector<Tensor>& batch_f_v,
                const SimilarityHead& head, double tau) {
    check(tau > 0.0, "eas_loss: tau must be positive");
    check(batch_f_a.size() == batch_f_v.size(), "eas_loss: batch size mismatch");
    check(!batch_f_a.empty(), "eas_loss: empty batch");
    const int64_t B = static_cast<int64_t>(batch_f_a.size());
    const int64_t Na = batch_f_a[0].shape[0], Nv = batch_f_v[0].shape[0];
    const int64_t D = batch_f_a[0].shape[1];
    Tensor fa({B, Na, D}), fv({B, Nv, D});
    for (int64_t b = 0; b < B; b++) {
        check(batch_f_a[static_cast<size_t>(b)].shape == Shape{Na, D} &&
                  batch_f_v[static_cast<size_t>(b)].shape == Shape{Nv, D},
              "eas_loss: ragged batches are not supported");
        std::copy(batch_f_a[static_cast<size_t>(b)].data.begin(), batch_f_a[static_cast<size_t>(b)].data.end(),
                  fa.data.begin() + b * Na * D);
        std::copy(batch_f_v[static_cast<size_t>(b)].data.begin(), batch_f_v[static_cast<size_t>(b)].data.end(),
                  fv.data.begin() + b * Nv * D);
    }
    Graph g;
    nn::Binder bd(g);
    int s = head.similarity_matrix(g, bd, g.input(fa), g.input(fv), false);
    int loss = eas_loss_node(g, s, tau);
    return g.val(loss)[0];
}

double total_loss(double l_diff, double l_eas, double lambda) {
    check(lambda >= 0.0, "total_loss: lambda must be nonnegative");
    return l_diff + lambda * l_eas;
}

}  // namespace avldm
