#pragma once

#include "nn.hpp"

namespace avldm {

// Bidirectional cross-attention between the two stream bottlenecks. Output
// projections are zero-initialized, so a fresh bridge is exactly the
// identity and a bridged model reproduces the bridge-free losses bit for
// bit on its first step.
class StreamBridge {
public:
    StreamBridge() = default;
    StreamBridge(nn::ParamRegistry& r, const std::string& prefix, int64_t width, int heads, uint64_t seed);

    // f_a [B,Na,D], f_v [B,Nv,D] -> (f_hat_a, f_hat_v), shapes preserved
    std::pair<int, int> forward(Graph& g, nn::Binder& bd, int f_a, int f_v) const;

private:
    nn::Attention a_from_v_, v_from_a_;
};

// single cross-attention pass (queries from f_q, keys/values from f_kv)
int cross_attention(Graph& g, nn::Binder& bd, const nn::Attention& attn, int f_q, int f_kv);

// Per-token weight heads: a linear projection with softmax over tokens.
class SimilarityHead {
public:
    SimilarityHead() = default;
    SimilarityHead(nn::ParamRegistry& r, const std::string& prefix, int64_t dim, uint64_t seed);

    // softmax token weights, tokens [B,N,D] -> [B,N]
    int weights(Graph& g, nn::Binder& bd, int tokens, bool audio) const;

    // Weighted token similarity matrix S[i,j] = s(f_a_i, f_v_j) over a batch:
    // per-token cosines against the other stream's weight-pooled mean, both
    // directions summed. eas_pooled switches to plain pooled-cosine.
    int similarity_matrix(Graph& g, nn::Binder& bd, int f_a, int f_v, bool pooled) const;

    nn::Linear la, lv;
};

// scalar convenience (no autodiff): s(f_a, f_v) for one pair, in [-2, 2]
double weighted_similarity(const Tensor& f_a, const Tensor& f_v, const SimilarityHead& head);

// Bidirectional contrastive loss over the similarity matrix at temperature
// tau; graph node result is a scalar. Same-index pairs are the positives.
int eas_loss_node(Graph& g, int sim_matrix, double tau);

// standalone evaluation over plain tensors (batch of token sequences)
double eas_loss(const std::vector<Tensor>& batch_f_a, const std::vector<Tensor>& batch_f_v,
                const SimilarityHead& head, double tau);

// L = l_diff + lambda * l_eas
double total_loss(double l_diff, double l_eas, double lambda);

}  // namespace avldm
