#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "util.hpp"

namespace avldm {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. All numeric state in the project lives
// in these; media files convert at the I/O boundary.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), 0.0) {}
    Tensor(Shape s, double fill) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {}

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }
    static Tensor randn(const Shape& s, Rng& rng, double stddev = 1.0) {
        Tensor t(s);
        for (auto& v : t.data) v = stddev * rng.normal();
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i < 0 ? rank() + i : i)]; }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
};

// Autodiff tape. A forward pass appends nodes; backward() walks the tape in
// reverse, accumulating into .grad of every node that needs it. Graphs are
// rebuilt every step; parameters enter as leaves via leaf().
class Graph {
public:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily in backward
        std::function<void(Graph&)> back;
        bool needs_grad = false;
        bool grad_ready = false;
    };

    int input(Tensor v);  // constant, no gradient tracked
    int leaf(Tensor v);   // gradient-tracked leaf (parameters, probe inputs)

    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor& grad(int id);
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    size_t size() const { return nodes_.size(); }

    // elementwise / scalar
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, double c);
    int silu(int a);

    // shape plumbing
    int reshape(int a, Shape s);
    int permute(int a, const std::vector<int>& perm);
    int concat(int a, int b, int dim);
    int repeat_rows(int a, int64_t k);  // [N, ...] -> [N*k, ...], row i repeated k times consecutively

    // linear algebra
    int matmul(int a, int b);               // [m,k] x [k,n]
    int bmm(int a, int b);                  // [G,m,k] x [G,k,n]
    int transpose_last2(int a);             // swaps the two trailing dims
    int add_bias_lastdim(int a, int bias);  // bias shape [D]

    // convolution / resolution
    int conv2d(int x, int w, int bias, int stride, int pad);  // x [N,C,H,W], w [Co,Ci,kh,kw]
    int conv1d(int x, int w, int bias, int pad);              // x [N,C,L],  w [Co,Ci,k]
    int upsample2d(int x);                                    // nearest, x2
    int add_channel_bias(int x, int v);                       // x [N,C,...], v [N,C]

    // normalization / attention pieces
    int group_norm(int x, int gamma, int beta, int groups, double eps = 1e-5);
    int layer_norm(int x, int gamma, int beta, double eps = 1e-5);
    int softmax_lastdim(int x);
    int add_attn_bias(int logits, int bias);  // logits [B*h, N, L], bias [B, L] (constant)

    // reductions / losses
    int mean_all(int x);
    int mse(int a, int b);

    // contrastive-similarity pieces
    // tokens [B,N,D], w [B,N], pools [B,D] -> S[i,j] = sum_t w[i,t] cos(tok[i,t], pool[j])
    int weighted_cos_sim(int tokens, int w, int pools);
    int cos_matrix(int a, int b);        // a,b [B,D] -> [B,B] pairwise cosine
    int pool_rows(int tokens, int w);    // [B,N,D],[B,N] -> [B,D]
    int cross_entropy_diag(int logits);  // [B,B] -> scalar, mean_i(LSE(row_i) - logits[i,i])

    void backward(int loss_id);

private:
    int push(Node n);
    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    std::vector<Node> nodes_;
};

// convenience used by ops and tests
void check(bool cond, const std::string& msg);

}  // namespace avldm
