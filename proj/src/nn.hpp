#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace avldm::nn {

// Named trainable tensor. Values are initialized deterministically from
// hash(seed, name) so a model's weights do not depend on which sibling
// modules exist (bridge on/off builds share every other parameter bitwise).
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class ParamRegistry {
public:
    Parameter* add(const std::string& name, Shape shape);
    const std::vector<Parameter*>& all() const { return order_; }
    Parameter* find(const std::string& name) const;
    void zero_grad();
    int64_t total_elements() const;

private:
    std::map<std::string, std::unique_ptr<Parameter>> by_name_;
    std::vector<Parameter*> order_;
};

enum class Init { Zero, HeNormal, XavierNormal, One, TemporalDelta };

void init_parameter(Parameter& p, Init kind, uint64_t seed, int64_t fan_in, int64_t fan_out);

// Binds parameters into a graph as leaves and copies grads back after
// backward(). One Binder per forward/backward pass.
class Binder {
public:
    explicit Binder(Graph& g) : g_(g) {}
    int use(Parameter& p);
    void collect_grads();

private:
    Graph& g_;
    std::vector<std::pair<Parameter*, int>> bound_;
    std::map<Parameter*, int> seen_;
};

// ---- layers ----

struct Linear {
    Parameter* w = nullptr;  // [out, in]
    Parameter* b = nullptr;  // [out]
    Linear() = default;
    Linear(ParamRegistry& r, const std::string& name, int64_t in, int64_t out, uint64_t seed, Init init = Init::XavierNormal);
    int forward(Graph& g, Binder& bd, int x) const;  // x [..., in]
};

struct Conv2d {
    Parameter* w = nullptr;  // [Co, Ci, k, k]
    Parameter* b = nullptr;
    int stride = 1, pad = 1;
    Conv2d() = default;
    Conv2d(ParamRegistry& r, const std::string& name, int64_t ci, int64_t co, int k, int stride, int pad, uint64_t seed,
           Init init = Init::HeNormal);
    int forward(Graph& g, Binder& bd, int x) const;
};

struct Conv1d {
    Parameter* w = nullptr;  // [Co, Ci, k]
    Parameter* b = nullptr;
    int pad = 1;
    Conv1d() = default;
    Conv1d(ParamRegistry& r, const std::string& name, int64_t ci, int64_t co, int k, int pad, uint64_t seed,
           Init init = Init::HeNormal);
    int forward(Graph& g, Binder& bd, int x) const;
};

struct GroupNorm {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    int groups = 8;
    GroupNorm() = default;
    GroupNorm(ParamRegistry& r, const std::string& name, int64_t channels, int groups);
    int forward(Graph& g, Binder& bd, int x) const;
};

struct LayerNorm {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    LayerNorm() = default;
    LayerNorm(ParamRegistry& r, const std::string& name, int64_t dim);
    int forward(Graph& g, Binder& bd, int x) const;
};

// Multi-head attention over token sequences. Queries come from `x`
// [B, N, D]; keys/values from `ctx` [B, L, Dc] (pass x itself for
// self-attention). Residual + pre-LN; `zero_init_out` makes the block an
// exact identity at initialization.
struct Attention {
    LayerNorm norm;
    Linear q, k, v, out;
    int heads = 4;
    Attention() = default;
    Attention(ParamRegistry& r, const std::string& name, int64_t dim, int64_t ctx_dim, int heads, uint64_t seed,
              bool zero_init_out);
    // mask: optional graph input [B, L] with 0 for valid, large-negative for
    // padded key positions; pass -1 for no mask.
    int forward(Graph& g, Binder& bd, int x, int ctx, int mask) const;
};

// ---- optimizer ----

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig cfg);
    void step();

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// ---- checkpoint I/O ----
// Flat binary file: magic "AVLW", u32 version, u64 manifest length, JSON
// manifest, then raw little-endian f64 payload. The manifest lists every
// parameter's name/shape/dtype/offset plus caller metadata.

void save_checkpoint(const std::string& path, const ParamRegistry& reg, const std::string& meta_json);
std::string load_checkpoint(const std::string& path, ParamRegistry& reg);  // returns meta JSON
std::string read_checkpoint_meta(const std::string& path);

}  // namespace avldm::nn
