#include "nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace avldm::nn {

Parameter* ParamRegistry::add(const std::string& name, Shape shape) {
    check(by_name_.find(name) == by_name_.end(), "duplicate parameter: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor(shape);
    p->grad = Tensor(shape);
    Parameter* raw = p.get();
    by_name_[name] = std::move(p);
    order_.push_back(raw);
    return raw;
}

Parameter* ParamRegistry::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second.get();
}

void ParamRegistry::zero_grad() {
    for (Parameter* p : order_) p->zero_grad();
}

int64_t ParamRegistry::total_elements() const {
    int64_t n = 0;
    for (Parameter* p : order_) n += p->value.numel();
    return n;
}

void init_parameter(Parameter& p, Init kind, uint64_t seed, int64_t fan_in, int64_t fan_out) {
    Rng rng(seed, "init." + p.name);
    switch (kind) {
        case Init::Zero:
            std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
            break;
        case Init::One:
            std::fill(p.value.data.begin(), p.value.data.end(), 1.0);
            break;
        case Init::HeNormal: {
            double std = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (auto& v : p.value.data) v = std * rng.normal();
            break;
        }
        case Init::XavierNormal: {
            double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
            for (auto& v : p.value.data) v = std * rng.normal();
            break;
        }
        case Init::TemporalDelta: {
            // [Co, Ci, k] Dirac kernel: identity map along time at init
            check(p.value.rank() == 3, "TemporalDelta init expects conv1d weight");
            const int64_t co = p.value.shape[0], ci = p.value.shape[1], k = p.value.shape[2];
            check(co == ci, "TemporalDelta init needs Co == Ci");
            std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
            for (int64_t c = 0; c < co; c++) p.value[(c * ci + c) * k + k / 2] = 1.0;
            break;
        }
    }
}

int Binder::use(Parameter& p) {
    auto it = seen_.find(&p);
    if (it != seen_.end()) return it->second;
    int id = g_.leaf(p.value);
    bound_.emplace_back(&p, id);
    seen_[&p] = id;
    return id;
}

void Binder::collect_grads() {
    for (auto& [p, id] : bound_) {
        const Tensor& g = g_.grad(id);
        for (int64_t i = 0; i < g.numel(); i++) p->grad[i] += g[i];
    }
}

// ---- layers ----

Linear::Linear(ParamRegistry& r, const std::string& name, int64_t in, int64_t out, uint64_t seed, Init init) {
    w = r.add(name + ".weight", {out, in});
    b = r.add(name + ".bias", {out});
    init_parameter(*w, init, seed, in, out);
    init_parameter(*b, Init::Zero, seed, in, out);
}

int Linear::forward(Graph& g, Binder& bd, int x) const {
    const Shape xs = g.val(x).shape;
    const int64_t in = w->value.shape[1], out_d = w->value.shape[0];
    check(xs.back() == in, "linear: input dim mismatch");
    int64_t rows = g.val(x).numel() / in;
    int x2 = g.reshape(x, {rows, in});
    int wt = g.transpose_last2(bd.use(*w));  // [in, out]
    int y = g.matmul(x2, wt);
    y = g.add_bias_lastdim(y, bd.use(*b));
    Shape out_shape = xs;
    out_shape.back() = out_d;
    return g.reshape(y, out_shape);
}

Conv2d::Conv2d(ParamRegistry& r, const std::string& name, int64_t ci, int64_t co, int k, int stride_, int pad_,
               uint64_t seed, Init init)
    : stride(stride_), pad(pad_) {
    w = r.add(name + ".weight", {co, ci, k, k});
    b = r.add(name + ".bias", {co});
    init_parameter(*w, init, seed, ci * k * k, co * k * k);
    init_parameter(*b, Init::Zero, seed, ci, co);
}

int Conv2d::forward(Graph& g, Binder& bd, int x) const {
    return g.conv2d(x, bd.use(*w), bd.use(*b), stride, pad);
}

Conv1d::Conv1d(ParamRegistry& r, const std::string& name, int64_t ci, int64_t co, int k, int pad_, uint64_t seed, Init init)
    : pad(pad_) {
    w = r.add(name + ".weight", {co, ci, k});
    b = r.add(name + ".bias", {co});
    init_parameter(*w, init, seed, ci * k, co * k);
    init_parameter(*b, Init::Zero, seed, ci, co);
}

int Conv1d::forward(Graph& g, Binder& bd, int x) const {
    return g.conv1d(x, bd.use(*w), bd.use(*b), pad);
}

GroupNorm::GroupNorm(ParamRegistry& r, const std::string& name, int64_t channels, int groups_) : groups(groups_) {
    gamma = r.add(name + ".gamma", {channels});
    beta = r.add(name + ".beta", {channels});
    init_parameter(*gamma, Init::One, 0, 0, 0);
    init_parameter(*beta, Init::Zero, 0, 0, 0);
}

int GroupNorm::forward(Graph& g, Binder& bd, int x) const {
    return g.group_norm(x, bd.use(*gamma), bd.use(*beta), groups);
}

LayerNorm::LayerNorm(ParamRegistry& r, const std::string& name, int64_t dim) {
    gamma = r.add(name + ".gamma", {dim});
    beta = r.add(name + ".beta", {dim});
    init_parameter(*gamma, Init::One, 0, 0, 0);
    init_parameter(*beta, Init::Zero, 0, 0, 0);
}

int LayerNorm::forward(Graph& g, Binder& bd, int x) const {
    return g.layer_norm(x, bd.use(*gamma), bd.use(*beta));
}

Attention::Attention(ParamRegistry& r, const std::string& name, int64_t dim, int64_t ctx_dim, int heads_, uint64_t seed,
                     bool zero_init_out)
    : heads(heads_) {
    check(dim % heads_ == 0, "attention: dim not divisible by heads");
    norm = LayerNorm(r, name + ".norm", dim);
    q = Linear(r, name + ".q", dim, dim, seed);
    k = Linear(r, name + ".k", ctx_dim, dim, seed);
    v = Linear(r, name + ".v", ctx_dim, dim, seed);
    out = Linear(r, name + ".out", dim, dim, seed, zero_init_out ? Init::Zero : Init::XavierNormal);
}

int Attention::forward(Graph& g, Binder& bd, int x, int ctx, int mask) const {
    const Shape xs = g.val(x).shape;
    check(xs.size() == 3, "attention: expect tokens [B,N,D]");
    const int64_t B = xs[0], N = xs[1], D = xs[2];
    const int64_t h = heads, dh = D / heads;
    const bool self_attn = (ctx == x);

    int xq = norm.forward(g, bd, x);
    int ctx_in = self_attn ? xq : ctx;
    const int64_t L = g.val(ctx_in).shape[1];

    auto split_heads = [&](int t, int64_t len) {
        int r1 = g.reshape(t, {B, len, h, dh});
        int p1 = g.permute(r1, {0, 2, 1, 3});  // [B, h, len, dh]
        return g.reshape(p1, {B * h, len, dh});
    };

    int Q = split_heads(q.forward(g, bd, xq), N);
    int K = split_heads(k.forward(g, bd, ctx_in), L);
    int V = split_heads(v.forward(g, bd, ctx_in), L);

    int scores = g.bmm(Q, g.transpose_last2(K));           // [B*h, N, L]
    scores = g.scale(scores, 1.0 / std::sqrt(double(dh)));
    if (mask >= 0) scores = g.add_attn_bias(scores, mask);
    int attn = g.softmax_lastdim(scores);
    int ctxv = g.bmm(attn, V);  // [B*h, N, dh]

    int r = g.reshape(ctxv, {B, h, N, dh});
    r = g.permute(r, {0, 2, 1, 3});
    r = g.reshape(r, {B, N, D});
    int y = out.forward(g, bd, r);
    return g.add(x, y);
}

// ---- optimizer ----

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape);
        v_.emplace_back(p->value.shape);
    }
}

void Adam::step() {
    t_++;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); i++) {
        Parameter* p = params_[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p->value.numel(); j++) {
            double gj = p->grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            double mh = m[j] / bc1;
            double vh = v[j] / bc2;
            p->value[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

// ---- checkpoint io ----

namespace {
constexpr char kMagic[4] = {'A', 'V', 'L', 'W'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& reg, const std::string& meta_json) {
    nlohmann::json manifest;
    manifest["meta"] = nlohmann::json::parse(meta_json.empty() ? "{}" : meta_json);
    nlohmann::json params = nlohmann::json::array();
    uint64_t offset = 0;
    for (const Parameter* p : reg.all()) {
        nlohmann::json e;
        e["name"] = p->name;
        e["shape"] = p->value.shape;
        e["dtype"] = "f64";
        e["offset"] = offset;
        e["nbytes"] = static_cast<uint64_t>(p->value.numel()) * sizeof(double);
        params.push_back(e);
        offset += static_cast<uint64_t>(p->value.numel()) * sizeof(double);
    }
    manifest["params"] = params;
    std::string mstr = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(kMagic, 4);
    uint32_t ver = kVersion;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    uint64_t mlen = mstr.size();
    f.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    f.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const Parameter* p : reg.all())
        f.write(reinterpret_cast<const char*>(p->value.ptr()), static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

namespace {
nlohmann::json read_manifest(std::ifstream& f, const std::string& path) {
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a checkpoint file: " + path);
    uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kVersion) throw std::runtime_error("unsupported checkpoint version in " + path);
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mstr(mlen, '\0');
    f.read(mstr.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    return nlohmann::json::parse(mstr);
}
}  // namespace

std::string load_checkpoint(const std::string& path, ParamRegistry& reg) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
    nlohmann::json manifest = read_manifest(f, path);
    const std::streampos payload = f.tellg();
    size_t matched = 0;
    for (const auto& e : manifest["params"]) {
        std::string name = e["name"];
        Parameter* p = reg.find(name);
        if (!p) throw std::runtime_error("checkpoint has unknown parameter '" + name + "'");
        Shape shape = e["shape"].get<Shape>();
        if (shape != p->value.shape)
            throw std::runtime_error("checkpoint shape mismatch for '" + name + "': file " + shape_str(shape) +
                                     " vs model " + shape_str(p->value.shape));
        uint64_t offset = e["offset"];
        f.seekg(payload + static_cast<std::streamoff>(offset));
        f.read(reinterpret_cast<char*>(p->value.ptr()), static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
        if (!f) throw std::runtime_error("truncated checkpoint payload: " + path);
        matched++;
    }
    if (matched != reg.all().size())
        throw std::runtime_error("checkpoint is missing parameters (" + std::to_string(matched) + " of " +
                                 std::to_string(reg.all().size()) + ")");
    return manifest["meta"].dump();
}

std::string read_checkpoint_meta(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
    return read_manifest(f, path)["meta"].dump();
}

}  // namespace avldm::nn
