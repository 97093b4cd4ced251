#define EIGEN_DONT_PARALLELIZE 1
#include "tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <memory>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace avldm {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace {

// scratch buffers reused across conv calls; thread_local so concurrent
// graphs on different threads stay independent
std::vector<double>& scratch(int which) {
    thread_local std::vector<double> bufs[4];
    return bufs[which];
}
constexpr int kScratchCols = 0, kScratchW = 1, kScratchRows = 2, kScratchGCols = 3;

// Row-split GEMM wrappers: Eigen's own threading loses on the mid-sized
// products this graph produces, so parallelism happens here, over disjoint
// output row blocks (also keeps results independent of the thread count).

// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
    const int64_t chunk = 512;
#pragma omp parallel for schedule(static)
    for (int64_t r0 = 0; r0 < m; r0 += chunk) {
        int64_t rows = std::min(chunk, m - r0);
        ECMap Ab(A + r0 * k, rows, k), Bb(B, k, n);
        EMap Cb(C + r0 * n, rows, n);
        if (accumulate)
            Cb.noalias() += Ab * Bb;
        else
            Cb.noalias() = Ab * Bb;
    }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
    const int64_t chunk = 512;
#pragma omp parallel for schedule(static)
    for (int64_t r0 = 0; r0 < m; r0 += chunk) {
        int64_t rows = std::min(chunk, m - r0);
        ECMap Ab(A + r0 * k, rows, k), Bb(B, n, k);
        EMap Cb(C + r0 * n, rows, n);
        if (accumulate)
            Cb.noalias() += Ab * Bb.transpose();
        else
            Cb.noalias() = Ab * Bb.transpose();
    }
}

// C[k,n] (+)= A[m,k]^T * B[m,n]; split over C's rows (columns of A)
void gemm_tn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
    const int64_t chunk = 256;
#pragma omp parallel for schedule(static)
    for (int64_t c0 = 0; c0 < k; c0 += chunk) {
        int64_t cols = std::min(chunk, k - c0);
        Eigen::Map<const EMat, 0, Eigen::OuterStride<>> Ab(A + c0, m, cols, Eigen::OuterStride<>(k));
        ECMap Bb(B, m, n);
        EMap Cb(C + c0 * n, cols, n);
        if (accumulate)
            Cb.noalias() += Ab.transpose() * Bb;
        else
            Cb.noalias() = Ab.transpose() * Bb;
    }
}

}  // namespace

void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension");
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); i++) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

int Graph::push(Node n) {
    if (nodes_.capacity() == nodes_.size()) nodes_.reserve(nodes_.size() < 2048 ? 4096 : nodes_.size() * 2);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::input(Tensor v) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = false;
    return push(std::move(n));
}

int Graph::leaf(Tensor v) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = true;
    return push(std::move(n));
}

Tensor& Graph::grad(int id) {
    Node& n = node(id);
    if (!n.grad_ready) {
        n.grad = Tensor(n.value.shape);
        n.grad_ready = true;
    }
    return n.grad;
}

void Graph::backward(int loss_id) {
    check(val(loss_id).numel() == 1, "backward: loss must be scalar");
    grad(loss_id).data[0] = 1.0;
    for (int id = loss_id; id >= 0; id--) {
        Node& n = node(id);
        if (n.needs_grad && n.grad_ready && n.back) n.back(*this);
    }
}

// ---- elementwise ----

int Graph::add(int a, int b) {
    check(val(a).same_shape(val(b)), "add: shape mismatch " + shape_str(val(a).shape) + " vs " + shape_str(val(b).shape));
    Node n;
    n.value = Tensor(val(a).shape);
    const int64_t m = n.value.numel();
    Eigen::Map<Eigen::ArrayXd>(n.value.ptr(), m) =
        Eigen::Map<const Eigen::ArrayXd>(val(a).ptr(), m) + Eigen::Map<const Eigen::ArrayXd>(val(b).ptr(), m);
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, b, out](Graph& g) {
            const Tensor& go = g.grad(out);
            if (g.needs_grad(a)) {
                Tensor& ga = g.grad(a);
                for (int64_t i = 0; i < go.numel(); i++) ga[i] += go[i];
            }
            if (g.needs_grad(b)) {
                Tensor& gb = g.grad(b);
                for (int64_t i = 0; i < go.numel(); i++) gb[i] += go[i];
            }
        };
    return out;
}

int Graph::sub(int a, int b) {
    check(val(a).same_shape(val(b)), "sub: shape mismatch");
    Node n;
    n.value = Tensor(val(a).shape);
    for (int64_t i = 0; i < n.value.numel(); i++) n.value[i] = val(a)[i] - val(b)[i];
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, b, out](Graph& g) {
            const Tensor& go = g.grad(out);
            if (g.needs_grad(a)) {
                Tensor& ga = g.grad(a);
                for (int64_t i = 0; i < go.numel(); i++) ga[i] += go[i];
            }
            if (g.needs_grad(b)) {
                Tensor& gb = g.grad(b);
                for (int64_t i = 0; i < go.numel(); i++) gb[i] -= go[i];
            }
        };
    return out;
}

int Graph::mul(int a, int b) {
    check(val(a).same_shape(val(b)), "mul: shape mismatch");
    Node n;
    n.value = Tensor(val(a).shape);
    for (int64_t i = 0; i < n.value.numel(); i++) n.value[i] = val(a)[i] * val(b)[i];
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, b, out](Graph& g) {
            const Tensor& go = g.grad(out);
            if (g.needs_grad(a)) {
                Tensor& ga = g.grad(a);
                const Tensor& vb = g.val(b);
                for (int64_t i = 0; i < go.numel(); i++) ga[i] += go[i] * vb[i];
            }
            if (g.needs_grad(b)) {
                Tensor& gb = g.grad(b);
                const Tensor& va = g.val(a);
                for (int64_t i = 0; i < go.numel(); i++) gb[i] += go[i] * va[i];
            }
        };
    return out;
}

int Graph::scale(int a, double c) {
    Node n;
    n.value = Tensor(val(a).shape);
    for (int64_t i = 0; i < n.value.numel(); i++) n.value[i] = val(a)[i] * c;
    n.needs_grad = needs_grad(a);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, c, out](Graph& g) {
            const Tensor& go = g.grad(out);
            Tensor& ga = g.grad(a);
            for (int64_t i = 0; i < go.numel(); i++) ga[i] += go[i] * c;
        };
    return out;
}

int Graph::silu(int a) {
    Node n;
    n.value = Tensor(val(a).shape);
    const int64_t m = n.value.numel();
    // sigmoid cached for the backward pass; exp vectorized via Eigen
    Tensor sig(val(a).shape);
    {
        Eigen::Map<const Eigen::ArrayXd> x(val(a).ptr(), m);
        Eigen::Map<Eigen::ArrayXd> sg(sig.ptr(), m);
        Eigen::Map<Eigen::ArrayXd> y(n.value.ptr(), m);
        sg = 1.0 / (1.0 + (-x).exp());
        y = x * sg;
    }
    n.needs_grad = needs_grad(a);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, out, sig = std::move(sig), m](Graph& g) {
            Eigen::Map<const Eigen::ArrayXd> go(g.grad(out).ptr(), m);
            Eigen::Map<const Eigen::ArrayXd> x(g.val(a).ptr(), m);
            Eigen::Map<const Eigen::ArrayXd> sg(sig.ptr(), m);
            Eigen::Map<Eigen::ArrayXd> ga(g.grad(a).ptr(), m);
            ga += go * sg * (1.0 + x * (1.0 - sg));
        };
    return out;
}

// ---- shape plumbing ----

int Graph::reshape(int a, Shape s) {
    check(shape_numel(s) == val(a).numel(), "reshape: element count mismatch");
    Node n;
    n.value.shape = std::move(s);
    n.value.data = val(a).data;  // row-major contiguous, data unchanged
    n.needs_grad = needs_grad(a);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, out](Graph& g) {
            const Tensor& go = g.grad(out);
            Tensor& ga = g.grad(a);
            for (int64_t i = 0; i < go.numel(); i++) ga[i] += go[i];
        };
    return out;
}

namespace {

// strides of a row-major shape
std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; i--) {
        st[static_cast<size_t>(i)] = acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return st;
}

void permute_copy(const Tensor& src, Tensor& dst, const std::vector<int>& perm, bool accumulate_into_src_order) {
    // dst[j0,...,jk] = src[perm applied]; walks dst linearly.
    const int r = src.rank();
    Shape out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; i++) out_shape[static_cast<size_t>(i)] = src.shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    auto sst = strides_of(src.shape);
    std::vector<int64_t> step(static_cast<size_t>(r));
    for (int i = 0; i < r; i++) step[static_cast<size_t>(i)] = sst[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    const int64_t n = src.numel();
    int64_t soff = 0;
    for (int64_t i = 0; i < n; i++) {
        if (accumulate_into_src_order)
            const_cast<Tensor&>(src).data[static_cast<size_t>(soff)] += dst[i];
        else
            dst[i] = src[soff];
        for (int d = r - 1; d >= 0; d--) {
            idx[static_cast<size_t>(d)]++;
            soff += step[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
            soff -= step[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
}

}  // namespace

int Graph::permute(int a, const std::vector<int>& perm) {
    const Tensor& va = val(a);
    check(static_cast<int>(perm.size()) == va.rank(), "permute: rank mismatch");
    Shape out_shape(perm.size());
    for (size_t i = 0; i < perm.size(); i++) out_shape[i] = va.shape[static_cast<size_t>(perm[i])];
    Node n;
    n.value = Tensor(out_shape);
    permute_copy(va, n.value, perm, false);
    n.needs_grad = needs_grad(a);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, perm, out](Graph& g) {
            // scatter-add grad back through the same index walk
            permute_copy(g.grad(a), g.grad(out), perm, true);
        };
    return out;
}

int Graph::concat(int a, int b, int dim) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check(va.rank() == vb.rank(), "concat: rank mismatch");
    for (int i = 0; i < va.rank(); i++)
        if (i != dim) check(va.shape[static_cast<size_t>(i)] == vb.shape[static_cast<size_t>(i)], "concat: shape mismatch");
    Shape out_shape = va.shape;
    out_shape[static_cast<size_t>(dim)] += vb.shape[static_cast<size_t>(dim)];

    int64_t outer = 1;
    for (int i = 0; i < dim; i++) outer *= va.shape[static_cast<size_t>(i)];
    int64_t inner = 1;
    for (int i = dim + 1; i < va.rank(); i++) inner *= va.shape[static_cast<size_t>(i)];
    const int64_t ca = va.shape[static_cast<size_t>(dim)] * inner;
    const int64_t cb = vb.shape[static_cast<size_t>(dim)] * inner;

    Node n;
    n.value = Tensor(out_shape);
    for (int64_t o = 0; o < outer; o++) {
        std::memcpy(n.value.ptr() + o * (ca + cb), va.ptr() + o * ca, static_cast<size_t>(ca) * sizeof(double));
        std::memcpy(n.value.ptr() + o * (ca + cb) + ca, vb.ptr() + o * cb, static_cast<size_t>(cb) * sizeof(double));
    }
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, b, out, outer, ca, cb](Graph& g) {
            const Tensor& go = g.grad(out);
            if (g.needs_grad(a)) {
                Tensor& ga = g.grad(a);
                for (int64_t o = 0; o < outer; o++)
                    for (int64_t i = 0; i < ca; i++) ga[o * ca + i] += go[o * (ca + cb) + i];
            }
            if (g.needs_grad(b)) {
                Tensor& gb = g.grad(b);
                for (int64_t o = 0; o < outer; o++)
                    for (int64_t i = 0; i < cb; i++) gb[o * cb + i] += go[o * (ca + cb) + ca + i];
            }
        };
    return out;
}

int Graph::repeat_rows(int a, int64_t k) {
    const Tensor& va = val(a);
    check(va.rank() >= 1 && k >= 1, "repeat_rows: bad args");
    const int64_t rows = va.shape[0];
    const int64_t row_n = va.numel() / rows;
    Shape out_shape = va.shape;
    out_shape[0] = rows * k;
    Node n;
    n.value = Tensor(out_shape);
    for (int64_t r = 0; r < rows; r++)
        for (int64_t j = 0; j < k; j++)
            std::memcpy(n.value.ptr() + (r * k + j) * row_n, va.ptr() + r * row_n, static_cast<size_t>(row_n) * sizeof(double));
    n.needs_grad = needs_grad(a);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, out, rows, row_n, k](Graph& g) {
            const Tensor& go = g.grad(out);
            Tensor& ga = g.grad(a);
            for (int64_t r = 0; r < rows; r++)
                for (int64_t j = 0; j < k; j++)
                    for (int64_t i = 0; i < row_n; i++) ga[r * row_n + i] += go[(r * k + j) * row_n + i];
        };
    return out;
}

// ---- linear algebra ----

int Graph::matmul(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check(va.rank() == 2 && vb.rank() == 2 && va.shape[1] == vb.shape[0], "matmul: bad shapes");
    const int64_t m = va.shape[0], k = va.shape[1], n2 = vb.shape[1];
    Node n;
    n.value = Tensor({m, n2});
    gemm_nn(va.ptr(), vb.ptr(), n.value.ptr(), m, k, n2, false);
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, b, out, m, k, n2](Graph& g) {
            const double* go = g.grad(out).ptr();
            if (g.needs_grad(a)) gemm_nt(go, g.val(b).ptr(), g.grad(a).ptr(), m, n2, k, true);
            if (g.needs_grad(b)) gemm_tn(g.val(a).ptr(), go, g.grad(b).ptr(), m, k, n2, true);
        };
    return out;
}

int Graph::bmm(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check(va.rank() == 3 && vb.rank() == 3 && va.shape[0] == vb.shape[0] && va.shape[2] == vb.shape[1], "bmm: bad shapes");
    const int64_t G = va.shape[0], m = va.shape[1], k = va.shape[2], n2 = vb.shape[2];
    Node n;
    n.value = Tensor({G, m, n2});
    for (int64_t gi = 0; gi < G; gi++) {
        ECMap A(va.ptr() + gi * m * k, m, k), B(vb.ptr() + gi * k * n2, k, n2);
        EMap C(n.value.ptr() + gi * m * n2, m, n2);
        C.noalias() = A * B;
    }
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, b, out, G, m, k, n2](Graph& g) {
            for (int64_t gi = 0; gi < G; gi++) {
                ECMap GO(g.grad(out).ptr() + gi * m * n2, m, n2);
                if (g.needs_grad(a)) {
                    ECMap B(g.val(b).ptr() + gi * k * n2, k, n2);
                    EMap GA(g.grad(a).ptr() + gi * m * k, m, k);
                    GA.noalias() += GO * B.transpose();
                }
                if (g.needs_grad(b)) {
                    ECMap A(g.val(a).ptr() + gi * m * k, m, k);
                    EMap GB(g.grad(b).ptr() + gi * k * n2, k, n2);
                    GB.noalias() += A.transpose() * GO;
                }
            }
        };
    return out;
}

int Graph::transpose_last2(int a) {
    const int r = val(a).rank();
    check(r >= 2, "transpose_last2: rank < 2");
    std::vector<int> perm(static_cast<size_t>(r));
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[static_cast<size_t>(r - 2)], perm[static_cast<size_t>(r - 1)]);
    return permute(a, perm);
}

int Graph::add_bias_lastdim(int a, int bias) {
    const Tensor& va = val(a);
    const Tensor& vb = val(bias);
    const int64_t d = va.shape.back();
    check(vb.rank() == 1 && vb.shape[0] == d, "add_bias_lastdim: bad bias shape");
    Node n;
    n.value = Tensor(va.shape);
    const int64_t rows = va.numel() / d;
    for (int64_t r = 0; r < rows; r++)
        for (int64_t i = 0; i < d; i++) n.value[r * d + i] = va[r * d + i] + vb[i];
    n.needs_grad = needs_grad(a) || needs_grad(bias);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, bias, out, rows, d](Graph& g) {
            const Tensor& go = g.grad(out);
            if (g.needs_grad(a)) {
                Tensor& ga = g.grad(a);
                for (int64_t i = 0; i < go.numel(); i++) ga[i] += go[i];
            }
            if (g.needs_grad(bias)) {
                Tensor& gb = g.grad(bias);
                for (int64_t r = 0; r < rows; r++)
                    for (int64_t i = 0; i < d; i++) gb[i] += go[r * d + i];
            }
        };
    return out;
}

// ---- convolutions ----

namespace {

struct Conv2dDims {
    int64_t N, C, H, W, Co, kh, kw, Ho, Wo;
    int stride, pad;
};

// cols: [N*Ho*Wo, C*kh*kw]
void im2col(const Tensor& x, const Conv2dDims& d, std::vector<double>& cols) {
    const int64_t K = d.C * d.kh * d.kw;
    cols.resize(static_cast<size_t>(d.N * d.Ho * d.Wo * K));
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < d.N; n++) {
        const double* xn = x.ptr() + n * d.C * d.H * d.W;
        for (int64_t oy = 0; oy < d.Ho; oy++) {
            for (int64_t ox = 0; ox < d.Wo; ox++) {
                double* row = cols.data() + ((n * d.Ho + oy) * d.Wo + ox) * K;
                for (int64_t c = 0; c < d.C; c++) {
                    for (int64_t ky = 0; ky < d.kh; ky++) {
                        int64_t iy = oy * d.stride + ky - d.pad;
                        double* r = row + (c * d.kh + ky) * d.kw;
                        if (iy < 0 || iy >= d.H) {
                            for (int64_t kx = 0; kx < d.kw; kx++) r[kx] = 0.0;
                            continue;
                        }
                        const double* src = xn + (c * d.H + iy) * d.W;
                        for (int64_t kx = 0; kx < d.kw; kx++) {
                            int64_t ix = ox * d.stride + kx - d.pad;
                            r[kx] = (ix < 0 || ix >= d.W) ? 0.0 : src[ix];
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const std::vector<double>& cols, const Conv2dDims& d, Tensor& gx) {
    const int64_t K = d.C * d.kh * d.kw;
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < d.N; n++) {
        double* xn = gx.ptr() + n * d.C * d.H * d.W;
        for (int64_t oy = 0; oy < d.Ho; oy++) {
            for (int64_t ox = 0; ox < d.Wo; ox++) {
                const double* row = cols.data() + ((n * d.Ho + oy) * d.Wo + ox) * K;
                for (int64_t c = 0; c < d.C; c++) {
                    for (int64_t ky = 0; ky < d.kh; ky++) {
                        int64_t iy = oy * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= d.H) continue;
                        for (int64_t kx = 0; kx < d.kw; kx++) {
                            int64_t ix = ox * d.stride + kx - d.pad;
                            if (ix < 0 || ix >= d.W) continue;
                            xn[(c * d.H + iy) * d.W + ix] += row[(c * d.kh + ky) * d.kw + kx];
                        }
                    }
                }
            }
        }
    }
}

// w [Co, K] row-major -> wt [K, Co]
void weight_to_kxco(const Tensor& w, int64_t Co, int64_t K, std::vector<double>& wt) {
    wt.resize(static_cast<size_t>(K * Co));
    for (int64_t o = 0; o < Co; o++)
        for (int64_t i = 0; i < K; i++) wt[static_cast<size_t>(i * Co + o)] = w[o * K + i];
}

struct Conv1dDims {
    int64_t N, C, L, Co, k, Lo;
    int pad;
};

void im2col1d(const Tensor& x, const Conv1dDims& d, std::vector<double>& cols) {
    const int64_t K = d.C * d.k;
    cols.resize(static_cast<size_t>(d.N * d.Lo * K));
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < d.N; n++) {
        const double* xn = x.ptr() + n * d.C * d.L;
        for (int64_t o = 0; o < d.Lo; o++) {
            double* row = cols.data() + (n * d.Lo + o) * K;
            for (int64_t c = 0; c < d.C; c++)
                for (int64_t kk = 0; kk < d.k; kk++) {
                    int64_t i = o + kk - d.pad;
                    row[c * d.k + kk] = (i < 0 || i >= d.L) ? 0.0 : xn[c * d.L + i];
                }
        }
    }
}

}  // namespace

int Graph::conv2d(int x, int w, int bias, int stride, int pad) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const Tensor& vb = val(bias);
    check(vx.rank() == 4 && vw.rank() == 4, "conv2d: expect x[N,C,H,W], w[Co,Ci,kh,kw]");
    check(vx.shape[1] == vw.shape[1], "conv2d: channel mismatch");
    Conv2dDims d;
    d.N = vx.shape[0];
    d.C = vx.shape[1];
    d.H = vx.shape[2];
    d.W = vx.shape[3];
    d.Co = vw.shape[0];
    d.kh = vw.shape[2];
    d.kw = vw.shape[3];
    d.stride = stride;
    d.pad = pad;
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
    check(vb.rank() == 1 && vb.shape[0] == d.Co, "conv2d: bad bias");
    const int64_t K = d.C * d.kh * d.kw;
    const int64_t rows = d.N * d.Ho * d.Wo;

    auto cols_keep = std::make_shared<std::vector<double>>();
    std::vector<double>& cols = *cols_keep;
    std::vector<double>& wt = scratch(kScratchW);
    im2col(vx, d, cols);
    weight_to_kxco(vw, d.Co, K, wt);

    std::vector<double>& outrows = scratch(kScratchRows);
    outrows.resize(static_cast<size_t>(rows * d.Co));
    gemm_nn(cols.data(), wt.data(), outrows.data(), rows, K, d.Co, false);
    Node n;
    n.value = Tensor({d.N, d.Co, d.Ho, d.Wo});
    // [rows, Co] -> [N, Co, Ho, Wo], plus bias
#pragma omp parallel for schedule(static)
    for (int64_t nn = 0; nn < d.N; nn++)
        for (int64_t oy = 0; oy < d.Ho; oy++)
            for (int64_t ox = 0; ox < d.Wo; ox++) {
                const double* r = outrows.data() + ((nn * d.Ho + oy) * d.Wo + ox) * d.Co;
                for (int64_t o = 0; o < d.Co; o++)
                    n.value[((nn * d.Co + o) * d.Ho + oy) * d.Wo + ox] = r[o] + vb[o];
            }
    n.needs_grad = needs_grad(x) || needs_grad(w) || needs_grad(bias);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [x, w, bias, out, d, K, rows, cols_keep](Graph& g) {
            const Tensor& go = g.grad(out);
            // regroup to [rows, Co]
            std::vector<double>& gorows = scratch(kScratchRows);
            gorows.resize(static_cast<size_t>(rows * d.Co));
#pragma omp parallel for schedule(static)
            for (int64_t nn = 0; nn < d.N; nn++)
                for (int64_t o = 0; o < d.Co; o++)
                    for (int64_t oy = 0; oy < d.Ho; oy++)
                        for (int64_t ox = 0; ox < d.Wo; ox++)
                            gorows[static_cast<size_t>(((nn * d.Ho + oy) * d.Wo + ox) * d.Co + o)] =
                                go[((nn * d.Co + o) * d.Ho + oy) * d.Wo + ox];
            if (g.needs_grad(bias)) {
                Tensor& gb = g.grad(bias);
                for (int64_t r = 0; r < rows; r++)
                    for (int64_t o = 0; o < d.Co; o++) gb[o] += gorows[static_cast<size_t>(r * d.Co + o)];
            }
            if (g.needs_grad(w)) {
                std::vector<double> gwt(static_cast<size_t>(K * d.Co));
                gemm_tn(cols_keep->data(), gorows.data(), gwt.data(), rows, K, d.Co, false);
                Tensor& gw = g.grad(w);
                for (int64_t o = 0; o < d.Co; o++)
                    for (int64_t i = 0; i < K; i++) gw[o * K + i] += gwt[static_cast<size_t>(i * d.Co + o)];
            }
            if (g.needs_grad(x)) {
                std::vector<double>& wt = scratch(kScratchW);
                weight_to_kxco(g.val(w), d.Co, K, wt);
                std::vector<double>& gcols = scratch(kScratchGCols);
                gcols.resize(static_cast<size_t>(rows * K));
                gemm_nt(gorows.data(), wt.data(), gcols.data(), rows, d.Co, K, false);
                col2im_add(gcols, d, g.grad(x));
            }
        };
    return out;
}

int Graph::conv1d(int x, int w, int bias, int pad) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const Tensor& vb = val(bias);
    check(vx.rank() == 3 && vw.rank() == 3, "conv1d: expect x[N,C,L], w[Co,Ci,k]");
    check(vx.shape[1] == vw.shape[1], "conv1d: channel mismatch");
    Conv1dDims d;
    d.N = vx.shape[0];
    d.C = vx.shape[1];
    d.L = vx.shape[2];
    d.Co = vw.shape[0];
    d.k = vw.shape[2];
    d.pad = pad;
    d.Lo = d.L + 2 * pad - d.k + 1;
    check(vb.rank() == 1 && vb.shape[0] == d.Co, "conv1d: bad bias");
    const int64_t K = d.C * d.k;
    const int64_t rows = d.N * d.Lo;

    auto cols_keep = std::make_shared<std::vector<double>>();
    std::vector<double>& cols = *cols_keep;
    std::vector<double>& wt = scratch(kScratchW);
    im2col1d(vx, d, cols);
    weight_to_kxco(vw, d.Co, K, wt);
    std::vector<double>& outrows = scratch(kScratchRows);
    outrows.resize(static_cast<size_t>(rows * d.Co));
    gemm_nn(cols.data(), wt.data(), outrows.data(), rows, K, d.Co, false);
    Node n;
    n.value = Tensor({d.N, d.Co, d.Lo});
#pragma omp parallel for schedule(static)
    for (int64_t nn = 0; nn < d.N; nn++)
        for (int64_t o = 0; o < d.Lo; o++) {
            const double* r = outrows.data() + (nn * d.Lo + o) * d.Co;
            for (int64_t c = 0; c < d.Co; c++) n.value[(nn * d.Co + c) * d.Lo + o] = r[c] + vb[c];
        }
    n.needs_grad = needs_grad(x) || needs_grad(w) || needs_grad(bias);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [x, w, bias, out, d, K, rows, cols_keep](Graph& g) {
            const Tensor& go = g.grad(out);
            std::vector<double>& gorows = scratch(kScratchRows);
            gorows.resize(static_cast<size_t>(rows * d.Co));
#pragma omp parallel for schedule(static)
            for (int64_t nn = 0; nn < d.N; nn++)
                for (int64_t c = 0; c < d.Co; c++)
                    for (int64_t o = 0; o < d.Lo; o++)
                        gorows[static_cast<size_t>((nn * d.Lo + o) * d.Co + c)] = go[(nn * d.Co + c) * d.Lo + o];
            if (g.needs_grad(bias)) {
                Tensor& gb = g.grad(bias);
                for (int64_t r = 0; r < rows; r++)
                    for (int64_t c = 0; c < d.Co; c++) gb[c] += gorows[static_cast<size_t>(r * d.Co + c)];
            }
            if (g.needs_grad(w)) {
                std::vector<double> gwt(static_cast<size_t>(K * d.Co));
                gemm_tn(cols_keep->data(), gorows.data(), gwt.data(), rows, K, d.Co, false);
                Tensor& gw = g.grad(w);
                for (int64_t c = 0; c < d.Co; c++)
                    for (int64_t i = 0; i < K; i++) gw[c * K + i] += gwt[static_cast<size_t>(i * d.Co + c)];
            }
            if (g.needs_grad(x)) {
                std::vector<double>& wt = scratch(kScratchW);
                weight_to_kxco(g.val(w), d.Co, K, wt);
                std::vector<double>& gcols = scratch(kScratchGCols);
                gcols.resize(static_cast<size_t>(rows * K));
                gemm_nt(gorows.data(), wt.data(), gcols.data(), rows, d.Co, K, false);
                Tensor& gx = g.grad(x);
                for (int64_t nn = 0; nn < d.N; nn++)
                    for (int64_t o = 0; o < d.Lo; o++) {
                        const double* row = gcols.data() + (nn * d.Lo + o) * K;
                        for (int64_t c = 0; c < d.C; c++)
                            for (int64_t kk = 0; kk < d.k; kk++) {
                                int64_t i = o + kk - d.pad;
                                if (i < 0 || i >= d.L) continue;
                                gx[(nn * d.C + c) * d.L + i] += row[c * d.k + kk];
                            }
                    }
            }
        };
    return out;
}

int Graph::upsample2d(int x) {
    const Tensor& vx = val(x);
    check(vx.rank() == 4, "upsample2d: expect [N,C,H,W]");
    const int64_t N = vx.shape[0], C = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
    Node n;
    n.value = Tensor({N, C, 2 * H, 2 * W});
    for (int64_t nc = 0; nc < N * C; nc++) {
        const double* src = vx.ptr() + nc * H * W;
        double* dst = n.value.ptr() + nc * 4 * H * W;
        for (int64_t y = 0; y < H; y++)
            for (int64_t xx = 0; xx < W; xx++) {
                double v = src[y * W + xx];
                dst[(2 * y) * 2 * W + 2 * xx] = v;
                dst[(2 * y) * 2 * W + 2 * xx + 1] = v;
                dst[(2 * y + 1) * 2 * W + 2 * xx] = v;
                dst[(2 * y + 1) * 2 * W + 2 * xx + 1] = v;
            }
    }
    n.needs_grad = needs_grad(x);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [x, out, N, C, H, W](Graph& g) {
            const Tensor& go = g.grad(out);
            Tensor& gx = g.grad(x);
            for (int64_t nc = 0; nc < N * C; nc++) {
                const double* src = go.ptr() + nc * 4 * H * W;
                double* dst = gx.ptr() + nc * H * W;
                for (int64_t y = 0; y < H; y++)
                    for (int64_t xx = 0; xx < W; xx++)
                        dst[y * W + xx] += src[(2 * y) * 2 * W + 2 * xx] + src[(2 * y) * 2 * W + 2 * xx + 1] +
                                           src[(2 * y + 1) * 2 * W + 2 * xx] + src[(2 * y + 1) * 2 * W + 2 * xx + 1];
            }
        };
    return out;
}

int Graph::add_channel_bias(int x, int v) {
    const Tensor& vx = val(x);
    const Tensor& vv = val(v);
    check(vx.rank() >= 2 && vv.rank() == 2, "add_channel_bias: expect x[N,C,...], v[N,C]");
    check(vx.shape[0] == vv.shape[0] && vx.shape[1] == vv.shape[1], "add_channel_bias: N/C mismatch");
    const int64_t N = vx.shape[0], C = vx.shape[1];
    const int64_t S = vx.numel() / (N * C);
    Node n;
    n.value = Tensor(vx.shape);
    for (int64_t nc = 0; nc < N * C; nc++) {
        double b = vv[nc];
        const double* src = vx.ptr() + nc * S;
        double* dst = n.value.ptr() + nc * S;
        for (int64_t i = 0; i < S; i++) dst[i] = src[i] + b;
    }
    n.needs_grad = needs_grad(x) || needs_grad(v);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [x, v, out, N, C, S](Graph& g) {
            const Tensor& go = g.grad(out);
            if (g.needs_grad(x)) {
                Tensor& gx = g.grad(x);
                for (int64_t i = 0; i < go.numel(); i++) gx[i] += go[i];
            }
            if (g.needs_grad(v)) {
                Tensor& gv = g.grad(v);
                for (int64_t nc = 0; nc < N * C; nc++) {
                    const double* src = go.ptr() + nc * S;
                    double acc = 0.0;
                    for (int64_t i = 0; i < S; i++) acc += src[i];
                    gv[nc] += acc;
                }
            }
        };
    return out;
}

// ---- normalization ----

int Graph::group_norm(int x, int gamma, int beta, int groups, double eps) {
    const Tensor& vx = val(x);
    check(vx.rank() >= 2, "group_norm: rank < 2");
    const int64_t N = vx.shape[0], C = vx.shape[1];
    check(C % groups == 0, "group_norm: C not divisible by groups");
    const Tensor& vg = val(gamma);
    const Tensor& vb = val(beta);
    check(vg.numel() == C && vb.numel() == C, "group_norm: bad gamma/beta");
    const int64_t S = vx.numel() / (N * C);
    const int64_t cg = C / groups;
    const int64_t gn = cg * S;  // elements per (sample, group)

    Node n;
    n.value = Tensor(vx.shape);
    Tensor mean({N, static_cast<int64_t>(groups)}), rstd({N, static_cast<int64_t>(groups)});
    for (int64_t nn = 0; nn < N; nn++)
        for (int64_t gi = 0; gi < groups; gi++) {
            const double* src = vx.ptr() + (nn * C + gi * cg) * S;
            double m = 0.0;
            for (int64_t i = 0; i < gn; i++) m += src[i];
            m /= static_cast<double>(gn);
            double var = 0.0;
            for (int64_t i = 0; i < gn; i++) {
                double dv = src[i] - m;
                var += dv * dv;
            }
            var /= static_cast<double>(gn);
            double rs = 1.0 / std::sqrt(var + eps);
            mean[nn * groups + gi] = m;
            rstd[nn * groups + gi] = rs;
            double* dst = n.value.ptr() + (nn * C + gi * cg) * S;
            for (int64_t c = 0; c < cg; c++) {
                double ga = vg[gi * cg + c], be = vb[gi * cg + c];
                for (int64_t i = 0; i < S; i++) dst[c * S + i] = (src[c * S + i] - m) * rs * ga + be;
            }
        }
    n.needs_grad = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [x, gamma, beta, out, N, C, S, cg, groups, mean, rstd](Graph& g) {
            const Tensor& go = g.grad(out);
            const Tensor& vx2 = g.val(x);
            const Tensor& vg2 = g.val(gamma);
            const int64_t gn = cg * S;
            for (int64_t nn = 0; nn < N; nn++)
                for (int64_t gi = 0; gi < groups; gi++) {
                    const double* xs = vx2.ptr() + (nn * C + gi * cg) * S;
                    const double* dys = go.ptr() + (nn * C + gi * cg) * S;
                    double m = mean[nn * groups + gi], rs = rstd[nn * groups + gi];
                    // dyhat = dy*gamma; need sums of dyhat and dyhat*xhat
                    double sum_dyh = 0.0, sum_dyh_xh = 0.0;
                    for (int64_t c = 0; c < cg; c++) {
                        double ga = vg2[gi * cg + c];
                        for (int64_t i = 0; i < S; i++) {
                            double xh = (xs[c * S + i] - m) * rs;
                            double dyh = dys[c * S + i] * ga;
                            sum_dyh += dyh;
                            sum_dyh_xh += dyh * xh;
                        }
                    }
                    if (g.needs_grad(gamma) || g.needs_grad(beta)) {
                        for (int64_t c = 0; c < cg; c++) {
                            double dg = 0.0, db = 0.0;
                            for (int64_t i = 0; i < S; i++) {
                                double xh = (xs[c * S + i] - m) * rs;
                                dg += dys[c * S + i] * xh;
                                db += dys[c * S + i];
                            }
                            if (g.needs_grad(gamma)) g.grad(gamma)[gi * cg + c] += dg;
                            if (g.needs_grad(beta)) g.grad(beta)[gi * cg + c] += db;
                        }
                    }
                    if (g.needs_grad(x)) {
                        Tensor& gx = g.grad(x);
                        double* gxs = gx.ptr() + (nn * C + gi * cg) * S;
                        double inv_n = 1.0 / static_cast<double>(gn);
                        for (int64_t c = 0; c < cg; c++) {
                            double ga = vg2[gi * cg + c];
                            for (int64_t i = 0; i < S; i++) {
                                double xh = (xs[c * S + i] - m) * rs;
                                double dyh = dys[c * S + i] * ga;
                                gxs[c * S + i] += rs * (dyh - inv_n * sum_dyh - xh * inv_n * sum_dyh_xh);
                            }
                        }
                    }
                }
        };
    return out;
}

int Graph::layer_norm(int x, int gamma, int beta, double eps) {
    const Tensor& vx = val(x);
    const int64_t D = vx.shape.back();
    const Tensor& vg = val(gamma);
    const Tensor& vb = val(beta);
    check(vg.numel() == D && vb.numel() == D, "layer_norm: bad gamma/beta");
    const int64_t rows = vx.numel() / D;

    Node n;
    n.value = Tensor(vx.shape);
    Tensor mean({rows}), rstd({rows});
    for (int64_t r = 0; r < rows; r++) {
        const double* src = vx.ptr() + r * D;
        double m = 0.0;
        for (int64_t i = 0; i < D; i++) m += src[i];
        m /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t i = 0; i < D; i++) {
            double dv = src[i] - m;
            var += dv * dv;
        }
        var /= static_cast<double>(D);
        double rs = 1.0 / std::sqrt(var + eps);
        mean[r] = m;
        rstd[r] = rs;
        double* dst = n.value.ptr() + r * D;
        for (int64_t i = 0; i < D; i++) dst[i] = (src[i] - m) * rs * vg[i] + vb[i];
    }
    n.needs_grad = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [x, gamma, beta, out, rows, D, mean, rstd](Graph& g) {
            const Tensor& go = g.grad(out);
            const Tensor& vx2 = g.val(x);
            const Tensor& vg2 = g.val(gamma);
            for (int64_t r = 0; r < rows; r++) {
                const double* xs = vx2.ptr() + r * D;
                const double* dys = go.ptr() + r * D;
                double m = mean[r], rs = rstd[r];
                double sum_dyh = 0.0, sum_dyh_xh = 0.0;
                for (int64_t i = 0; i < D; i++) {
                    double xh = (xs[i] - m) * rs;
                    double dyh = dys[i] * vg2[i];
                    sum_dyh += dyh;
                    sum_dyh_xh += dyh * xh;
                }
                if (g.needs_grad(gamma)) {
                    Tensor& gg = g.grad(gamma);
                    for (int64_t i = 0; i < D; i++) gg[i] += dys[i] * (xs[i] - m) * rs;
                }
                if (g.needs_grad(beta)) {
                    Tensor& gb = g.grad(beta);
                    for (int64_t i = 0; i < D; i++) gb[i] += dys[i];
                }
                if (g.needs_grad(x)) {
                    Tensor& gx = g.grad(x);
                    double* gxs = gx.ptr() + r * D;
                    double inv_d = 1.0 / static_cast<double>(D);
                    for (int64_t i = 0; i < D; i++) {
                        double xh = (xs[i] - m) * rs;
                        double dyh = dys[i] * vg2[i];
                        gxs[i] += rs * (dyh - inv_d * sum_dyh - xh * inv_d * sum_dyh_xh);
                    }
                }
            }
        };
    return out;
}

int Graph::softmax_lastdim(int x) {
    const Tensor& vx = val(x);
    const int64_t D = vx.shape.back();
    const int64_t rows = vx.numel() / D;
    Node n;
    n.value = Tensor(vx.shape);
    for (int64_t r = 0; r < rows; r++) {
        Eigen::Map<const Eigen::ArrayXd> src(vx.ptr() + r * D, D);
        Eigen::Map<Eigen::ArrayXd> dst(n.value.ptr() + r * D, D);
        dst = (src - src.maxCoeff()).exp();
        dst /= dst.sum();
    }
    n.needs_grad = needs_grad(x);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [x, out, rows, D](Graph& g) {
            const Tensor& go = g.grad(out);
            const Tensor& y = g.val(out);
            Tensor& gx = g.grad(x);
            for (int64_t r = 0; r < rows; r++) {
                const double* ys = y.ptr() + r * D;
                const double* dys = go.ptr() + r * D;
                double dot = 0.0;
                for (int64_t i = 0; i < D; i++) dot += dys[i] * ys[i];
                double* gxs = gx.ptr() + r * D;
                for (int64_t i = 0; i < D; i++) gxs[i] += ys[i] * (dys[i] - dot);
            }
        };
    return out;
}

int Graph::add_attn_bias(int logits, int bias) {
    const Tensor& vl = val(logits);
    const Tensor& vb = val(bias);
    check(vl.rank() == 3 && vb.rank() == 2, "add_attn_bias: expect logits [B*h,N,L], bias [B,L]");
    const int64_t BH = vl.shape[0], Nq = vl.shape[1], L = vl.shape[2];
    const int64_t B = vb.shape[0];
    check(vb.shape[1] == L && BH % B == 0, "add_attn_bias: incompatible shapes");
    const int64_t h = BH / B;
    Node n;
    n.value = Tensor(vl.shape);
    for (int64_t bh = 0; bh < BH; bh++) {
        const double* bs = vb.ptr() + (bh / h) * L;
        for (int64_t q = 0; q < Nq; q++) {
            const double* src = vl.ptr() + (bh * Nq + q) * L;
            double* dst = n.value.ptr() + (bh * Nq + q) * L;
            for (int64_t i = 0; i < L; i++) dst[i] = src[i] + bs[i];
        }
    }
    n.needs_grad = needs_grad(logits);  // bias is a constant mask
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [logits, out](Graph& g) {
            const Tensor& go = g.grad(out);
            Tensor& gl = g.grad(logits);
            for (int64_t i = 0; i < go.numel(); i++) gl[i] += go[i];
        };
    return out;
}

// ---- reductions / losses ----

int Graph::mean_all(int x) {
    const Tensor& vx = val(x);
    Node n;
    n.value = Tensor::scalar(0.0);
    double acc = 0.0;
    for (int64_t i = 0; i < vx.numel(); i++) acc += vx[i];
    n.value.data[0] = acc / static_cast<double>(vx.numel());
    n.needs_grad = needs_grad(x);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [x, out](Graph& g) {
            double go = g.grad(out)[0] / static_cast<double>(g.val(x).numel());
            Tensor& gx = g.grad(x);
            for (int64_t i = 0; i < gx.numel(); i++) gx[i] += go;
        };
    return out;
}

int Graph::mse(int a, int b) {
    check(val(a).same_shape(val(b)), "mse: shape mismatch");
    Node n;
    n.value = Tensor::scalar(0.0);
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    double acc = 0.0;
    for (int64_t i = 0; i < va.numel(); i++) {
        double d = va[i] - vb[i];
        acc += d * d;
    }
    n.value.data[0] = acc / static_cast<double>(va.numel());
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, b, out](Graph& g) {
            const Tensor& va2 = g.val(a);
            const Tensor& vb2 = g.val(b);
            double go = 2.0 * g.grad(out)[0] / static_cast<double>(va2.numel());
            if (g.needs_grad(a)) {
                Tensor& ga = g.grad(a);
                for (int64_t i = 0; i < va2.numel(); i++) ga[i] += go * (va2[i] - vb2[i]);
            }
            if (g.needs_grad(b)) {
                Tensor& gb = g.grad(b);
                for (int64_t i = 0; i < va2.numel(); i++) gb[i] -= go * (va2[i] - vb2[i]);
            }
        };
    return out;
}

// ---- contrastive-similarity pieces ----

int Graph::pool_rows(int tokens, int w) {
    const Tensor& vt = val(tokens);
    const Tensor& vw = val(w);
    check(vt.rank() == 3 && vw.rank() == 2, "pool_rows: expect tokens [B,N,D], w [B,N]");
    check(vt.shape[0] == vw.shape[0] && vt.shape[1] == vw.shape[1], "pool_rows: B/N mismatch");
    const int64_t B = vt.shape[0], N = vt.shape[1], D = vt.shape[2];
    Node n;
    n.value = Tensor({B, D});
    for (int64_t b = 0; b < B; b++)
        for (int64_t t = 0; t < N; t++) {
            double wt = vw[b * N + t];
            const double* src = vt.ptr() + (b * N + t) * D;
            double* dst = n.value.ptr() + b * D;
            for (int64_t i = 0; i < D; i++) dst[i] += wt * src[i];
        }
    n.needs_grad = needs_grad(tokens) || needs_grad(w);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [tokens, w, out, B, N, D](Graph& g) {
            const Tensor& go = g.grad(out);
            const Tensor& vt2 = g.val(tokens);
            const Tensor& vw2 = g.val(w);
            for (int64_t b = 0; b < B; b++) {
                const double* gob = go.ptr() + b * D;
                for (int64_t t = 0; t < N; t++) {
                    if (g.needs_grad(tokens)) {
                        double wt = vw2[b * N + t];
                        double* gt = g.grad(tokens).ptr() + (b * N + t) * D;
                        for (int64_t i = 0; i < D; i++) gt[i] += wt * gob[i];
                    }
                    if (g.needs_grad(w)) {
                        const double* src = vt2.ptr() + (b * N + t) * D;
                        double acc = 0.0;
                        for (int64_t i = 0; i < D; i++) acc += src[i] * gob[i];
                        g.grad(w)[b * N + t] += acc;
                    }
                }
            }
        };
    return out;
}

namespace {
inline double vnorm(const double* v, int64_t d) {
    double acc = 0.0;
    for (int64_t i = 0; i < d; i++) acc += v[i] * v[i];
    return std::sqrt(acc);
}
inline double vdot(const double* a, const double* b, int64_t d) {
    double acc = 0.0;
    for (int64_t i = 0; i < d; i++) acc += a[i] * b[i];
    return acc;
}
}  // namespace

int Graph::weighted_cos_sim(int tokens, int w, int pools) {
    const Tensor& vt = val(tokens);
    const Tensor& vw = val(w);
    const Tensor& vp = val(pools);
    check(vt.rank() == 3 && vw.rank() == 2 && vp.rank() == 2, "weighted_cos_sim: bad ranks");
    const int64_t B = vt.shape[0], N = vt.shape[1], D = vt.shape[2];
    check(vw.shape[0] == B && vw.shape[1] == N && vp.shape[1] == D, "weighted_cos_sim: shape mismatch");
    const int64_t Bp = vp.shape[0];
    constexpr double kEps = 1e-12;

    Node n;
    n.value = Tensor({B, Bp});
    for (int64_t i = 0; i < B; i++)
        for (int64_t j = 0; j < Bp; j++) {
            const double* pj = vp.ptr() + j * D;
            double pn = vnorm(pj, D) + kEps;
            double acc = 0.0;
            for (int64_t t = 0; t < N; t++) {
                const double* at = vt.ptr() + (i * N + t) * D;
                double an = vnorm(at, D) + kEps;
                acc += vw[i * N + t] * vdot(at, pj, D) / (an * pn);
            }
            n.value[i * Bp + j] = acc;
        }
    n.needs_grad = needs_grad(tokens) || needs_grad(w) || needs_grad(pools);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [tokens, w, pools, out, B, N, D, Bp](Graph& g) {
            constexpr double kEps = 1e-12;
            const Tensor& go = g.grad(out);
            const Tensor& vt2 = g.val(tokens);
            const Tensor& vw2 = g.val(w);
            const Tensor& vp2 = g.val(pools);
            for (int64_t i = 0; i < B; i++)
                for (int64_t j = 0; j < Bp; j++) {
                    double gij = go[i * Bp + j];
                    if (gij == 0.0) continue;
                    const double* pj = vp2.ptr() + j * D;
                    double pn = vnorm(pj, D) + kEps;
                    for (int64_t t = 0; t < N; t++) {
                        const double* at = vt2.ptr() + (i * N + t) * D;
                        double an = vnorm(at, D) + kEps;
                        double dot = vdot(at, pj, D);
                        double cosv = dot / (an * pn);
                        double wt = vw2[i * N + t];
                        if (g.needs_grad(w)) g.grad(w)[i * N + t] += gij * cosv;
                        if (g.needs_grad(tokens)) {
                            double* gt = g.grad(tokens).ptr() + (i * N + t) * D;
                            double c1 = gij * wt / (an * pn);
                            double c2 = gij * wt * dot / (an * an * an * pn);
                            for (int64_t q = 0; q < D; q++) gt[q] += c1 * pj[q] - c2 * at[q];
                        }
                        if (g.needs_grad(pools)) {
                            double* gp = g.grad(pools).ptr() + j * D;
                            double c1 = gij * wt / (an * pn);
                            double c2 = gij * wt * dot / (an * pn * pn * pn);
                            for (int64_t q = 0; q < D; q++) gp[q] += c1 * at[q] - c2 * pj[q];
                        }
                    }
                }
        };
    return out;
}

int Graph::cos_matrix(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check(va.rank() == 2 && vb.rank() == 2 && va.shape[1] == vb.shape[1], "cos_matrix: bad shapes");
    const int64_t Ba = va.shape[0], Bb = vb.shape[0], D = va.shape[1];
    constexpr double kEps = 1e-12;
    Node n;
    n.value = Tensor({Ba, Bb});
    for (int64_t i = 0; i < Ba; i++)
        for (int64_t j = 0; j < Bb; j++) {
            const double* ai = va.ptr() + i * D;
            const double* bj = vb.ptr() + j * D;
            n.value[i * Bb + j] = vdot(ai, bj, D) / ((vnorm(ai, D) + kEps) * (vnorm(bj, D) + kEps));
        }
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [a, b, out, Ba, Bb, D](Graph& g) {
            constexpr double kEps = 1e-12;
            const Tensor& go = g.grad(out);
            const Tensor& va2 = g.val(a);
            const Tensor& vb2 = g.val(b);
            for (int64_t i = 0; i < Ba; i++)
                for (int64_t j = 0; j < Bb; j++) {
                    double gij = go[i * Bb + j];
                    if (gij == 0.0) continue;
                    const double* ai = va2.ptr() + i * D;
                    const double* bj = vb2.ptr() + j * D;
                    double an = vnorm(ai, D) + kEps, bn = vnorm(bj, D) + kEps;
                    double dot = vdot(ai, bj, D);
                    if (g.needs_grad(a)) {
                        double* ga = g.grad(a).ptr() + i * D;
                        double c1 = gij / (an * bn), c2 = gij * dot / (an * an * an * bn);
                        for (int64_t q = 0; q < D; q++) ga[q] += c1 * bj[q] - c2 * ai[q];
                    }
                    if (g.needs_grad(b)) {
                        double* gb = g.grad(b).ptr() + j * D;
                        double c1 = gij / (an * bn), c2 = gij * dot / (an * bn * bn * bn);
                        for (int64_t q = 0; q < D; q++) gb[q] += c1 * ai[q] - c2 * bj[q];
                    }
                }
        };
    return out;
}

int Graph::cross_entropy_diag(int logits) {
    const Tensor& vl = val(logits);
    check(vl.rank() == 2 && vl.shape[0] == vl.shape[1], "cross_entropy_diag: expect square [B,B]");
    const int64_t B = vl.shape[0];
    Node n;
    n.value = Tensor::scalar(0.0);
    double acc = 0.0;
    for (int64_t i = 0; i < B; i++) {
        const double* row = vl.ptr() + i * B;
        double mx = row[0];
        for (int64_t j = 1; j < B; j++) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < B; j++) sum += std::exp(row[j] - mx);
        acc += mx + std::log(sum) - row[i];
    }
    n.value.data[0] = acc / static_cast<double>(B);
    n.needs_grad = needs_grad(logits);
    int out = push(std::move(n));
    if (node(out).needs_grad)
        node(out).back = [logits, out, B](Graph& g) {
            double go = g.grad(out)[0] / static_cast<double>(B);
            const Tensor& vl2 = g.val(logits);
            Tensor& gl = g.grad(logits);
            for (int64_t i = 0; i < B; i++) {
                const double* row = vl2.ptr() + i * B;
                double mx = row[0];
                for (int64_t j = 1; j < B; j++) mx = std::max(mx, row[j]);
                double sum = 0.0;
                for (int64_t j = 0; j < B; j++) sum += std::exp(row[j] - mx);
                for (int64_t j = 0; j < B; j++) {
                    double p = std::exp(row[j] - mx) / sum;
                    gl[i * B + j] += go * (p - (j == i ? 1.0 : 0.0));
                }
            }
        };
    return out;
}

}  // namespace avldm
