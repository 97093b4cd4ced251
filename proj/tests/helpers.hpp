#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tensor.hpp"

namespace avldm::test {

// Central-difference gradient check for a scalar-valued graph function.
// build() must construct the graph from the given leaf ids and return the
// loss node. Returns the worst symmetric relative error over all input
// elements.
inline double max_rel_grad_err(std::vector<Tensor> inputs,
                               const std::function<int(Graph&, const std::vector<int>&)>& build,
                               double h = 1e-5) {
    auto eval = [&](const std::vector<Tensor>& xs) {
        Graph g;
        std::vector<int> ids;
        for (const auto& x : xs) ids.push_back(g.input(x));
        int loss = build(g, ids);
        return g.val(loss)[0];
    };

    Graph g;
    std::vector<int> ids;
    for (const auto& x : inputs) ids.push_back(g.leaf(x));
    int loss = build(g, ids);
    g.backward(loss);

    double worst = 0.0;
    for (size_t k = 0; k < inputs.size(); k++) {
        const Tensor& analytic = g.grad(ids[k]);
        for (int64_t i = 0; i < inputs[k].numel(); i++) {
            std::vector<Tensor> xs = inputs;
            xs[k][i] += h;
            double fp = eval(xs);
            xs[k][i] -= 2 * h;
            double fm = eval(xs);
            double numeric = (fp - fm) / (2 * h);
            double a = analytic[i];
            double denom = std::max(1e-6, std::abs(a) + std::abs(numeric));
            double rel = std::abs(a - numeric) / denom;
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); i++) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace avldm::test
