#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "mome/rng.hpp"
#include "mome/tensor.hpp"

namespace mome::testsupport {

using LeafInits = std::vector<std::pair<Shape, std::vector<double>>>;
// Rebuilds the graph from scratch for every probe, so the checked path is
// exactly the production forward.
using BuildFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1.0);
}

struct GradCheckResult {
    double max_rel_err = 0.0;
};

// Central finite differences (h = 1e-5 by default) against the analytic
// gradients of every leaf.
inline GradCheckResult gradcheck(LeafInits inits, const BuildFn& build, double h = 1e-5) {
    Tape tape(true);
    std::vector<Tensor> leaves;
    leaves.reserve(inits.size());
    for (auto& [shape, vals] : inits) leaves.push_back(tape.leaf(shape, vals));
    Tensor loss = build(tape, leaves);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& t : leaves) {
        auto g = t.grad();
        analytic.emplace_back(g.begin(), g.end());
    }

    auto eval = [&](const LeafInits& vals) {
        Tape probe(false);
        std::vector<Tensor> ls;
        ls.reserve(vals.size());
        for (const auto& [shape, v] : vals) ls.push_back(probe.leaf(shape, v));
        return build(probe, ls).scalar();
    };

    GradCheckResult res;
    for (std::size_t li = 0; li < inits.size(); ++li) {
        for (std::size_t j = 0; j < inits[li].second.size(); ++j) {
            LeafInits plus = inits;
            LeafInits minus = inits;
            plus[li].second[j] += h;
            minus[li].second[j] -= h;
            const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[li][j], numeric));
        }
    }
    return res;
}

inline std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Gradcheck against named parameters in a store; `build` must bind what it
// needs through the provided Binding.
inline GradCheckResult param_gradcheck(ParamStore& store, const std::vector<std::string>& names,
                                       const std::function<Tensor(Tape&, Binding&)>& build,
                                       double h = 1e-5) {
    store.zero_grad();
    {
        Tape tape(true);
        Binding binding(tape);
        Tensor loss = build(tape, binding);
        tape.backward(loss);
        binding.accumulate();
    }
    std::vector<std::vector<double>> analytic;
    for (const auto& name : names) analytic.push_back(store.at(name).grad);

    auto eval = [&] {
        Tape tape(false);
        Binding binding(tape);
        return build(tape, binding).scalar();
    };
    GradCheckResult res;
    for (std::size_t ni = 0; ni < names.size(); ++ni) {
        Param& p = store.at(names[ni]);
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double keep = p.value[j];
            p.value[j] = keep + h;
            const double up = eval();
            p.value[j] = keep - h;
            const double down = eval();
            p.value[j] = keep;
            const double numeric = (up - down) / (2.0 * h);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[ni][j], numeric));
        }
    }
    return res;
}

}  // namespace mome::testsupport
