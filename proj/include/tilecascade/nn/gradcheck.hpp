#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tilecascade/nn/network.hpp"

namespace tilecascade::nn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Parameters whose +/- epsilon probes flipped a relu sign or a maxpool
    // winner; the function is not differentiable across such a probe.
    std::size_t skipped = 0;
};

namespace detail {

// Fingerprint of the piecewise-linear region a forward pass landed in.
inline std::uint64_t activation_pattern(const std::vector<LayerSpec>& layers, const BasicTrace<double>& trace)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 0x100000001b3ull;
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].kind == LayerKind::relu) {
            for (double v : trace.inputs[l].values) mix(v > 0.0 ? 1 : 0);
        } else if (layers[l].kind == LayerKind::maxpool2) {
            for (auto idx : trace.argmax[l]) mix(idx);
        }
    }
    return h;
}

}  // namespace detail

// Compares analytic gradients of the mean softmax cross-entropy against
// central differences, both evaluated in float64 through the same templated
// kernels the float network uses. Returns the max over parameters of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult gradient_check(const Network& net, const Tensor& input, std::span<const int> labels,
                                      double epsilon = 1e-5)
{
    GradCheckResult res;
    if (net.parameter_count() == 0) {
        return res;
    }
    const auto& layers = net.layers();
    const auto fp = detail::first_params(net);
    ParamSet<double> params;
    for (const auto& p : net.params()) {
        params.emplace_back(p.begin(), p.end());
    }
    const auto x = input.cast<double>();

    BasicTrace<double> trace;
    auto logits = run_forward(layers, fp, params, x, &trace);
    const auto nominal = detail::activation_pattern(layers, trace);
    auto loss = softmax_xent<double>(logits, labels);
    auto analytic = run_backward(layers, fp, params, trace, loss.grad_logits, false).param_grads;

    auto probe = [&](std::uint64_t& pattern) {
        BasicTrace<double> t;
        auto z = run_forward(layers, fp, params, x, &t);
        pattern = detail::activation_pattern(layers, t);
        return softmax_xent<double>(z, labels).loss;
    };

    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t k = 0; k < params[i].size(); ++k) {
            const double saved = params[i][k];
            std::uint64_t pat_plus = 0;
            std::uint64_t pat_minus = 0;
            params[i][k] = saved + epsilon;
            const double lp = probe(pat_plus);
            params[i][k] = saved - epsilon;
            const double lm = probe(pat_minus);
            params[i][k] = saved;
            if (pat_plus != nominal || pat_minus != nominal) {
                ++res.skipped;
                continue;
            }
            const double numeric = (lp - lm) / (2.0 * epsilon);
            const double a = analytic[i][k];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            res.max_rel_error = std::max(res.max_rel_error, std::abs(a - numeric) / denom);
            ++res.checked;
        }
    }
    return res;
}

inline GradCheckResult gradient_check(const Network& net, const Tensor& input, const std::vector<int>& labels,
                                      double epsilon = 1e-5)
{
    return gradient_check(net, input, std::span<const int>(labels), epsilon);
}

}  // namespace tilecascade::nn
