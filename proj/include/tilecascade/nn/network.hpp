#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tilecascade/error.hpp"
#include "tilecascade/nn/layers.hpp"
#include "tilecascade/nn/tensor.hpp"
#include "tilecascade/rng.hpp"

namespace tilecascade::nn {

// One flat value array per parameter tensor, in declaration order: for each
// layer with parameters, its weight then its bias.
template <class T>
using ParamSet = std::vector<std::vector<T>>;

using Gradients = ParamSet<float>;
using Velocity = ParamSet<float>;

namespace detail {
inline std::uint64_t next_lineage() noexcept
{
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

class Network {
public:
    Network() = default;

    // Validates that the layer chain composes for `input` (channels and
    // nominal spatial size) and He-initializes weights from `seed`.
    Network(std::vector<LayerSpec> layers, Shape input, std::uint64_t seed)
        : layers_(std::move(layers)), input_(input), seed_(seed)
    {
        input_.n = 1;
        output_ = infer_output(input_);
        index_params();
        Rng rng(seed_);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& spec = layers_[l];
            if (!spec.has_params()) {
                continue;
            }
            auto& w = params_[first_param_[l]];
            const double stddev = std::sqrt(2.0 / static_cast<double>(spec.fan_in()));
            for (auto& v : w) {
                v = static_cast<float>(rng.normal() * stddev);
            }
        }
    }

    // Rebuilds from explicit parameter values (checkpoint loading).
    Network(std::vector<LayerSpec> layers, Shape input, std::uint64_t seed, ParamSet<float> params)
        : layers_(std::move(layers)), input_(input), seed_(seed)
    {
        input_.n = 1;
        output_ = infer_output(input_);
        index_params();
        if (params.size() != params_.size()) {
            throw ValidationError("network: expected " + std::to_string(params_.size()) + " parameter tensors, got "
                                  + std::to_string(params.size()));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].size() != params_[i].size()) {
                throw ValidationError("network: parameter " + std::to_string(i) + " has wrong size");
            }
        }
        params_ = std::move(params);
    }

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    const ParamSet<float>& params() const noexcept { return params_; }
    ParamSet<float>& mutable_params() noexcept
    {
        ++generation_;
        return params_;
    }
    Shape nominal_input() const noexcept { return input_; }
    Shape nominal_output() const noexcept { return output_; }
    std::uint64_t seed() const noexcept { return seed_; }

    std::size_t parameter_count() const noexcept
    {
        std::size_t n = 0;
        for (const auto& p : params_) {
            n += p.size();
        }
        return n;
    }

    // Index of the weight tensor of layer l in params(); bias follows it.
    // -1 for layers without parameters.
    int first_param(std::size_t layer) const noexcept { return first_param_[layer]; }

    std::vector<std::vector<std::uint32_t>> param_shapes() const
    {
        std::vector<std::vector<std::uint32_t>> shapes;
        for (const auto& spec : layers_) {
            if (spec.has_params()) {
                shapes.push_back(spec.weight_shape());
                shapes.push_back(spec.bias_shape());
            }
        }
        return shapes;
    }

    // Output shape for an arbitrary input shape; throws on mismatch.
    Shape infer_output(Shape in) const
    {
        for (const auto& spec : layers_) {
            in = spec.output_shape(in);
        }
        return in;
    }

    // Identifies this parameter state; used to reject stale traces.
    std::pair<std::uint64_t, std::uint64_t> state_tag() const noexcept { return {lineage_, generation_}; }

private:
    void index_params()
    {
        params_.clear();
        first_param_.assign(layers_.size(), -1);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& spec = layers_[l];
            spec.validate();
            if (!spec.has_params()) {
                continue;
            }
            first_param_[l] = static_cast<int>(params_.size());
            std::size_t wn = 1;
            for (auto d : spec.weight_shape()) wn *= d;
            std::size_t bn = 1;
            for (auto d : spec.bias_shape()) bn *= d;
            params_.emplace_back(wn, 0.0f);
            params_.emplace_back(bn, 0.0f);
        }
    }

    std::vector<LayerSpec> layers_;
    Shape input_{};
    Shape output_{};
    std::uint64_t seed_ = 0;
    ParamSet<float> params_;
    std::vector<int> first_param_;
    std::uint64_t lineage_ = detail::next_lineage();
    std::uint64_t generation_ = 0;
};

// Cached activations of one forward pass: inputs[l] is the input of layer l,
// inputs.back() is the network output.
template <class T>
struct BasicTrace {
    std::vector<BasicTensor<T>> inputs;
    std::vector<std::vector<std::uint32_t>> argmax;
    std::pair<std::uint64_t, std::uint64_t> tag{0, 0};

    const BasicTensor<T>& output() const
    {
        if (inputs.empty()) {
            throw StateError("trace is empty");
        }
        return inputs.back();
    }
};

using Trace = BasicTrace<float>;

template <class T>
struct BackwardResult {
    ParamSet<T> param_grads;
    BasicTensor<T> grad_in;
};

// Shared forward/backward over an explicit parameter set, so the float
// network and its double-precision shadow run the same code.
template <class T>
BasicTensor<T> run_forward(const std::vector<LayerSpec>& layers, const std::vector<int>& first_param,
                           const ParamSet<T>& params, BasicTensor<T> x, BasicTrace<T>* trace)
{
    if (trace) {
        trace->inputs.clear();
        trace->argmax.assign(layers.size(), {});
        trace->inputs.reserve(layers.size() + 1);
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& spec = layers[l];
        BasicTensor<T> y;
        switch (spec.kind) {
        case LayerKind::conv2d:
            y = kernels::conv_forward(spec, x, params[first_param[l]], params[first_param[l] + 1]);
            break;
        case LayerKind::relu: y = kernels::relu_forward(x); break;
        case LayerKind::maxpool2: y = kernels::maxpool_forward(x, trace ? &trace->argmax[l] : nullptr); break;
        case LayerKind::flatten:
            y.shape = spec.output_shape(x.shape);
            y.values = x.values;
            break;
        case LayerKind::fc: y = kernels::fc_forward(spec, x, params[first_param[l]], params[first_param[l] + 1]); break;
        }
        if (trace) {
            trace->inputs.push_back(std::move(x));
        }
        x = std::move(y);
    }
    if (trace) {
        trace->inputs.push_back(x);
    }
    return x;
}

template <class T>
BackwardResult<T> run_backward(const std::vector<LayerSpec>& layers, const std::vector<int>& first_param,
                               const ParamSet<T>& params, const BasicTrace<T>& trace, BasicTensor<T> grad,
                               bool need_grad_in)
{
    if (trace.inputs.size() != layers.size() + 1) {
        throw StateError("backward: activation cache missing or from a different network");
    }
    if (grad.shape != trace.inputs.back().shape) {
        throw ValidationError("backward: grad_out shape " + grad.shape.str() + " does not match output "
                              + trace.inputs.back().shape.str());
    }
    BackwardResult<T> res;
    res.param_grads.resize(params.size());
    for (std::size_t li = layers.size(); li-- > 0;) {
        const auto& spec = layers[li];
        const auto& x = trace.inputs[li];
        const bool want_in = need_grad_in || li > 0;
        BasicTensor<T> gin;
        switch (spec.kind) {
        case LayerKind::conv2d: {
            const int p = first_param[li];
            kernels::conv_backward(spec, x, params[p], grad, res.param_grads[p], res.param_grads[p + 1],
                                   want_in ? &gin : nullptr);
            break;
        }
        case LayerKind::fc: {
            const int p = first_param[li];
            kernels::fc_backward(spec, x, params[p], grad, res.param_grads[p], res.param_grads[p + 1],
                                 want_in ? &gin : nullptr);
            break;
        }
        case LayerKind::relu: gin = kernels::relu_backward(x, grad); break;
        case LayerKind::maxpool2: gin = kernels::maxpool_backward(x.shape, trace.argmax[li], grad); break;
        case LayerKind::flatten:
            gin.shape = x.shape;
            gin.values = std::move(grad.values);
            break;
        }
        grad = std::move(gin);
    }
    if (need_grad_in) {
        res.grad_in = std::move(grad);
    }
    return res;
}

namespace detail {
inline std::vector<int> first_params(const Network& net)
{
    std::vector<int> fp(net.layers().size());
    for (std::size_t l = 0; l < fp.size(); ++l) {
        fp[l] = net.first_param(l);
    }
    return fp;
}

inline void require_finite(const Tensor& t, const char* what)
{
    if (!t.all_finite()) {
        throw NumericError(std::string(what) + ": non-finite values in output");
    }
}
}  // namespace detail

// Pure inference.
inline Tensor forward(const Network& net, const Tensor& input)
{
    net.infer_output(input.shape);
    auto out = run_forward(net.layers(), detail::first_params(net), net.params(), input, static_cast<Trace*>(nullptr));
    detail::require_finite(out, "forward");
    return out;
}

// Forward pass that keeps the activations needed by backward().
inline Trace forward_traced(const Network& net, const Tensor& input)
{
    net.infer_output(input.shape);
    Trace trace;
    auto out = run_forward(net.layers(), detail::first_params(net), net.params(), input, &trace);
    detail::require_finite(out, "forward");
    trace.tag = net.state_tag();
    return trace;
}

struct Backward {
    Gradients param_grads;
    Tensor grad_in;
};

// Reverse-mode gradients for the pass recorded in `trace`. The trace must
// come from this network with its current parameters.
inline Backward backward(const Network& net, const Trace& trace, const Tensor& grad_out, bool need_grad_in = true)
{
    if (trace.inputs.empty()) {
        throw StateError("backward: no cached activations (run forward_traced first)");
    }
    if (trace.tag != net.state_tag()) {
        throw StateError("backward: cached activations are stale (network changed since forward)");
    }
    auto r = run_backward(net.layers(), detail::first_params(net), net.params(), trace, grad_out, need_grad_in);
    return {std::move(r.param_grads), std::move(r.grad_in)};
}

template <class T>
struct LossResult {
    double loss = 0.0;
    BasicTensor<T> grad_logits;
};

// Mean softmax cross-entropy over a batch of (n, classes, 1, 1) logits, with
// max subtraction. grad = (softmax - onehot) / n.
template <class T>
LossResult<T> softmax_xent(const BasicTensor<T>& logits, std::span<const int> labels)
{
    const Shape& s = logits.shape;
    if (s.h != 1 || s.w != 1 || s.c < 1) {
        throw ValidationError("softmax_xent: logits must be (n, classes, 1, 1), got " + s.str());
    }
    if (labels.size() != static_cast<std::size_t>(s.n)) {
        throw ValidationError("softmax_xent: label count does not match batch size");
    }
    LossResult<T> r;
    r.grad_logits = BasicTensor<T>(s);
    double total = 0.0;
    for (int n = 0; n < s.n; ++n) {
        const int label = labels[n];
        if (label < 0 || label >= s.c) {
            throw ValidationError("softmax_xent: label " + std::to_string(label) + " out of range [0, "
                                  + std::to_string(s.c) + ")");
        }
        const T* z = logits.item(n);
        double m = static_cast<double>(z[0]);
        for (int c = 1; c < s.c; ++c) m = std::max(m, static_cast<double>(z[c]));
        double sum = 0.0;
        for (int c = 0; c < s.c; ++c) sum += std::exp(static_cast<double>(z[c]) - m);
        const double lse = m + std::log(sum);
        total += lse - static_cast<double>(z[label]);
        T* g = r.grad_logits.item(n);
        for (int c = 0; c < s.c; ++c) {
            const double p = std::exp(static_cast<double>(z[c]) - lse);
            g[c] = static_cast<T>((p - (c == label ? 1.0 : 0.0)) / s.n);
        }
    }
    r.loss = total / s.n;
    if (!std::isfinite(r.loss)) {
        throw NumericError("softmax_xent: non-finite loss");
    }
    return r;
}

inline LossResult<float> softmax_xent(const Tensor& logits, const std::vector<int>& labels)
{
    return softmax_xent<float>(logits, std::span<const int>(labels));
}

// Softmax probability of class `cls` at every (n, y, x) of a logit map.
inline std::vector<float> softmax_prob(const Tensor& logits, int cls)
{
    const Shape& s = logits.shape;
    std::vector<float> out(static_cast<std::size_t>(s.n) * s.plane());
    std::size_t k = 0;
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t p = 0; p < s.plane(); ++p, ++k) {
            double m = -INFINITY;
            for (int c = 0; c < s.c; ++c) m = std::max(m, static_cast<double>(logits.item(n)[c * s.plane() + p]));
            double sum = 0.0;
            for (int c = 0; c < s.c; ++c) sum += std::exp(static_cast<double>(logits.item(n)[c * s.plane() + p]) - m);
            out[k] = static_cast<float>(std::exp(static_cast<double>(logits.item(n)[cls * s.plane() + p]) - m) / sum);
        }
    }
    return out;
}

inline Velocity make_velocity(const Network& net)
{
    Velocity v;
    for (const auto& p : net.params()) {
        v.emplace_back(p.size(), 0.0f);
    }
    return v;
}

// v <- momentum * v - lr * g;  p <- p + v.
inline void sgd_step(Network& net, const Gradients& grads, float lr, float momentum, Velocity& velocity)
{
    const auto& cur = net.params();
    if (grads.size() != cur.size() || velocity.size() != cur.size()) {
        throw ValidationError("sgd_step: gradient/velocity tensor count does not match parameters");
    }
    for (std::size_t i = 0; i < cur.size(); ++i) {
        if (grads[i].size() != cur[i].size() || velocity[i].size() != cur[i].size()) {
            throw ValidationError("sgd_step: shape mismatch in parameter " + std::to_string(i));
        }
    }
    auto& params = net.mutable_params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& v = velocity[i];
        const auto& g = grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            v[k] = momentum * v[k] - lr * g[k];
            p[k] = p[k] + v[k];
        }
    }
}

}  // namespace tilecascade::nn
