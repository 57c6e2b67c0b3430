#pragma once

// Layer specifications and the per-layer numeric kernels. Kernels are
// templated on the scalar type so the gradient checker can run the exact same
// code in double precision.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tilecascade/error.hpp"
#include "tilecascade/nn/tensor.hpp"

namespace tilecascade::nn {

enum class LayerKind : std::uint8_t { conv2d = 1, relu = 2, maxpool2 = 3, fc = 4, flatten = 5 };

inline std::string_view to_string(LayerKind k) noexcept
{
    switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2: return "maxpool2";
    case LayerKind::fc: return "fc";
    case LayerKind::flatten: return "flatten";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    // conv2d
    std::uint32_t in_ch = 0;
    std::uint32_t out_ch = 0;
    std::uint32_t kernel = 0;
    std::uint32_t stride = 1;
    std::uint32_t pad = 0;
    // fc
    std::uint32_t in_dim = 0;
    std::uint32_t out_dim = 0;

    static LayerSpec conv(std::uint32_t in, std::uint32_t out, std::uint32_t kernel, std::uint32_t pad)
    {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.in_ch = in;
        s.out_ch = out;
        s.kernel = kernel;
        s.pad = pad;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{}; }
    static LayerSpec maxpool2()
    {
        LayerSpec s;
        s.kind = LayerKind::maxpool2;
        return s;
    }
    static LayerSpec flatten()
    {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        return s;
    }
    static LayerSpec fc(std::uint32_t in, std::uint32_t out)
    {
        LayerSpec s;
        s.kind = LayerKind::fc;
        s.in_dim = in;
        s.out_dim = out;
        return s;
    }

    bool has_params() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::fc; }

    std::vector<std::uint32_t> weight_shape() const
    {
        if (kind == LayerKind::conv2d) return {out_ch, in_ch, kernel, kernel};
        if (kind == LayerKind::fc) return {out_dim, in_dim};
        return {};
    }
    std::vector<std::uint32_t> bias_shape() const
    {
        if (kind == LayerKind::conv2d) return {out_ch};
        if (kind == LayerKind::fc) return {out_dim};
        return {};
    }
    std::size_t fan_in() const noexcept
    {
        return kind == LayerKind::conv2d ? static_cast<std::size_t>(in_ch) * kernel * kernel : in_dim;
    }

    void validate() const
    {
        switch (kind) {
        case LayerKind::conv2d:
            if (in_ch == 0 || out_ch == 0) throw ValidationError("conv2d: channel counts must be positive");
            if (kernel != 1 && kernel != 3) throw ValidationError("conv2d: kernel must be 1 or 3");
            if (stride != 1) throw ValidationError("conv2d: only stride 1 is supported");
            if (pad > 1) throw ValidationError("conv2d: pad must be 0 or 1");
            break;
        case LayerKind::fc:
            if (in_dim == 0 || out_dim == 0) throw ValidationError("fc: dimensions must be positive");
            break;
        case LayerKind::relu:
        case LayerKind::maxpool2:
        case LayerKind::flatten: break;
        default: throw ValidationError("unknown layer kind " + std::to_string(static_cast<int>(kind)));
        }
    }

    // Output shape for a given input shape; throws on incompatibility.
    Shape output_shape(const Shape& in) const
    {
        switch (kind) {
        case LayerKind::conv2d: {
            if (in.c != static_cast<int>(in_ch)) {
                throw ValidationError("conv2d expects " + std::to_string(in_ch) + " input channels, got " + in.str());
            }
            const int oh = in.h + 2 * static_cast<int>(pad) - static_cast<int>(kernel) + 1;
            const int ow = in.w + 2 * static_cast<int>(pad) - static_cast<int>(kernel) + 1;
            if (oh < 1 || ow < 1) throw ValidationError("conv2d: input " + in.str() + " too small for kernel");
            return {in.n, static_cast<int>(out_ch), oh, ow};
        }
        case LayerKind::relu: return in;
        case LayerKind::maxpool2:
            if (in.h < 2 || in.w < 2) throw ValidationError("maxpool2: input " + in.str() + " smaller than 2x2");
            return {in.n, in.c, in.h / 2, in.w / 2};
        case LayerKind::flatten: return {in.n, static_cast<int>(in.item()), 1, 1};
        case LayerKind::fc:
            if (in.h != 1 || in.w != 1 || in.c != static_cast<int>(in_dim)) {
                throw ValidationError("fc expects (n, " + std::to_string(in_dim) + ", 1, 1), got " + in.str());
            }
            return {in.n, static_cast<int>(out_dim), 1, 1};
        }
        throw ValidationError("unknown layer kind");
    }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

namespace kernels {

// Copies one item (C, H, W) into a zero-bordered (C, H + 2p, W + 2p) buffer.
template <class T>
void pad_item(const T* in, int C, int H, int W, int p, std::vector<T>& out)
{
    const int Hp = H + 2 * p;
    const int Wp = W + 2 * p;
    out.assign(static_cast<std::size_t>(C) * Hp * Wp, T{0});
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            const T* src = in + (static_cast<std::size_t>(c) * H + y) * W;
            T* dst = out.data() + (static_cast<std::size_t>(c) * Hp + y + p) * Wp + p;
            std::copy(src, src + W, dst);
        }
    }
}

// Valid correlation of a pre-padded item. For every output element the sum
// is formed as bias, then + w*x over (in_channel, dy, dx) in lexicographic
// order. This is the same order as the textbook six-loop reference, so the
// result is bitwise reproducible against it. The loops below only reorder
// work across output elements, never within one element's sum.
//
// Rows are processed in the padded layout: output (y, x) lives at y*Wp + x
// and tap (dy, dx) reads input at that index + dy*Wp + dx, so every tap is a
// single contiguous axpy. Columns x >= Wo are scratch and discarded.
template <class T, int K>
void correlate_item(const T* pin, int C, int Hp, int Wp, const T* weight, const T* bias, int O, T* out)
{
    const int Ho = Hp - K + 1;
    const int Wo = Wp - K + 1;
    constexpr int KK = K * K;
    constexpr int OB = 4;
    constexpr std::size_t CHUNK = 1024;
    const std::size_t span_len = static_cast<std::size_t>(Ho - 1) * Wp + Wo;
    const std::size_t in_plane = static_cast<std::size_t>(Hp) * Wp;
    std::size_t offs[KK];
    for (int dy = 0; dy < K; ++dy) {
        for (int dx = 0; dx < K; ++dx) {
            offs[dy * K + dx] = static_cast<std::size_t>(dy) * Wp + dx;
        }
    }
    std::vector<T> ext(OB * span_len);
    for (int o0 = 0; o0 < O; o0 += OB) {
        const int nb = std::min(OB, O - o0);
        for (int b = 0; b < OB; ++b) {
            std::fill(ext.begin() + b * span_len, ext.begin() + (b + 1) * span_len,
                      (b < nb && bias) ? bias[o0 + b] : T{0});
        }
        for (std::size_t c0 = 0; c0 < span_len; c0 += CHUNK) {
            const std::size_t len = std::min(CHUNK, span_len - c0);
            T* __restrict e0 = ext.data() + c0;
            T* __restrict e1 = e0 + span_len;
            T* __restrict e2 = e1 + span_len;
            T* __restrict e3 = e2 + span_len;
            for (int i = 0; i < C; ++i) {
                const T* base = pin + i * in_plane + c0;
                for (int t = 0; t < KK; ++t) {
                    auto wt = [&](int b) {
                        return b < nb ? weight[(static_cast<std::size_t>(o0 + b) * C + i) * KK + t] : T{0};
                    };
                    const T w0 = wt(0), w1 = wt(1), w2 = wt(2), w3 = wt(3);
                    const T* __restrict src = base + offs[t];
                    for (std::size_t x = 0; x < len; ++x) {
                        const T v = src[x];
                        e0[x] = e0[x] + w0 * v;
                        e1[x] = e1[x] + w1 * v;
                        e2[x] = e2[x] + w2 * v;
                        e3[x] = e3[x] + w3 * v;
                    }
                }
            }
        }
        for (int b = 0; b < nb; ++b) {
            T* dst = out + static_cast<std::size_t>(o0 + b) * Ho * Wo;
            const T* src = ext.data() + b * span_len;
            for (int y = 0; y < Ho; ++y) {
                std::copy(src + static_cast<std::size_t>(y) * Wp, src + static_cast<std::size_t>(y) * Wp + Wo,
                          dst + static_cast<std::size_t>(y) * Wo);
            }
        }
    }
}

template <class T>
void correlate(const T* pin, int C, int Hp, int Wp, const T* weight, const T* bias, int O, int K, T* out)
{
    if (K == 3) {
        correlate_item<T, 3>(pin, C, Hp, Wp, weight, bias, O, out);
    } else if (K == 1) {
        correlate_item<T, 1>(pin, C, Hp, Wp, weight, bias, O, out);
    } else {
        throw ValidationError("conv2d: unsupported kernel size " + std::to_string(K));
    }
}

template <class T>
BasicTensor<T> conv_forward(const LayerSpec& spec, const BasicTensor<T>& in, const std::vector<T>& weight,
                            const std::vector<T>& bias)
{
    const Shape os = spec.output_shape(in.shape);
    BasicTensor<T> out(os);
    std::vector<T> padded;
    const int p = static_cast<int>(spec.pad);
    for (int n = 0; n < in.shape.n; ++n) {
        pad_item(in.item(n), in.shape.c, in.shape.h, in.shape.w, p, padded);
        correlate(padded.data(), in.shape.c, in.shape.h + 2 * p, in.shape.w + 2 * p, weight.data(), bias.data(), os.c,
                  static_cast<int>(spec.kernel), out.item(n));
    }
    return out;
}

// Weight and bias gradients, plus the input gradient when requested. The
// input gradient is a correlation of the (K-1-p)-padded output gradient with
// the spatially flipped, channel-transposed kernel.
template <class T>
void conv_backward(const LayerSpec& spec, const BasicTensor<T>& in, const std::vector<T>& weight,
                   const BasicTensor<T>& grad_out, std::vector<T>& grad_w, std::vector<T>& grad_b, BasicTensor<T>* grad_in)
{
    const int K = static_cast<int>(spec.kernel);
    const int p = static_cast<int>(spec.pad);
    const int C = in.shape.c;
    const int O = grad_out.shape.c;
    const int Ho = grad_out.shape.h;
    const int Wo = grad_out.shape.w;
    const int Hp = in.shape.h + 2 * p;
    const int Wp = in.shape.w + 2 * p;
    const int KK = K * K;
    grad_w.assign(weight.size(), T{0});
    grad_b.assign(static_cast<std::size_t>(O), T{0});

    // Weight gradients are dot products between the output gradient and
    // shifted input windows, taken in the padded-row layout of
    // correlate_item: gext holds grad_out with zeroed scratch columns.
    const std::size_t span_len = static_cast<std::size_t>(Ho - 1) * Wp + Wo;
    const std::size_t in_plane = static_cast<std::size_t>(Hp) * Wp;
    std::vector<T> padded;
    std::vector<T> gext(static_cast<std::size_t>(O) * span_len);
    for (int n = 0; n < in.shape.n; ++n) {
        const T* go = grad_out.item(n);
        std::fill(gext.begin(), gext.end(), T{0});
        for (int o = 0; o < O; ++o) {
            const T* g = go + static_cast<std::size_t>(o) * Ho * Wo;
            T s = T{0};
            for (std::size_t k = 0; k < static_cast<std::size_t>(Ho) * Wo; ++k) {
                s += g[k];
            }
            grad_b[o] += s;
            for (int y = 0; y < Ho; ++y) {
                std::copy(g + static_cast<std::size_t>(y) * Wo, g + static_cast<std::size_t>(y + 1) * Wo,
                          gext.begin() + static_cast<std::ptrdiff_t>(o * span_len + static_cast<std::size_t>(y) * Wp));
            }
        }
        pad_item(in.item(n), C, in.shape.h, in.shape.w, p, padded);
        for (int o0 = 0; o0 < O; o0 += 4) {
            const int nb = std::min(4, O - o0);
            // Missing rows of a partial block read row 0; their sums are dropped.
            const T* __restrict g0 = gext.data() + o0 * span_len;
            const T* __restrict g1 = gext.data() + (o0 + (nb > 1 ? 1 : 0)) * span_len;
            const T* __restrict g2 = gext.data() + (o0 + (nb > 2 ? 2 : 0)) * span_len;
            const T* __restrict g3 = gext.data() + (o0 + (nb > 3 ? 3 : 0)) * span_len;
            for (int i = 0; i < C; ++i) {
                for (int t = 0; t < KK; ++t) {
                    const T* __restrict src = padded.data() + i * in_plane + static_cast<std::size_t>(t / K) * Wp + t % K;
                    T s0 = T{0}, s1 = T{0}, s2 = T{0}, s3 = T{0};
#pragma omp simd reduction(+ : s0, s1, s2, s3)
                    for (std::size_t x = 0; x < span_len; ++x) {
                        const T v = src[x];
                        s0 += g0[x] * v;
                        s1 += g1[x] * v;
                        s2 += g2[x] * v;
                        s3 += g3[x] * v;
                    }
                    const T s[4] = {s0, s1, s2, s3};
                    for (int b = 0; b < nb; ++b) {
                        grad_w[(static_cast<std::size_t>(o0 + b) * C + i) * KK + t] += s[b];
                    }
                }
            }
        }
    }
#ifdef TILECASCADE_TEST_CORRUPT_CONV_BACKWARD
    // Mutation-testing hook: a deliberately wrong weight gradient.
    for (auto& v : grad_w) {
        v *= T(1.5);
    }
#endif

    if (!grad_in) {
        return;
    }
    // Flipped, transposed kernel: wt[i][o][K-1-dy][K-1-dx] = w[o][i][dy][dx].
    std::vector<T> wt(weight.size());
    for (int o = 0; o < O; ++o) {
        for (int i = 0; i < C; ++i) {
            for (int t = 0; t < KK; ++t) {
                wt[(static_cast<std::size_t>(i) * O + o) * KK + (KK - 1 - t)] = weight[(static_cast<std::size_t>(o) * C + i) * KK + t];
            }
        }
    }
    const int q = K - 1 - p;
    *grad_in = BasicTensor<T>(in.shape);
    std::vector<T> gpad;
    for (int n = 0; n < in.shape.n; ++n) {
        pad_item(grad_out.item(n), O, Ho, Wo, q, gpad);
        correlate(gpad.data(), O, Ho + 2 * q, Wo + 2 * q, wt.data(), static_cast<const T*>(nullptr), C, K,
                  grad_in->item(n));
    }
}

template <class T>
BasicTensor<T> relu_forward(const BasicTensor<T>& in)
{
    BasicTensor<T> out(in.shape);
    for (std::size_t i = 0; i < in.values.size(); ++i) {
        out.values[i] = in.values[i] > T{0} ? in.values[i] : T{0};
    }
    return out;
}

template <class T>
BasicTensor<T> relu_backward(const BasicTensor<T>& in, const BasicTensor<T>& grad_out)
{
    BasicTensor<T> g(in.shape);
    for (std::size_t i = 0; i < in.values.size(); ++i) {
        g.values[i] = in.values[i] > T{0} ? grad_out.values[i] : T{0};
    }
    return g;
}

// 2x2 stride-2 max pooling; odd trailing rows/columns are dropped. Ties go to
// the first element in row-major scan order. `argmax` receives, per output
// element, the flat index of the winning input element.
template <class T>
BasicTensor<T> maxpool_forward(const BasicTensor<T>& in, std::vector<std::uint32_t>* argmax)
{
    const Shape os{in.shape.n, in.shape.c, in.shape.h / 2, in.shape.w / 2};
    if (os.h < 1 || os.w < 1) {
        throw ValidationError("maxpool2: input " + in.shape.str() + " smaller than 2x2");
    }
    BasicTensor<T> out(os);
    if (argmax) {
        argmax->resize(os.count());
    }
    std::size_t k = 0;
    for (int n = 0; n < os.n; ++n) {
        for (int c = 0; c < os.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * in.shape.c + c) * in.shape.plane();
            for (int y = 0; y < os.h; ++y) {
                for (int x = 0; x < os.w; ++x, ++k) {
                    std::size_t best = base + static_cast<std::size_t>(2 * y) * in.shape.w + 2 * x;
                    const std::size_t cand[3] = {best + 1, best + in.shape.w, best + in.shape.w + 1};
                    for (std::size_t idx : cand) {
                        if (in.values[idx] > in.values[best]) {
                            best = idx;
                        }
                    }
                    out.values[k] = in.values[best];
                    if (argmax) {
                        (*argmax)[k] = static_cast<std::uint32_t>(best);
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
BasicTensor<T> maxpool_backward(const Shape& in_shape, const std::vector<std::uint32_t>& argmax, const BasicTensor<T>& grad_out)
{
    BasicTensor<T> g(in_shape);
    for (std::size_t k = 0; k < argmax.size(); ++k) {
        g.values[argmax[k]] += grad_out.values[k];
    }
    return g;
}

// out[n][o] = b[o] + sum_j W[o][j] * x[n][j], summed in j order.
template <class T>
BasicTensor<T> fc_forward(const LayerSpec& spec, const BasicTensor<T>& in, const std::vector<T>& weight,
                          const std::vector<T>& bias)
{
    const Shape os = spec.output_shape(in.shape);
    BasicTensor<T> out(os);
    const std::size_t D = spec.in_dim;
    for (int n = 0; n < in.shape.n; ++n) {
        const T* x = in.item(n);
        for (std::uint32_t o = 0; o < spec.out_dim; ++o) {
            const T* w = weight.data() + o * D;
            T a = bias[o];
            for (std::size_t j = 0; j < D; ++j) {
                a = a + w[j] * x[j];
            }
            out.at(n, static_cast<int>(o), 0, 0) = a;
        }
    }
    return out;
}

template <class T>
void fc_backward(const LayerSpec& spec, const BasicTensor<T>& in, const std::vector<T>& weight,
                 const BasicTensor<T>& grad_out, std::vector<T>& grad_w, std::vector<T>& grad_b, BasicTensor<T>* grad_in)
{
    const std::size_t D = spec.in_dim;
    grad_w.assign(weight.size(), T{0});
    grad_b.assign(spec.out_dim, T{0});
    if (grad_in) {
        *grad_in = BasicTensor<T>(in.shape);
    }
    for (int n = 0; n < in.shape.n; ++n) {
        const T* x = in.item(n);
        for (std::uint32_t o = 0; o < spec.out_dim; ++o) {
            const T g = grad_out.at(n, static_cast<int>(o), 0, 0);
            grad_b[o] += g;
            T* gw = grad_w.data() + o * D;
            for (std::size_t j = 0; j < D; ++j) {
                gw[j] += g * x[j];
            }
            if (grad_in) {
                const T* w = weight.data() + o * D;
                T* gi = grad_in->item(n);
                for (std::size_t j = 0; j < D; ++j) {
                    gi[j] += g * w[j];
                }
            }
        }
    }
}

}  // namespace kernels
}  // namespace tilecascade::nn
