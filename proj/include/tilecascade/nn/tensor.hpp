#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tilecascade/error.hpp"

namespace tilecascade::nn {

// NCHW. Fully connected activations use (n, features, 1, 1).
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t count() const noexcept
    {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h)
               * static_cast<std::size_t>(w);
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    std::size_t item() const noexcept { return static_cast<std::size_t>(c) * plane(); }

    std::string str() const
    {
        return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
    }

    friend bool operator==(const Shape&, const Shape&) = default;
};

template <class T>
struct BasicTensor {
    Shape shape;
    std::vector<T> values;

    BasicTensor() = default;
    explicit BasicTensor(Shape s, T fill = T{0}) : shape(s), values(s.count(), fill) {}
    BasicTensor(Shape s, std::vector<T> v) : shape(s), values(std::move(v))
    {
        if (values.size() != shape.count()) {
            throw ValidationError("tensor: value count " + std::to_string(values.size()) + " does not match shape "
                                  + shape.str());
        }
    }

    T& at(int n, int c, int h, int w) noexcept
    {
        return values[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
    T at(int n, int c, int h, int w) const noexcept
    {
        return values[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }

    T* item(int n) noexcept { return values.data() + static_cast<std::size_t>(n) * shape.item(); }
    const T* item(int n) const noexcept { return values.data() + static_cast<std::size_t>(n) * shape.item(); }

    bool all_finite() const noexcept
    {
        for (T v : values) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    template <class U>
    BasicTensor<U> cast() const
    {
        BasicTensor<U> out;
        out.shape = shape;
        out.values.assign(values.begin(), values.end());
        return out;
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;
};

using Tensor = BasicTensor<float>;

}  // namespace tilecascade::nn
