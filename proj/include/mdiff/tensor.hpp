#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace mdiff {

template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(size_t(numel()), T(0));
    }

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
        return out;
    }
};

}  // namespace mdiff
