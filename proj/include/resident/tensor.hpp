#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "resident/errors.hpp"

namespace resident {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << " x ";
        os << s[i];
    }
    os << ')';
    return os.str();
}

// Dense row-major tensor of 64-bit floats. Ops never mutate their inputs;
// every forward produces a fresh tensor.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), data(shape_numel(shape), fill) {}

    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw ContractError("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }
    bool is_scalar() const { return numel() == 1; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    double item() const {
        if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape));
        return data[0];
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Sequence tensors are (seq x channels) or (batch x seq x channels); channels
// always last. This collapses either form to a (batch, seq, channels) view.
struct SeqView {
    std::size_t batch, seq, channels;
};

inline SeqView seq_view(const Tensor& x, const char* who) {
    if (x.rank() == 2) return SeqView{1, x.dim(0), x.dim(1)};
    if (x.rank() == 3) return SeqView{x.dim(0), x.dim(1), x.dim(2)};
    throw ContractError(std::string(who) + ": expected rank-2 or rank-3 input, got " +
                        shape_str(x.shape));
}

inline Shape seq_shape(const Tensor& like, std::size_t seq, std::size_t channels) {
    if (like.rank() == 2) return Shape{seq, channels};
    return Shape{like.dim(0), seq, channels};
}

}  // namespace resident
