#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "../error.hpp"

namespace imspeech::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

/// Dense row-major tensor.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // empty, or same length as data

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        require(data.size() == numel(shape), ErrorKind::Shape,
                "tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    }

    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        out.requires_grad = requires_grad;
        out.grad.assign(grad.begin(), grad.end());
        return out;
    }
};

/// Handle to a value recorded on a tape.
struct Var {
    std::size_t id = 0;
};

/// Records executed operations in execution order (which is a topological
/// order). A tape supports a single backward pass.
template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&)>;

    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;
        bool needs_grad = false;
        Backward backward;
        std::string param_name;  // set for parameter leaves
    };

    Var constant(Tensor<T> t) { return push(std::move(t.shape), std::move(t.data), false, {}); }

    Var input(Tensor<T> t, bool requires_grad) {
        return push(std::move(t.shape), std::move(t.data), requires_grad, {});
    }

    Var parameter(const std::string& name, const Tensor<T>& t) {
        Var v = push(t.shape, t.data, true, {});
        nodes_[v.id].param_name = name;
        return v;
    }

    Var record(Shape shape, std::vector<T> value, bool needs_grad, Backward backward) {
        require(value.size() == numel(shape), ErrorKind::Shape, "recorded value does not match its shape");
        return push(std::move(shape), std::move(value), needs_grad, needs_grad ? std::move(backward) : Backward{});
    }

    const Shape& shape(Var v) const { return nodes_.at(v.id).shape; }
    const std::vector<T>& value(Var v) const { return nodes_.at(v.id).value; }
    bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

    /// Gradient buffer of a node; valid during and after backward.
    std::vector<T>& grad(Var v) {
        auto& n = nodes_.at(v.id);
        if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T(0));
        return n.grad;
    }

    Tensor<T> tensor(Var v) const { return Tensor<T>(shape(v), value(v)); }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Propagates `seed` (d loss / d output) back through every recorded op.
    void backward(Var output, std::span<const T> seed) {
        require(!consumed_, ErrorKind::InvalidState, "tape has already been consumed by a backward pass");
        require(seed.size() == value(output).size(), ErrorKind::Shape, "loss gradient does not match output shape");
        consumed_ = true;
        auto& g = grad(output);
        for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
        for (std::size_t i = output.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
            n.backward(*this);
        }
    }

    /// Gradients of all parameter leaves, keyed by parameter name.
    std::map<std::string, Tensor<T>> parameter_grads() {
        std::map<std::string, Tensor<T>> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].param_name.empty()) continue;
            Tensor<T> t(nodes_[i].shape, grad(Var{i}));
            auto [it, inserted] = out.emplace(nodes_[i].param_name, t);
            if (!inserted)
                for (std::size_t k = 0; k < t.size(); ++k) it->second.data[k] += t.data[k];
        }
        return out;
    }

private:
    Var push(Shape shape, std::vector<T> value, bool needs_grad, Backward backward) {
        nodes_.push_back(Node{std::move(shape), std::move(value), {}, needs_grad, std::move(backward), {}});
        return Var{nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace imspeech::nn
