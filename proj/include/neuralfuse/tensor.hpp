#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "neuralfuse/rng.hpp"

namespace nf {

// Dense n-dimensional array, row-major, with an optional gradient buffer of
// the same length. Double storage keeps finite-difference checks and the
// gradient-aggregation identity well inside their tolerances; checkpoints
// serialize as f32.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty, or same length as data

    Tensor() = default;
    explicit Tensor(std::vector<int> s);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double value);
    static Tensor from(std::vector<int> s, std::vector<double> values);
    static Tensor randn(std::vector<int> s, Rng& rng, double stddev = 1.0);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    void ensure_grad();
    void zero_grad();
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
};

int64_t numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace nf
