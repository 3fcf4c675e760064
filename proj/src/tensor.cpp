#include "neuralfuse/tensor.hpp"

#include <cmath>
#include <sstream>

#include "neuralfuse/errors.hpp"

namespace nf {

int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int extent : shape) {
        if (extent < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        n *= extent;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream out;
    out << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel(shape)), 0.0);
}

Tensor Tensor::full(std::vector<int> s, double value) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = value;
    return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(s);
    if (numel(t.shape) != static_cast<int64_t>(values.size()))
        throw ShapeError("value count does not match shape " + shape_str(t.shape));
    t.data = std::move(values);
    return t;
}

Tensor Tensor::randn(std::vector<int> s, Rng& rng, double stddev) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = rng.normal() * stddev;
    return t;
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    grad.assign(data.size(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace nf
