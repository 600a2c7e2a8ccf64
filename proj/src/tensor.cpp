#include "dilie/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dilie {

std::size_t count_elements(const std::vector<int>& dims) {
    std::size_t n = 1;
    for (int d : dims) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return dims.empty() ? 0 : n;
}

Tensor::Tensor(std::vector<int> dims)
    : dims_(std::move(dims)), v_(count_elements(dims_), 0.0) {}

Tensor::Tensor(std::vector<int> dims, double fill)
    : dims_(std::move(dims)), v_(count_elements(dims_), fill) {}

Tensor::Tensor(std::vector<int> dims, std::vector<double> values)
    : dims_(std::move(dims)), v_(std::move(values)) {
    if (v_.size() != count_elements(dims_))
        throw std::invalid_argument("tensor value count does not match dimensions");
}

bool Tensor::all_finite() const {
    for (double x : v_)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::min_value() const {
    double m = std::numeric_limits<double>::infinity();
    for (double x : v_) m = std::min(m, x);
    return m;
}

double Tensor::max_value() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v_) m = std::max(m, x);
    return m;
}

void Tensor::fill(double v) { std::fill(v_.begin(), v_.end(), v); }

void Tensor::clamp(double lo, double hi) {
    for (double& x : v_) x = std::min(hi, std::max(lo, x));
}

}  // namespace dilie
