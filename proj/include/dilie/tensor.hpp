#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace dilie {

// Dense row-major double tensor. Images and feature maps use {C, H, W},
// feature matrices use {N, D}, parameter blocks whatever fits.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> dims);
    Tensor(std::vector<int> dims, double fill);
    Tensor(std::vector<int> dims, std::vector<double> values);

    static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }
    static Tensor full(std::vector<int> dims, double v) { return Tensor(std::move(dims), v); }

    const std::vector<int>& dims() const { return dims_; }
    int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(dims_.size()); }
    std::size_t numel() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    // {C,H,W} accessors; valid only for 3-D tensors.
    int channels() const { return dims_[0]; }
    int height() const { return dims_[1]; }
    int width() const { return dims_[2]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& vec() { return v_; }
    const std::vector<double>& vec() const { return v_; }

    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }

    double& at(int c, int y, int x) {
        return v_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
    }
    double at(int c, int y, int x) const {
        return v_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
    }
    double& at(int r, int c) { return v_[static_cast<std::size_t>(r) * dims_[1] + c]; }
    double at(int r, int c) const { return v_[static_cast<std::size_t>(r) * dims_[1] + c]; }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }
    bool all_finite() const;
    double min_value() const;
    double max_value() const;

    void fill(double v);
    void clamp(double lo, double hi);

private:
    std::vector<int> dims_;
    std::vector<double> v_;
};

std::size_t count_elements(const std::vector<int>& dims);

}  // namespace dilie
