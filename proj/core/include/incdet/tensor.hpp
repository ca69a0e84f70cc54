#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "incdet/errors.hpp"

namespace incdet {

// Dense row-major double tensor. Double storage keeps gradient checks tight
// and makes bit-exact equality contracts straightforward.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0);
    }

    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at2(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double at2(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

    double& at3(int c, int y, int x) {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double at3(int c, int y, int x) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }

    double& at4(int o, int c, int y, int x) {
        return data_[((static_cast<size_t>(o) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    double at4(int o, int c, int y, int x) const {
        return data_[((static_cast<size_t>(o) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    void fill(double v) {
        for (auto& x : data_) x = v;
    }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // Bit-level equality, the currency of the freeze contracts.
    bool bit_equal(const Tensor& o) const {
        if (shape_ != o.shape_) return false;
        for (size_t i = 0; i < data_.size(); ++i) {
            uint64_t a, b;
            static_assert(sizeof(double) == sizeof(uint64_t));
            __builtin_memcpy(&a, &data_[i], 8);
            __builtin_memcpy(&b, &o.data_[i], 8);
            if (a != b) return false;
        }
        return true;
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("negative tensor dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace incdet
