#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "core/errors.hpp"

namespace ods {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrixXd>;
using ConstMatMap = Eigen::Map<const RowMatrixXd>;

// Dense row-major array of doubles with a small dynamic shape.
// Rank 0 is a scalar; images are stored rank-3 (H, W, C).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::initializer_list<int64_t> shape) : Tensor(std::vector<int64_t>(shape)) {}

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double v);
    static Tensor from(std::vector<int64_t> shape, std::vector<double> values);

    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    // number of rows/cols when viewed as a 2-D array (rank-1 => 1 x n)
    int64_t rows2d() const;
    int64_t cols2d() const;
    MatMap mat2d();
    ConstMatMap mat2d() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * cols2d() + j)]; }
    double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * cols2d() + j)]; }
    // rank-3 access (i, j, k) with k fastest
    double& at3(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double at3(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    double value_scalar() const;
    void fill(double v);
    bool all_finite() const;
    double max_abs() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

int64_t shape_size(const std::vector<int64_t>& shape);

}  // namespace ods
