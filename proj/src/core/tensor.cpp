#include "core/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ods {

int64_t shape_size(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        ODS_REQUIRE(d >= 0, "tensor dimension must be nonnegative");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor Tensor::scalar(double v) {
    Tensor t{std::vector<int64_t>{}};
    t.data_.assign(1, v);
    return t;
}

Tensor Tensor::zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    ODS_REQUIRE(static_cast<int64_t>(values.size()) == shape_size(t.shape_),
                "tensor value count does not match shape");
    t.data_ = std::move(values);
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

int64_t Tensor::rows2d() const {
    if (shape_.empty()) return 1;
    if (shape_.size() == 1) return 1;
    int64_t r = 1;
    for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
}

int64_t Tensor::cols2d() const {
    if (shape_.empty()) return 1;
    return shape_.back();
}

MatMap Tensor::mat2d() { return MatMap(data_.data(), rows2d(), cols2d()); }
ConstMatMap Tensor::mat2d() const { return ConstMatMap(data_.data(), rows2d(), cols2d()); }

double Tensor::value_scalar() const {
    ODS_REQUIRE(size() == 1, "expected a scalar tensor, got shape " + shape_str());
    return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

}  // namespace ods
