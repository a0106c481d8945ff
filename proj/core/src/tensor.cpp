#include "cgs/tensor.hpp"

#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cgs {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_) {
        if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    }
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::initializer_list<int64_t> shape) : Tensor(std::vector<int64_t>(shape)) {}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("Tensor::from: shape/value count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

int64_t Tensor::dim(int i) const {
    if (i < 0) i += static_cast<int>(shape_.size());
    return shape_.at(static_cast<size_t>(i));
}

double& Tensor::at(int64_t i0) {
    assert(ndim() == 1);
    return data_[static_cast<size_t>(i0)];
}

double& Tensor::at(int64_t i0, int64_t i1) {
    assert(ndim() == 2);
    return data_[static_cast<size_t>(i0 * shape_[1] + i1)];
}

double& Tensor::at(int64_t i0, int64_t i1, int64_t i2) {
    assert(ndim() == 3);
    return data_[static_cast<size_t>((i0 * shape_[1] + i1) * shape_[2] + i2)];
}

double& Tensor::at(int64_t i0, int64_t i1, int64_t i2, int64_t i3) {
    assert(ndim() == 4);
    return data_[static_cast<size_t>(((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3)];
}

Tensor& Tensor::reshape(std::vector<int64_t> shape) {
    if (shape_numel(shape) != numel())
        throw std::invalid_argument("Tensor::reshape: numel mismatch (" + shape_str() + ")");
    shape_ = std::move(shape);
    return *this;
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

Tensor& Tensor::add_(const Tensor& other) {
    assert(numel() == other.numel());
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::add_scaled_(const Tensor& other, double s) {
    assert(numel() == other.numel());
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
    return *this;
}

Tensor& Tensor::scale_(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double Tensor::sum() const {
    return std::accumulate(data_.begin(), data_.end(), 0.0);
}

double Tensor::mean() const {
    return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size());
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

double Tensor::norm2() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

}  // namespace cgs
