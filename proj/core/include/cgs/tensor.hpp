#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace cgs {

/// Dense row-major tensor of doubles. Value semantics; all training and
/// rendering numerics run in double precision.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::initializer_list<int64_t> shape);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor from(std::vector<int64_t> shape, std::vector<double> values);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int i) const;
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Multi-index accessors for up to 4 dims (tests and glue code).
    double& at(int64_t i0);
    double& at(int64_t i0, int64_t i1);
    double& at(int64_t i0, int64_t i1, int64_t i2);
    double& at(int64_t i0, int64_t i1, int64_t i2, int64_t i3);
    double at(int64_t i0) const { return const_cast<Tensor*>(this)->at(i0); }
    double at(int64_t i0, int64_t i1) const { return const_cast<Tensor*>(this)->at(i0, i1); }
    double at(int64_t i0, int64_t i1, int64_t i2) const {
        return const_cast<Tensor*>(this)->at(i0, i1, i2);
    }
    double at(int64_t i0, int64_t i1, int64_t i2, int64_t i3) const {
        return const_cast<Tensor*>(this)->at(i0, i1, i2, i3);
    }

    /// Reinterpret the buffer with a new shape (same numel).
    Tensor& reshape(std::vector<int64_t> shape);
    Tensor reshaped(std::vector<int64_t> shape) const;

    void fill(double value);
    void zero() { fill(0.0); }

    Tensor& add_(const Tensor& other);              // elementwise, same shape
    Tensor& add_scaled_(const Tensor& other, double s);
    Tensor& scale_(double s);

    double sum() const;
    double mean() const;
    double abs_max() const;
    double norm2() const;                            // Euclidean norm
    bool all_finite() const;

    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

}  // namespace cgs
