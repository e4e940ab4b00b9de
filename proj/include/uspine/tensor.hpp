#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace uspine {

/// Dense row-major tensor of doubles. Storage is shared between copies;
/// use clone() for an independent buffer. Network activations are rank-3
/// (C,H,W), images rank-2 (H,W), vectors rank-1.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, double fill);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    std::int64_t size() const { return size_; }
    bool empty() const { return size_ == 0; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }
    double& operator[](std::int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    /// (c,h,w) accessor for rank-3 tensors.
    double& at(int c, int h, int w);
    double at(int c, int h, int w) const;
    /// (h,w) accessor for rank-2 tensors.
    double& at(int h, int w);
    double at(int h, int w) const;

    Tensor clone() const;
    /// Same storage, new shape (element count must match).
    Tensor reshaped(std::vector<int> shape) const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    /// True when the two tensors alias the same buffer.
    bool shares_storage(const Tensor& o) const { return data_ == o.data_; }

    void fill(double v);
    double min() const;
    double max() const;
    double sum() const;
    double mean() const;
    bool all_finite() const;

    const double* storage_key() const { return data_ ? data_->data() : nullptr; }

private:
    std::vector<int> shape_;
    std::int64_t size_ = 0;
    std::shared_ptr<std::vector<double>> data_;
};

std::string shape_str(const std::vector<int>& s);
void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Elementwise helpers (allocate a fresh result).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace uspine
