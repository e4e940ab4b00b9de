#include "uspine/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace uspine {

namespace {
std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimension must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), size_(count(shape_)),
      data_(std::make_shared<std::vector<double>>(static_cast<size_t>(size_), 0.0)) {}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), size_(count(shape_)),
      data_(std::make_shared<std::vector<double>>(static_cast<size_t>(size_), fill)) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), size_(count(shape_)),
      data_(std::make_shared<std::vector<double>>(std::move(values))) {
    if (static_cast<std::int64_t>(data_->size()) != size_)
        throw std::invalid_argument("tensor value count does not match shape " + shape_str(shape_));
}

double& Tensor::at(int c, int h, int w) {
    return (*data_)[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
}
double Tensor::at(int c, int h, int w) const {
    return (*data_)[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
}
double& Tensor::at(int h, int w) {
    return (*data_)[static_cast<size_t>(h) * shape_[1] + w];
}
double Tensor::at(int h, int w) const {
    return (*data_)[static_cast<size_t>(h) * shape_[1] + w];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.size_ = size_;
    t.data_ = data_ ? std::make_shared<std::vector<double>>(*data_) : nullptr;
    return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (count(shape) != size_)
        throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = size_;
    t.data_ = data_;
    return t;
}

void Tensor::fill(double v) { std::fill(data_->begin(), data_->end(), v); }

double Tensor::min() const { return *std::min_element(data_->begin(), data_->end()); }
double Tensor::max() const { return *std::max_element(data_->begin(), data_->end()); }
double Tensor::sum() const { return std::accumulate(data_->begin(), data_->end(), 0.0); }
double Tensor::mean() const { return sum() / static_cast<double>(size_); }

bool Tensor::all_finite() const {
    for (double v : *data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor r(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor r(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor r(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) r[i] = a[i] * b[i];
    return r;
}

Tensor scale(const Tensor& a, double s) {
    Tensor r(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) r[i] = a[i] * s;
    return r;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace uspine
