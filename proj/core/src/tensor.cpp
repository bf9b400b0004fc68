#include "flowrecon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace flowrecon {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

namespace {
int64_t checked_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
        n *= e;
    }
    return n;
}
}  // namespace

Tensor::Tensor(Shape shape, Dtype dtype)
    : shape_(std::move(shape)), dtype_(dtype) {
    data_.assign(static_cast<size_t>(checked_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, Dtype dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
    if (checked_numel(shape_) != static_cast<int64_t>(data_.size()))
        throw ShapeError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
    quantize();
}

Tensor Tensor::zeros(Shape shape, Dtype dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, Dtype dtype) {
    Tensor t(std::move(shape), dtype);
    t.fill(value);
    return t;
}

Tensor Tensor::scalar(double value, Dtype dtype) {
    Tensor t(Shape{1}, dtype);
    t[0] = value;
    t.quantize();
    return t;
}

Tensor Tensor::identity(int64_t n, Dtype dtype) {
    Tensor t(Shape{n, n}, dtype);
    for (int64_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, Dtype dtype) {
    Tensor t(std::move(shape), dtype);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
    t.quantize();
    return t;
}

int64_t Tensor::extent(int64_t axis) const {
    if (axis < 0 || axis >= rank())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    return shape_[static_cast<size_t>(axis)];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (checked_numel(shape) != numel())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

Tensor Tensor::to(Dtype dtype) const {
    Tensor t = *this;
    t.dtype_ = dtype;
    t.quantize();
    return t;
}

void Tensor::quantize() {
    if (dtype_ != Dtype::Float32) return;
    for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::min() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : data_) m = std::min(m, v);
    return m;
}

double Tensor::max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : data_) m = std::max(m, v);
    return m;
}

double Tensor::norm2() const { return std::sqrt(dot(*this)); }

double Tensor::dot(const Tensor& other) const {
    if (!same_shape(other))
        throw ShapeError("dot: shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    double s = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) s += data_[i] * other.data_[i];
    return s;
}

void Tensor::add_scaled(const Tensor& other, double alpha) {
    if (!same_shape(other))
        throw ShapeError("add_scaled: shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
}

void Tensor::scale_inplace(double alpha) {
    for (double& v : data_) v *= alpha;
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
    quantize();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace flowrecon
