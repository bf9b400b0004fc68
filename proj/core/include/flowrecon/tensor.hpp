#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowrecon/errors.hpp"
#include "flowrecon/rng.hpp"

namespace flowrecon {

// Storage precision tag. Values are held as doubles internally;
// Float32 tensors are quantized to float precision after every
// primitive so the numerics behave like a 32-bit pipeline.
enum class Dtype : uint8_t { Float32 = 0, Float64 = 1 };

inline const char* dtype_name(Dtype d) {
    return d == Dtype::Float32 ? "f32" : "f64";
}

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t numel_of(const Shape& s);

// Dense n-dimensional real array, row-major, immutable by convention
// once handed to the tape (mutating helpers are for construction).
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, Dtype dtype);
    Tensor(Shape shape, std::vector<double> data, Dtype dtype = Dtype::Float64);

    static Tensor zeros(Shape shape, Dtype dtype = Dtype::Float64);
    static Tensor full(Shape shape, double value, Dtype dtype = Dtype::Float64);
    static Tensor scalar(double value, Dtype dtype = Dtype::Float64);
    static Tensor identity(int64_t n, Dtype dtype = Dtype::Float64);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                        Dtype dtype = Dtype::Float64);

    const Shape& shape() const { return shape_; }
    Dtype dtype() const { return dtype_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t extent(int64_t axis) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 3D (c,h,w) convenience accessors used by the image layers.
    double& at3(int64_t c, int64_t y, int64_t x) {
        return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
    }
    double at3(int64_t c, int64_t y, int64_t x) const {
        return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
    }

    // Metadata-only reshape; element count must be preserved.
    Tensor reshaped(Shape shape) const;

    Tensor to(Dtype dtype) const;

    // Round stored values to float precision when dtype is Float32.
    void quantize();

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double max_abs() const;
    double sum() const;
    double min() const;
    double max() const;
    double norm2() const;
    double dot(const Tensor& other) const;

    // In-place axpy-style helpers used by solvers and optimizers
    // (never applied to tensors owned by a tape).
    void add_scaled(const Tensor& other, double alpha);
    void scale_inplace(double alpha);
    void fill(double value);

private:
    Shape shape_;
    std::vector<double> data_;
    Dtype dtype_ = Dtype::Float64;
};

// Largest elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace flowrecon
