#include "flowrecon/operators.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <sstream>

#include "flowrecon/fft.hpp"

namespace flowrecon {

// ---- base helpers ----------------------------------------------------------

void MeasurementModel::check_x(const Tensor& x) const {
    Shape want = x_shape();
    if (x.shape() == want) return;
    if (x.rank() == 1 && x.numel() == numel_of(want)) return;
    throw ShapeError(describe() + ": x shape " + shape_str(x.shape()) + " does not match " +
                     shape_str(want));
}

void MeasurementModel::check_y(const Tensor& y) const {
    Shape want = y_shape();
    if (y.shape() == want) return;
    if (y.rank() == 1 && y.numel() == numel_of(want)) return;
    throw ShapeError(describe() + ": y shape " + shape_str(y.shape()) + " does not match " +
                     shape_str(want));
}

Ref MeasurementModel::forward_ref(Tape& tape, Ref x) const {
    Tensor y = forward(x->value);
    const MeasurementModel* self = this;
    return record(tape, "measure", {x}, std::move(y), [self](TapeNode& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor gx = self->adjoint(nd.grad);
        if (gx.shape() != nd.inputs[0]->value.shape())
            gx = gx.reshaped(nd.inputs[0]->value.shape());
        nd.inputs[0]->accumulate(gx);
    });
}

Tensor cg_solve(const std::function<Tensor(const Tensor&)>& apply, const Tensor& b, double tol,
                int64_t max_iter, const std::string& what) {
    Tensor x = Tensor::zeros(b.shape());
    Tensor r = b.to(Dtype::Float64);
    Tensor p = r;
    double rr = r.dot(r);
    double bnorm = std::sqrt(rr);
    if (bnorm == 0.0) return x;
    for (int64_t it = 0; it < max_iter; ++it) {
        if (std::sqrt(rr) <= tol * bnorm) return x;
        Tensor ap = apply(p);
        double pap = p.dot(ap);
        if (pap <= 0.0)
            throw NumericalError(what + ": conjugate gradients hit a non-positive curvature " +
                                 std::to_string(pap));
        double alpha = rr / pap;
        x.add_scaled(p, alpha);
        r.add_scaled(ap, -alpha);
        double rr_new = r.dot(r);
        double beta = rr_new / rr;
        rr = rr_new;
        Tensor p_next = r;
        p_next.add_scaled(p, beta);
        p = p_next;
    }
    if (std::sqrt(rr) <= tol * bnorm) return x;
    throw NumericalError(what + ": conjugate gradients did not converge in " +
                         std::to_string(max_iter) + " iterations (relative residual " +
                         std::to_string(std::sqrt(rr) / bnorm) + ")");
}

// ---- Gaussian compressed sensing ------------------------------------------

GaussianMatrixModel::GaussianMatrixModel(int64_t m, int64_t n, uint64_t seed, Shape image_shape)
    : m_(m), n_(n), seed_(seed) {
    if (m < 1 || n < 1)
        throw ConfigError("gaussian operator: m and n must be >= 1, got m=" + std::to_string(m) +
                          " n=" + std::to_string(n));
    if (image_shape.empty()) {
        x_shape_ = Shape{n};
    } else {
        if (numel_of(image_shape) != n)
            throw ShapeError("gaussian operator: image shape " + shape_str(image_shape) +
                             " has " + std::to_string(numel_of(image_shape)) +
                             " elements, expected " + std::to_string(n));
        x_shape_ = std::move(image_shape);
    }
    Rng rng = Rng(seed).derive("gaussian-matrix");
    a_.resize(static_cast<size_t>(m * n));
    double sd = 1.0 / std::sqrt(static_cast<double>(m));
    for (auto& v : a_) v = sd * rng.normal();
}

Tensor GaussianMatrixModel::forward(const Tensor& x) const {
    check_x(x);
    Tensor y(Shape{m_}, x.dtype());
    for (int64_t i = 0; i < m_; ++i) {
        double acc = 0.0;
        const double* row = a_.data() + i * n_;
        for (int64_t j = 0; j < n_; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    y.quantize();
    return y;
}

Tensor GaussianMatrixModel::adjoint(const Tensor& y) const {
    check_y(y);
    Tensor x = Tensor::zeros(x_shape_, y.dtype());
    for (int64_t i = 0; i < m_; ++i) {
        const double* row = a_.data() + i * n_;
        double yi = y[i];
        for (int64_t j = 0; j < n_; ++j) x[j] += row[j] * yi;
    }
    x.quantize();
    return x;
}

Tensor GaussianMatrixModel::pseudo_inverse(const Tensor& y) const {
    check_y(y);
    Tensor b = adjoint(y.to(Dtype::Float64));
    auto normal_eq = [this](const Tensor& v) { return adjoint(forward(v)); };
    // Starting at zero keeps all iterates in the row space, so the
    // limit is the minimum-norm least-squares solution.
    return cg_solve(normal_eq, b, 1e-8, 500, "pseudo_inverse");
}

namespace {

// Forward differences with replicate boundary on a (h,w) grid, and the
// adjoint of grad' o grad applied in one pass.
Tensor tv_curvature(const Tensor& v, int64_t h, int64_t w) {
    Tensor out = Tensor::zeros(v.shape());
    auto at = [&](int64_t y, int64_t x) { return v[y * w + x]; };
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double dx = (x + 1 < w) ? at(y, x + 1) - at(y, x) : 0.0;
            double dy = (y + 1 < h) ? at(y + 1, x) - at(y, x) : 0.0;
            int64_t i = y * w + x;
            out[i] -= dx + dy;
            if (x + 1 < w) out[y * w + x + 1] += dx;
            if (y + 1 < h) out[(y + 1) * w + x] += dy;
        }
    return out;
}

}  // namespace

Tensor GaussianMatrixModel::tv_inverse(const Tensor& y, double lambda) const {
    check_y(y);
    if (lambda <= 0.0)
        throw ConfigError("tv_inverse: lambda must be positive, got " + std::to_string(lambda));
    if (x_shape_.size() != 3)
        throw ShapeError("tv_inverse: operator has no image layout for x (shape " +
                         shape_str(x_shape_) + ")");
    int64_t h = x_shape_[1], w = x_shape_[2];
    Tensor b = adjoint(y.to(Dtype::Float64));
    auto apply = [this, lambda, h, w](const Tensor& v) {
        Tensor out = adjoint(forward(v));
        out.add_scaled(tv_curvature(v, h, w), lambda);
        return out;
    };
    return cg_solve(apply, b, 1e-6, 1000, "tv_inverse");
}

void GaussianMatrixModel::use_tv_inversion(double lambda) {
    if (lambda <= 0.0)
        throw ConfigError("use_tv_inversion: lambda must be positive");
    tv_ = true;
    tv_lambda_ = lambda;
}

void GaussianMatrixModel::use_pseudo_inversion() { tv_ = false; }

Tensor GaussianMatrixModel::approx_inverse(const Tensor& y) const {
    return tv_ ? tv_inverse(y, tv_lambda_) : pseudo_inverse(y);
}

std::string GaussianMatrixModel::describe() const {
    std::ostringstream os;
    os << "gaussian-matrix(m=" << m_ << ", n=" << n_ << ", seed=" << seed_
       << (tv_ ? ", tv-inversion" : ", pseudo-inversion") << ")";
    return os.str();
}

// ---- Radon -----------------------------------------------------------------

RadonModel::RadonModel(int64_t n_angles, int64_t n_detectors, int64_t image_size)
    : n_angles_(n_angles), n_det_(n_detectors), size_(image_size) {
    if (n_angles < 1 || n_detectors < 2 || image_size < 2)
        throw ConfigError("radon: need angles >= 1, detectors >= 2, image size >= 2");
    ds_ = std::sqrt(2.0) * static_cast<double>(size_) / static_cast<double>(n_det_);
}

template <bool Adjoint>
void RadonModel::trace(Tensor& img, Tensor& sino) const {
    const double step = 0.5;  // ray sampling step in pixel widths
    const double half_len = 0.5 * std::sqrt(2.0) * static_cast<double>(size_);
    const double c = 0.5 * static_cast<double>(size_ - 1);
    for (int64_t a = 0; a < n_angles_; ++a) {
        double th = M_PI * static_cast<double>(a) / static_cast<double>(n_angles_);
        double ct = std::cos(th), st = std::sin(th);
        for (int64_t d = 0; d < n_det_; ++d) {
            double s = (static_cast<double>(d) - 0.5 * static_cast<double>(n_det_ - 1)) * ds_;
            double acc = Adjoint ? sino[a * n_det_ + d] * step : 0.0;
            for (double t = -half_len; t <= half_len; t += step) {
                double px = s * ct - t * st + c;
                double py = s * st + t * ct + c;
                int64_t x0 = static_cast<int64_t>(std::floor(px));
                int64_t y0 = static_cast<int64_t>(std::floor(py));
                double fx = px - static_cast<double>(x0);
                double fy = py - static_cast<double>(y0);
                for (int dy = 0; dy <= 1; ++dy)
                    for (int dx = 0; dx <= 1; ++dx) {
                        int64_t xi = x0 + dx, yi = y0 + dy;
                        if (xi < 0 || xi >= size_ || yi < 0 || yi >= size_) continue;
                        double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
                        if constexpr (Adjoint)
                            img[yi * size_ + xi] += wgt * acc;
                        else
                            acc += wgt * img[yi * size_ + xi];
                    }
            }
            if constexpr (!Adjoint) sino[a * n_det_ + d] = acc * step;
        }
    }
}

Tensor RadonModel::forward(const Tensor& x) const {
    check_x(x);
    Tensor img = x.to(Dtype::Float64).reshaped(Shape{size_ * size_});
    Tensor sino(Shape{n_angles_, n_det_}, x.dtype());
    trace<false>(img, sino);
    sino.quantize();
    return sino;
}

Tensor RadonModel::adjoint(const Tensor& y) const {
    check_y(y);
    Tensor sino = y.to(Dtype::Float64).reshaped(Shape{n_angles_ * n_det_});
    Tensor img = Tensor::zeros(Shape{size_ * size_}, y.dtype());
    trace<true>(img, sino);
    Tensor out = img.reshaped(Shape{1, size_, size_});
    out.quantize();
    return out;
}

Tensor RadonModel::backproject(const Tensor& sinogram) const {
    check_y(sinogram);
    const double c = 0.5 * static_cast<double>(size_ - 1);
    Tensor img = Tensor::zeros(Shape{1, size_, size_});
    for (int64_t a = 0; a < n_angles_; ++a) {
        double th = M_PI * static_cast<double>(a) / static_cast<double>(n_angles_);
        double ct = std::cos(th), st = std::sin(th);
        for (int64_t yi = 0; yi < size_; ++yi)
            for (int64_t xi = 0; xi < size_; ++xi) {
                double s = (static_cast<double>(xi) - c) * ct + (static_cast<double>(yi) - c) * st;
                double u = s / ds_ + 0.5 * static_cast<double>(n_det_ - 1);
                int64_t u0 = static_cast<int64_t>(std::floor(u));
                double fu = u - static_cast<double>(u0);
                double v = 0.0;
                if (u0 >= 0 && u0 < n_det_) v += (1.0 - fu) * sinogram[a * n_det_ + u0];
                if (u0 + 1 >= 0 && u0 + 1 < n_det_) v += fu * sinogram[a * n_det_ + u0 + 1];
                img.at3(0, yi, xi) += v;
            }
    }
    return img;
}

Tensor RadonModel::fbp(const Tensor& sinogram) const {
    check_y(sinogram);
    int64_t pad = next_pow2(2 * n_det_);
    Tensor filtered(Shape{n_angles_, n_det_}, Dtype::Float64);
    std::vector<std::complex<double>> row(static_cast<size_t>(pad));
    for (int64_t a = 0; a < n_angles_; ++a) {
        std::fill(row.begin(), row.end(), std::complex<double>(0.0, 0.0));
        for (int64_t d = 0; d < n_det_; ++d) row[static_cast<size_t>(d)] = sinogram[a * n_det_ + d];
        fft_1d(row, false);
        for (int64_t k = 0; k < pad; ++k) {
            double freq = static_cast<double>(std::min(k, pad - k)) /
                          (static_cast<double>(pad) * ds_);
            row[static_cast<size_t>(k)] *= freq;
        }
        fft_1d(row, true);
        for (int64_t d = 0; d < n_det_; ++d)
            filtered[a * n_det_ + d] = row[static_cast<size_t>(d)].real() /
                                       static_cast<double>(pad);
    }
    Tensor img = backproject(filtered);
    img.scale_inplace(M_PI / static_cast<double>(n_angles_));
    Tensor out = img.to(sinogram.dtype());
    out.quantize();
    return out;
}

std::string RadonModel::describe() const {
    std::ostringstream os;
    os << "radon(angles=" << n_angles_ << ", detectors=" << n_det_ << ", image=" << size_ << ")";
    return os.str();
}

// ---- sampling mask / masked Fourier ---------------------------------------

int64_t SamplingMask::selected_count() const {
    int64_t c = 0;
    for (uint8_t v : selected) c += v;
    return c;
}

std::string SamplingMask::to_line() const {
    std::string s;
    s.reserve(selected.size());
    for (uint8_t v : selected) s.push_back(v ? '1' : '0');
    return s;
}

SamplingMask make_mask(int64_t width, double center_fraction, int64_t acceleration,
                       uint64_t seed) {
    if (width < 4) throw ConfigError("make_mask: width must be >= 4");
    if (acceleration < 1) throw ConfigError("make_mask: acceleration must be >= 1");
    SamplingMask m;
    m.width = width;
    m.center_fraction = center_fraction;
    m.acceleration = acceleration;
    m.seed = seed;
    m.selected.assign(static_cast<size_t>(width), 0);
    int64_t budget = width / acceleration;
    int64_t n_center = static_cast<int64_t>(std::floor(center_fraction *
                                                       static_cast<double>(width)));
    if (n_center > budget)
        throw ConfigError("make_mask: center block of " + std::to_string(n_center) +
                          " columns exceeds the budget of " + std::to_string(budget));
    // Columns are picked in the centered frequency layout, then mapped
    // to the natural DFT index.
    auto natural = [width](int64_t centered) { return (centered + width / 2) % width; };
    int64_t c0 = (width - n_center) / 2;
    for (int64_t i = 0; i < n_center; ++i) m.selected[static_cast<size_t>(natural(c0 + i))] = 1;
    std::vector<int64_t> rest;
    for (int64_t c = 0; c < width; ++c)
        if (!m.selected[static_cast<size_t>(natural(c))]) rest.push_back(natural(c));
    Rng rng = Rng(seed).derive("sampling-mask");
    int64_t have = n_center;
    while (have < budget) {
        size_t pick = static_cast<size_t>(rng.below(static_cast<uint64_t>(rest.size())));
        m.selected[static_cast<size_t>(rest[pick])] = 1;
        rest.erase(rest.begin() + static_cast<int64_t>(pick));
        ++have;
    }
    return m;
}

FourierMaskModel::FourierMaskModel(SamplingMask mask, int64_t h, int64_t w)
    : mask_(std::move(mask)), h_(h), w_(w) {
    if (h < 1 || w < 1) throw ConfigError("fourier-mask: image extents must be >= 1");
    if (mask_.width != w)
        throw ShapeError("fourier-mask: mask width " + std::to_string(mask_.width) +
                         " != image width " + std::to_string(w));
}

Tensor FourierMaskModel::forward(const Tensor& x) const {
    check_x(x);
    std::vector<std::complex<double>> buf(static_cast<size_t>(h_ * w_));
    for (int64_t i = 0; i < h_ * w_; ++i) buf[static_cast<size_t>(i)] = x[i];
    fft_2d(buf, h_, w_, false);
    double scale = 1.0 / std::sqrt(static_cast<double>(h_ * w_));
    Tensor y = Tensor::zeros(Shape{2, h_, w_}, x.dtype());
    for (int64_t r = 0; r < h_; ++r)
        for (int64_t c = 0; c < w_; ++c) {
            if (!mask_.selected[static_cast<size_t>(c)]) continue;
            std::complex<double> v = buf[static_cast<size_t>(r * w_ + c)] * scale;
            y.at3(0, r, c) = v.real();
            y.at3(1, r, c) = v.imag();
        }
    y.quantize();
    return y;
}

Tensor FourierMaskModel::adjoint(const Tensor& y) const {
    check_y(y);
    const Tensor ys = (y.rank() == 1) ? y.reshaped(Shape{2, h_, w_}) : y;
    std::vector<std::complex<double>> buf(static_cast<size_t>(h_ * w_));
    for (int64_t r = 0; r < h_; ++r)
        for (int64_t c = 0; c < w_; ++c) {
            double sel = mask_.selected[static_cast<size_t>(c)] ? 1.0 : 0.0;
            buf[static_cast<size_t>(r * w_ + c)] =
                std::complex<double>(sel * ys.at3(0, r, c), sel * ys.at3(1, r, c));
        }
    fft_2d(buf, h_, w_, true);
    double scale = 1.0 / std::sqrt(static_cast<double>(h_ * w_));
    Tensor x(Shape{1, h_, w_}, y.dtype());
    for (int64_t i = 0; i < h_ * w_; ++i) x[i] = buf[static_cast<size_t>(i)].real() * scale;
    x.quantize();
    return x;
}

Tensor FourierMaskModel::approx_inverse(const Tensor& y) const {
    check_y(y);
    const Tensor ys = (y.rank() == 1) ? y.reshaped(Shape{2, h_, w_}) : y;
    std::vector<std::complex<double>> buf(static_cast<size_t>(h_ * w_));
    for (int64_t r = 0; r < h_; ++r)
        for (int64_t c = 0; c < w_; ++c) {
            double sel = mask_.selected[static_cast<size_t>(c)] ? 1.0 : 0.0;
            buf[static_cast<size_t>(r * w_ + c)] =
                std::complex<double>(sel * ys.at3(0, r, c), sel * ys.at3(1, r, c));
        }
    fft_2d(buf, h_, w_, true);
    double scale = 1.0 / std::sqrt(static_cast<double>(h_ * w_));
    Tensor x(Shape{1, h_, w_}, y.dtype());
    for (int64_t i = 0; i < h_ * w_; ++i) x[i] = std::abs(buf[static_cast<size_t>(i)]) * scale;
    x.quantize();
    return x;
}

std::string FourierMaskModel::describe() const {
    std::ostringstream os;
    os << "fourier-mask(" << h_ << "x" << w_ << ", " << mask_.selected_count() << "/" << w_
       << " columns)";
    return os.str();
}

// ---- noise -----------------------------------------------------------------

Tensor add_relative_gaussian_noise(const Tensor& y, double level, uint64_t seed) {
    if (level < 0.0) throw ConfigError("noise level must be >= 0");
    if (level == 0.0) return y;
    Rng rng = Rng(seed).derive("relative-gaussian-noise");
    double sigma = level * y.norm2() / std::sqrt(static_cast<double>(y.numel()));
    Tensor out = y;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += sigma * rng.normal();
    out.quantize();
    return out;
}

namespace {

int64_t poisson_draw(Rng& rng, double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 50.0) {
        double limit = std::exp(-mean);
        double prod = rng.uniform();
        int64_t k = 0;
        while (prod > limit) {
            prod *= rng.uniform();
            ++k;
        }
        return k;
    }
    // Normal approximation for large means; relative error is far below
    // the tolerances the log-transformed sinogram values are used at.
    double v = mean + std::sqrt(mean) * rng.normal();
    return std::max<int64_t>(0, static_cast<int64_t>(std::llround(v)));
}

}  // namespace

Tensor poisson_lowdose_noise(const Tensor& sinogram, double photon_count, uint64_t seed) {
    if (photon_count < 1.0) throw ConfigError("poisson noise: photon count must be >= 1");
    if (sinogram.min() < 0.0)
        throw Error("poisson noise: sinogram has negative entries");
    Rng rng = Rng(seed).derive("poisson-lowdose");
    Tensor out = sinogram;
    for (int64_t i = 0; i < out.numel(); ++i) {
        double mean = photon_count * std::exp(-out[i]);
        int64_t k = poisson_draw(rng, mean);
        double kk = static_cast<double>(std::max<int64_t>(k, 1));
        out[i] = -std::log(kk / photon_count);
    }
    out.quantize();
    return out;
}

}  // namespace flowrecon
