#include "flowrecon/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace flowrecon {

double mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError("mse: shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

namespace {

double dynamic_range(const Tensor& reference, RangeMode mode, double fixed_range) {
    double L = mode == RangeMode::MinMax ? reference.max() - reference.min() : fixed_range;
    if (L <= 0.0) throw Error("metrics: dynamic range must be positive, got " + std::to_string(L));
    return L;
}

// (h,w) view of a rank-2 or single-channel rank-3 image.
void image_extents(const Tensor& x, int64_t& h, int64_t& w) {
    if (x.rank() == 2) {
        h = x.extent(0);
        w = x.extent(1);
    } else if (x.rank() == 3 && x.extent(0) == 1) {
        h = x.extent(1);
        w = x.extent(2);
    } else {
        throw ShapeError("metrics: expected (h,w) or (1,h,w), got " + shape_str(x.shape()));
    }
}

}  // namespace

double psnr(const Tensor& recon, const Tensor& reference, RangeMode mode, double fixed_range) {
    double L = dynamic_range(reference, mode, fixed_range);
    double e = mse(recon, reference);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(L * L / e);
}

double ssim(const Tensor& recon, const Tensor& reference, RangeMode mode, double fixed_range) {
    if (!recon.same_shape(reference))
        throw ShapeError("ssim: shapes differ, " + shape_str(recon.shape()) + " vs " +
                         shape_str(reference.shape()));
    int64_t h, w;
    image_extents(recon, h, w);
    const int64_t win = 11;
    if (h < win || w < win)
        throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " smaller than the 11x11 window");

    // Normalized 11x11 Gaussian window, sigma = 1.5.
    std::vector<double> g(win * win);
    double gsum = 0.0;
    for (int64_t y = 0; y < win; ++y)
        for (int64_t x = 0; x < win; ++x) {
            double dy = static_cast<double>(y - win / 2);
            double dx = static_cast<double>(x - win / 2);
            double v = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            g[y * win + x] = v;
            gsum += v;
        }
    for (double& v : g) v /= gsum;

    double L = dynamic_range(reference, mode, fixed_range);
    double c1 = (0.01 * L) * (0.01 * L);
    double c2 = (0.03 * L) * (0.03 * L);
    const double* a = recon.data();
    const double* b = reference.data();

    double acc = 0.0;
    int64_t count = 0;
    for (int64_t y0 = 0; y0 + win <= h; ++y0)
        for (int64_t x0 = 0; x0 + win <= w; ++x0) {
            double mu1 = 0, mu2 = 0, m11 = 0, m22 = 0, m12 = 0;
            for (int64_t y = 0; y < win; ++y)
                for (int64_t x = 0; x < win; ++x) {
                    double wt = g[y * win + x];
                    double va = a[(y0 + y) * w + (x0 + x)];
                    double vb = b[(y0 + y) * w + (x0 + x)];
                    mu1 += wt * va;
                    mu2 += wt * vb;
                    m11 += wt * va * va;
                    m22 += wt * vb * vb;
                    m12 += wt * va * vb;
                }
            double s1 = m11 - mu1 * mu1;
            double s2 = m22 - mu2 * mu2;
            double s12 = m12 - mu1 * mu2;
            double val = ((2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)) /
                         ((mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2));
            acc += val;
            ++count;
        }
    return acc / static_cast<double>(count);
}

}  // namespace flowrecon
