#include "flowrecon/phantoms.hpp"

#include <algorithm>
#include <cmath>

#include "flowrecon/errors.hpp"

namespace flowrecon {

const char* phantom_name(PhantomKind k) {
    switch (k) {
        case PhantomKind::Ellipses: return "ellipses";
        case PhantomKind::Shapes: return "shapes";
        case PhantomKind::DigitsLike: return "digits-like";
    }
    return "?";
}

PhantomKind phantom_from_name(const std::string& name) {
    if (name == "ellipses") return PhantomKind::Ellipses;
    if (name == "shapes") return PhantomKind::Shapes;
    if (name == "digits-like" || name == "digits") return PhantomKind::DigitsLike;
    throw ConfigError("unknown phantom kind '" + name +
                      "' (expected ellipses|shapes|digits-like)");
}

namespace {

void clamp01(Tensor& img) {
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
}

Tensor ellipses_phantom(int64_t n, Rng& rng) {
    Tensor img = Tensor::zeros(Shape{1, n, n});
    int64_t count = 3 + static_cast<int64_t>(rng.below(4));
    for (int64_t e = 0; e < count; ++e) {
        double cx = rng.uniform(0.2, 0.8) * static_cast<double>(n);
        double cy = rng.uniform(0.2, 0.8) * static_cast<double>(n);
        double ra = rng.uniform(0.08, 0.35) * static_cast<double>(n);
        double rb = rng.uniform(0.08, 0.35) * static_cast<double>(n);
        double th = rng.uniform(0.0, M_PI);
        double amp = rng.uniform(0.15, 0.5);
        double ct = std::cos(th), st = std::sin(th);
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x) {
                double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                double u = (dx * ct + dy * st) / ra;
                double v = (-dx * st + dy * ct) / rb;
                if (u * u + v * v <= 1.0) img.at3(0, y, x) += amp;
            }
    }
    clamp01(img);
    return img;
}

// Piecewise-constant rectangles and disks on a flat background.
Tensor shapes_phantom(int64_t n, Rng& rng) {
    Tensor img = Tensor::zeros(Shape{1, n, n});
    int64_t count = 2 + static_cast<int64_t>(rng.below(3));
    for (int64_t s = 0; s < count; ++s) {
        double level = rng.uniform(0.3, 1.0);
        if (rng.below(2) == 0) {
            int64_t x0 = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - 2)));
            int64_t y0 = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - 2)));
            int64_t wd = 2 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n / 2)));
            int64_t ht = 2 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n / 2)));
            for (int64_t y = y0; y < std::min(n, y0 + ht); ++y)
                for (int64_t x = x0; x < std::min(n, x0 + wd); ++x)
                    img.at3(0, y, x) = level;
        } else {
            double cx = rng.uniform(0.2, 0.8) * static_cast<double>(n);
            double cy = rng.uniform(0.2, 0.8) * static_cast<double>(n);
            double r = rng.uniform(0.1, 0.3) * static_cast<double>(n);
            for (int64_t y = 0; y < n; ++y)
                for (int64_t x = 0; x < n; ++x) {
                    double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                    if (dx * dx + dy * dy <= r * r) img.at3(0, y, x) = level;
                }
        }
    }
    clamp01(img);
    return img;
}

// Random thick polyline strokes, loosely handwriting-like.
Tensor digits_phantom(int64_t n, Rng& rng) {
    Tensor img = Tensor::zeros(Shape{1, n, n});
    int64_t strokes = 2 + static_cast<int64_t>(rng.below(2));
    double thick = std::max(1.0, 0.06 * static_cast<double>(n));
    for (int64_t s = 0; s < strokes; ++s) {
        double x0 = rng.uniform(0.15, 0.85) * static_cast<double>(n);
        double y0 = rng.uniform(0.15, 0.85) * static_cast<double>(n);
        int64_t segs = 2 + static_cast<int64_t>(rng.below(3));
        for (int64_t g = 0; g < segs; ++g) {
            double x1 = std::clamp(x0 + rng.uniform(-0.4, 0.4) * static_cast<double>(n),
                                   0.1 * static_cast<double>(n), 0.9 * static_cast<double>(n));
            double y1 = std::clamp(y0 + rng.uniform(-0.4, 0.4) * static_cast<double>(n),
                                   0.1 * static_cast<double>(n), 0.9 * static_cast<double>(n));
            double len = std::hypot(x1 - x0, y1 - y0);
            int64_t steps = std::max<int64_t>(2, static_cast<int64_t>(len * 2.0));
            for (int64_t t = 0; t <= steps; ++t) {
                double f = static_cast<double>(t) / static_cast<double>(steps);
                double px = x0 + f * (x1 - x0), py = y0 + f * (y1 - y0);
                int64_t xa = std::max<int64_t>(0, static_cast<int64_t>(px - thick));
                int64_t xb = std::min(n - 1, static_cast<int64_t>(px + thick));
                int64_t ya = std::max<int64_t>(0, static_cast<int64_t>(py - thick));
                int64_t yb = std::min(n - 1, static_cast<int64_t>(py + thick));
                for (int64_t y = ya; y <= yb; ++y)
                    for (int64_t x = xa; x <= xb; ++x) {
                        double d = std::hypot(static_cast<double>(x) - px,
                                              static_cast<double>(y) - py);
                        if (d <= thick) img.at3(0, y, x) = 1.0;
                    }
            }
            x0 = x1;
            y0 = y1;
        }
    }
    clamp01(img);
    return img;
}

}  // namespace

Tensor make_phantom(PhantomKind kind, int64_t size, Rng& rng) {
    if (size < 4) throw ConfigError("phantom size must be >= 4");
    switch (kind) {
        case PhantomKind::Ellipses: return ellipses_phantom(size, rng);
        case PhantomKind::Shapes: return shapes_phantom(size, rng);
        case PhantomKind::DigitsLike: return digits_phantom(size, rng);
    }
    throw Error("unreachable phantom kind");
}

std::vector<Tensor> make_phantoms(PhantomKind kind, int64_t size, int64_t count, uint64_t seed) {
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        Rng rng = Rng(seed).derive("phantom-" + std::to_string(i));
        out.push_back(make_phantom(kind, size, rng));
    }
    return out;
}

// ---- 2D Gaussian mixture ---------------------------------------------------

void GaussianMixture2D::sample(Rng& rng, double& x, double& y) const {
    double u = rng.uniform();
    double acc = 0.0;
    const Component* pick = &components.back();
    for (const Component& c : components) {
        acc += c.weight;
        if (u <= acc) {
            pick = &c;
            break;
        }
    }
    double z1 = rng.normal(), z2 = rng.normal();
    x = pick->mx + pick->sx * z1;
    y = pick->my + pick->sy * (pick->rho * z1 + std::sqrt(1.0 - pick->rho * pick->rho) * z2);
}

Tensor GaussianMixture2D::sample(Rng& rng) const {
    double x, y;
    sample(rng, x, y);
    return Tensor(Shape{2}, {x, y});
}

double GaussianMixture2D::log_density(double x, double y) const {
    double p = 0.0;
    for (const Component& c : components) {
        double det = c.sx * c.sx * c.sy * c.sy * (1.0 - c.rho * c.rho);
        double dx = x - c.mx, dy = y - c.my;
        double a = dx / c.sx, b = dy / c.sy;
        double q = (a * a - 2.0 * c.rho * a * b + b * b) / (1.0 - c.rho * c.rho);
        p += c.weight * std::exp(-0.5 * q) / (2.0 * M_PI * std::sqrt(det));
    }
    return std::log(std::max(p, 1e-300));
}

double GaussianMixture2D::entropy_quadrature(double lo, double hi, int64_t n) const {
    double dh = (hi - lo) / static_cast<double>(n);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double x = lo + (static_cast<double>(i) + 0.5) * dh;
            double y = lo + (static_cast<double>(j) + 0.5) * dh;
            double lp = log_density(x, y);
            acc -= std::exp(lp) * lp * dh * dh;
        }
    return acc;
}

GaussianMixture2D mixture3() {
    GaussianMixture2D m;
    m.components = {
        {0.4, -2.0, 0.0, 0.6, 0.6, 0.0},
        {0.35, 2.0, 1.5, 0.5, 0.8, 0.3},
        {0.25, 0.5, -2.0, 0.7, 0.4, -0.2},
    };
    return m;
}

}  // namespace flowrecon
