#include "flowrecon/tape.hpp"

#include <cmath>

namespace flowrecon {

void TapeNode::ensure_grad() {
    if (grad_ready) return;
    grad = Tensor::zeros(value.shape(), Dtype::Float64);
    grad_ready = true;
}

void TapeNode::accumulate(const Tensor& g) {
    ensure_grad();
    grad.add_scaled(g, 1.0);
}

Ref Tape::leaf(Tensor value, bool requires_grad, std::string param_name) {
    nodes_.push_back(TapeNode{});
    TapeNode& n = nodes_.back();
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param_name = std::move(param_name);
    return &n;
}

Ref Tape::custom(std::string op, std::vector<Ref> inputs, Tensor value,
                 std::function<void(TapeNode&)> backward_fn) {
    return record(*this, std::move(op), std::move(inputs), std::move(value),
                  std::move(backward_fn));
}

Ref record(Tape& tape, std::string op, std::vector<Ref> inputs, Tensor value,
           std::function<void(TapeNode&)> backward_fn) {
    if (tape.consumed_)
        throw Error("tape already consumed by backward; tapes are single-use");
    if (tape.check_finite_ && !value.all_finite())
        throw NumericalError("non-finite value produced by primitive '" + op + "'");
    tape.nodes_.push_back(TapeNode{});
    TapeNode& n = tape.nodes_.back();
    n.op = std::move(op);
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward_fn = std::move(backward_fn);
    for (Ref in : n.inputs)
        if (in->requires_grad) n.requires_grad = true;
    return &n;
}

void Tape::backward(Ref output, const Tensor& seed) {
    if (consumed_) throw Error("backward on a consumed tape; tapes are single-use");
    if (!seed.same_shape(output->value))
        throw ShapeError("backward seed shape " + shape_str(seed.shape()) +
                         " does not match output shape " + shape_str(output->value.shape()));
    consumed_ = true;
    output->accumulate(seed.to(Dtype::Float64));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        TapeNode& n = *it;
        if (!n.grad_ready || !n.requires_grad || !n.backward_fn) continue;
        n.backward_fn(n);
    }
}

void Tape::backward(Ref output) {
    if (output->value.numel() != 1)
        throw ShapeError("seedless backward requires a scalar output, got shape " +
                         shape_str(output->value.shape()));
    backward(output, Tensor::scalar(1.0));
}

std::vector<Ref> Tape::param_leaves() {
    std::vector<Ref> out;
    for (TapeNode& n : nodes_)
        if (!n.param_name.empty()) out.push_back(&n);
    return out;
}

// ---- helpers --------------------------------------------------------------

namespace {

Dtype out_dtype(std::initializer_list<Ref> inputs) {
    for (Ref r : inputs)
        if (r->value.dtype() == Dtype::Float64) return Dtype::Float64;
    return Dtype::Float32;
}

void require_same_shape(const char* op, Ref a, Ref b) {
    if (!a->value.same_shape(b->value))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) +
                         " vs " + shape_str(b->value.shape()));
}

// Elementwise unary with derivative computed from cached input/output.
Ref unary(Tape& t, const std::string& op, Ref a,
          const std::function<double(double)>& f,
          const std::function<double(double, double)>& df_in_out) {
    Tensor v(a->value.shape(), a->value.dtype());
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = f(a->value[i]);
    v.quantize();
    return record(t, op, {a}, std::move(v), [df_in_out](TapeNode& n) {
        Ref a = n.inputs[0];
        if (!a->requires_grad) return;
        Tensor g(a->value.shape(), Dtype::Float64);
        for (int64_t i = 0; i < g.numel(); ++i)
            g[i] = n.grad[i] * df_in_out(a->value[i], n.value[i]);
        a->accumulate(g);
    });
}

// Decompose a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
    int64_t outer = 1, ext = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int64_t axis) {
    AxisView v;
    v.ext = s[static_cast<size_t>(axis)];
    for (int64_t i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
    for (int64_t i = axis + 1; i < static_cast<int64_t>(s.size()); ++i)
        v.inner *= s[static_cast<size_t>(i)];
    return v;
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Ref add(Tape& t, Ref a, Ref b) {
    require_same_shape("add", a, b);
    Tensor v(a->value.shape(), out_dtype({a, b}));
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] + b->value[i];
    v.quantize();
    return record(t, "add", {a, b}, std::move(v), [](TapeNode& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
        if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(n.grad);
    });
}

Ref sub(Tape& t, Ref a, Ref b) {
    require_same_shape("sub", a, b);
    Tensor v(a->value.shape(), out_dtype({a, b}));
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] - b->value[i];
    v.quantize();
    return record(t, "sub", {a, b}, std::move(v), [](TapeNode& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
        if (n.inputs[1]->requires_grad) {
            Tensor g = n.grad;
            g.scale_inplace(-1.0);
            n.inputs[1]->accumulate(g);
        }
    });
}

Ref mul(Tape& t, Ref a, Ref b) {
    require_same_shape("mul", a, b);
    Tensor v(a->value.shape(), out_dtype({a, b}));
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] * b->value[i];
    v.quantize();
    return record(t, "mul", {a, b}, std::move(v), [](TapeNode& n) {
        Ref a = n.inputs[0], b = n.inputs[1];
        if (a->requires_grad) {
            Tensor g(a->value.shape(), Dtype::Float64);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * b->value[i];
            a->accumulate(g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape(), Dtype::Float64);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * a->value[i];
            b->accumulate(g);
        }
    });
}

Ref scale(Tape& t, Ref a, double c) {
    return unary(t, "scale", a,
                 [c](double x) { return c * x; },
                 [c](double, double) { return c; });
}

Ref add_scalar(Tape& t, Ref a, double c) {
    return unary(t, "add_scalar", a,
                 [c](double x) { return x + c; },
                 [](double, double) { return 1.0; });
}

Ref exp_op(Tape& t, Ref a) {
    return unary(t, "exp", a,
                 [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
}

Ref log_op(Tape& t, Ref a) {
    return unary(t, "log", a,
                 [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Ref tanh_op(Tape& t, Ref a) {
    return unary(t, "tanh", a,
                 [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Ref relu(Tape& t, Ref a) {
    return unary(t, "relu", a,
                 [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Ref leaky_relu(Tape& t, Ref a, double slope) {
    return unary(t, "leaky_relu", a,
                 [slope](double x) { return x > 0.0 ? x : slope * x; },
                 [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Ref soft_clamp(Tape& t, Ref a, double c) {
    return scale(t, tanh_op(t, scale(t, a, 1.0 / c)), c);
}

// ---- linear algebra -------------------------------------------------------

Ref matmul(Tape& t, Ref a, Ref b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.extent(1) != B.extent(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()));
    int64_t m = A.extent(0), k = A.extent(1), n = B.extent(1);
    Tensor v(Shape{m, n}, out_dtype({a, b}));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t l = 0; l < k; ++l) {
            double av = A[i * k + l];
            if (av == 0.0) continue;
            for (int64_t j = 0; j < n; ++j) v[i * n + j] += av * B[l * n + j];
        }
    v.quantize();
    return record(t, "matmul", {a, b}, std::move(v), [m, k, n](TapeNode& nd) {
        Ref a = nd.inputs[0], b = nd.inputs[1];
        if (a->requires_grad) {
            Tensor g(Shape{m, k}, Dtype::Float64);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t l = 0; l < k; ++l) {
                    double s = 0.0;
                    for (int64_t j = 0; j < n; ++j)
                        s += nd.grad[i * n + j] * b->value[l * n + j];
                    g[i * k + l] = s;
                }
            a->accumulate(g);
        }
        if (b->requires_grad) {
            Tensor g(Shape{k, n}, Dtype::Float64);
            for (int64_t l = 0; l < k; ++l)
                for (int64_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int64_t i = 0; i < m; ++i)
                        s += a->value[i * k + l] * nd.grad[i * n + j];
                    g[l * n + j] = s;
                }
            b->accumulate(g);
        }
    });
}

Ref matvec(Tape& t, Ref w, Ref x) {
    const Tensor& W = w->value;
    const Tensor& X = x->value;
    if (W.rank() != 2 || X.rank() != 1 || W.extent(1) != X.extent(0))
        throw ShapeError("matvec: incompatible shapes " + shape_str(W.shape()) + " x " +
                         shape_str(X.shape()));
    int64_t m = W.extent(0), n = W.extent(1);
    Tensor v(Shape{m}, out_dtype({w, x}));
    for (int64_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < n; ++j) s += W[i * n + j] * X[j];
        v[i] = s;
    }
    v.quantize();
    return record(t, "matvec", {w, x}, std::move(v), [m, n](TapeNode& nd) {
        Ref w = nd.inputs[0], x = nd.inputs[1];
        if (w->requires_grad) {
            Tensor g(Shape{m, n}, Dtype::Float64);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) g[i * n + j] = nd.grad[i] * x->value[j];
            w->accumulate(g);
        }
        if (x->requires_grad) {
            Tensor g(Shape{n}, Dtype::Float64);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) g[j] += w->value[i * n + j] * nd.grad[i];
            x->accumulate(g);
        }
    });
}

Ref conv2d(Tape& t, Ref x, Ref w, int stride) {
    const Tensor& X = x->value;
    const Tensor& W = w->value;
    if (X.rank() != 3 || W.rank() != 4)
        throw ShapeError("conv2d: expected x rank 3 and w rank 4, got " +
                         shape_str(X.shape()) + " and " + shape_str(W.shape()));
    int64_t cin = X.extent(0), h = X.extent(1), wid = X.extent(2);
    int64_t cout = W.extent(0), k = W.extent(2);
    if (W.extent(1) != cin || W.extent(3) != k || k % 2 == 0)
        throw ShapeError("conv2d: kernel shape " + shape_str(W.shape()) +
                         " incompatible with input " + shape_str(X.shape()));
    if (stride != 1 && stride != 2)
        throw ShapeError("conv2d: stride must be 1 or 2");
    int64_t p = k / 2;
    int64_t oh = (h + 2 * p - k) / stride + 1;
    int64_t ow = (wid + 2 * p - k) / stride + 1;
    Tensor v(Shape{cout, oh, ow}, out_dtype({x, w}));
    for (int64_t oc = 0; oc < cout; ++oc)
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (int64_t ic = 0; ic < cin; ++ic)
                    for (int64_t ky = 0; ky < k; ++ky) {
                        int64_t iy = oy * stride + ky - p;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < k; ++kx) {
                            int64_t ix = ox * stride + kx - p;
                            if (ix < 0 || ix >= wid) continue;
                            s += W[((oc * cin + ic) * k + ky) * k + kx] * X.at3(ic, iy, ix);
                        }
                    }
                v.at3(oc, oy, ox) = s;
            }
    v.quantize();
    return record(t, "conv2d", {x, w}, std::move(v),
                  [cin, h, wid, cout, k, p, oh, ow, stride](TapeNode& nd) {
        Ref x = nd.inputs[0], w = nd.inputs[1];
        Tensor gx(Shape{cin, h, wid}, Dtype::Float64);
        Tensor gw(Shape{cout, cin, k, k}, Dtype::Float64);
        for (int64_t oc = 0; oc < cout; ++oc)
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox) {
                    double g = nd.grad.at3(oc, oy, ox);
                    if (g == 0.0) continue;
                    for (int64_t ic = 0; ic < cin; ++ic)
                        for (int64_t ky = 0; ky < k; ++ky) {
                            int64_t iy = oy * stride + ky - p;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t kx = 0; kx < k; ++kx) {
                                int64_t ix = ox * stride + kx - p;
                                if (ix < 0 || ix >= wid) continue;
                                gx.at3(ic, iy, ix) += g * w->value[((oc * cin + ic) * k + ky) * k + kx];
                                gw[((oc * cin + ic) * k + ky) * k + kx] += g * x->value.at3(ic, iy, ix);
                            }
                        }
                }
        if (x->requires_grad) x->accumulate(gx);
        if (w->requires_grad) w->accumulate(gw);
    });
}

Ref bias_add(Tape& t, Ref x, Ref b) {
    const Tensor& X = x->value;
    const Tensor& B = b->value;
    if (B.rank() != 1)
        throw ShapeError("bias_add: bias must be rank 1, got " + shape_str(B.shape()));
    if (X.rank() == 1) {
        require_same_shape("bias_add", x, b);
        return add(t, x, b);
    }
    if (X.rank() != 3 || X.extent(0) != B.extent(0))
        throw ShapeError("bias_add: bias " + shape_str(B.shape()) +
                         " incompatible with input " + shape_str(X.shape()));
    int64_t c = X.extent(0), hw = X.extent(1) * X.extent(2);
    Tensor v(X.shape(), out_dtype({x, b}));
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < hw; ++i) v[ch * hw + i] = X[ch * hw + i] + B[ch];
    v.quantize();
    return record(t, "bias_add", {x, b}, std::move(v), [c, hw](TapeNode& nd) {
        if (nd.inputs[0]->requires_grad) nd.inputs[0]->accumulate(nd.grad);
        if (nd.inputs[1]->requires_grad) {
            Tensor g(Shape{c}, Dtype::Float64);
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t i = 0; i < hw; ++i) g[ch] += nd.grad[ch * hw + i];
            nd.inputs[1]->accumulate(g);
        }
    });
}

// ---- reductions -----------------------------------------------------------

Ref sum(Tape& t, Ref a) {
    Tensor v = Tensor::scalar(a->value.sum(), a->value.dtype());
    return record(t, "sum", {a}, std::move(v), [](TapeNode& n) {
        if (!n.inputs[0]->requires_grad) return;
        n.inputs[0]->accumulate(Tensor::full(n.inputs[0]->value.shape(), n.grad[0], Dtype::Float64));
    });
}

Ref mean(Tape& t, Ref a) {
    int64_t n = a->value.numel();
    Tensor v = Tensor::scalar(a->value.sum() / static_cast<double>(n), a->value.dtype());
    return record(t, "mean", {a}, std::move(v), [n](TapeNode& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        nd.inputs[0]->accumulate(Tensor::full(nd.inputs[0]->value.shape(),
                                              nd.grad[0] / static_cast<double>(n),
                                              Dtype::Float64));
    });
}

// ---- shape ops ------------------------------------------------------------

Ref slice(Tape& t, Ref a, int64_t axis, int64_t start, int64_t len) {
    const Tensor& A = a->value;
    if (axis < 0 || axis >= A.rank())
        throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(A.shape()));
    if (start < 0 || len <= 0 || start + len > A.extent(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for extent " +
                         std::to_string(A.extent(axis)));
    AxisView av = axis_view(A.shape(), axis);
    Shape os = A.shape();
    os[static_cast<size_t>(axis)] = len;
    Tensor v(os, A.dtype());
    for (int64_t o = 0; o < av.outer; ++o)
        for (int64_t e = 0; e < len; ++e)
            for (int64_t i = 0; i < av.inner; ++i)
                v[(o * len + e) * av.inner + i] = A[(o * av.ext + start + e) * av.inner + i];
    return record(t, "slice", {a}, std::move(v), [av, start, len](TapeNode& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g(n.inputs[0]->value.shape(), Dtype::Float64);
        for (int64_t o = 0; o < av.outer; ++o)
            for (int64_t e = 0; e < len; ++e)
                for (int64_t i = 0; i < av.inner; ++i)
                    g[(o * av.ext + start + e) * av.inner + i] = n.grad[(o * len + e) * av.inner + i];
        n.inputs[0]->accumulate(g);
    });
}

Ref concat(Tape& t, Ref a, Ref b, int64_t axis) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != B.rank() || axis < 0 || axis >= A.rank())
        throw ShapeError("concat: incompatible ranks or axis for " + shape_str(A.shape()) +
                         " and " + shape_str(B.shape()));
    for (int64_t i = 0; i < A.rank(); ++i)
        if (i != axis && A.extent(i) != B.extent(i))
            throw ShapeError("concat: extent mismatch off axis " + std::to_string(axis) + ": " +
                             shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    AxisView ava = axis_view(A.shape(), axis);
    int64_t ea = A.extent(axis), eb = B.extent(axis), eo = ea + eb;
    Shape os = A.shape();
    os[static_cast<size_t>(axis)] = eo;
    Tensor v(os, out_dtype({a, b}));
    for (int64_t o = 0; o < ava.outer; ++o) {
        for (int64_t e = 0; e < ea; ++e)
            for (int64_t i = 0; i < ava.inner; ++i)
                v[(o * eo + e) * ava.inner + i] = A[(o * ea + e) * ava.inner + i];
        for (int64_t e = 0; e < eb; ++e)
            for (int64_t i = 0; i < ava.inner; ++i)
                v[(o * eo + ea + e) * ava.inner + i] = B[(o * eb + e) * ava.inner + i];
    }
    v.quantize();
    return record(t, "concat", {a, b}, std::move(v), [ava, ea, eb, eo](TapeNode& n) {
        Ref a = n.inputs[0], b = n.inputs[1];
        if (a->requires_grad) {
            Tensor g(a->value.shape(), Dtype::Float64);
            for (int64_t o = 0; o < ava.outer; ++o)
                for (int64_t e = 0; e < ea; ++e)
                    for (int64_t i = 0; i < ava.inner; ++i)
                        g[(o * ea + e) * ava.inner + i] = n.grad[(o * eo + e) * ava.inner + i];
            a->accumulate(g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape(), Dtype::Float64);
            for (int64_t o = 0; o < ava.outer; ++o)
                for (int64_t e = 0; e < eb; ++e)
                    for (int64_t i = 0; i < ava.inner; ++i)
                        g[(o * eb + e) * ava.inner + i] = n.grad[(o * eo + ea + e) * ava.inner + i];
            b->accumulate(g);
        }
    });
}

Ref reshape(Tape& t, Ref a, Shape shape) {
    Tensor v = a->value.reshaped(std::move(shape));
    return record(t, "reshape", {a}, std::move(v), [](TapeNode& n) {
        if (!n.inputs[0]->requires_grad) return;
        n.inputs[0]->accumulate(n.grad.reshaped(n.inputs[0]->value.shape()));
    });
}

// ---- spatial --------------------------------------------------------------

Ref avg_pool2(Tape& t, Ref a) {
    const Tensor& X = a->value;
    if (X.rank() != 3 || X.extent(1) % 2 || X.extent(2) % 2)
        throw ShapeError("avg_pool2: requires (c,even,even), got " + shape_str(X.shape()));
    int64_t c = X.extent(0), h = X.extent(1), w = X.extent(2);
    Tensor v(Shape{c, h / 2, w / 2}, X.dtype());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h / 2; ++y)
            for (int64_t x = 0; x < w / 2; ++x)
                v.at3(ch, y, x) = 0.25 * (X.at3(ch, 2 * y, 2 * x) + X.at3(ch, 2 * y, 2 * x + 1) +
                                          X.at3(ch, 2 * y + 1, 2 * x) + X.at3(ch, 2 * y + 1, 2 * x + 1));
    v.quantize();
    return record(t, "avg_pool2", {a}, std::move(v), [c, h, w](TapeNode& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g(Shape{c, h, w}, Dtype::Float64);
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < h / 2; ++y)
                for (int64_t x = 0; x < w / 2; ++x) {
                    double gv = 0.25 * n.grad.at3(ch, y, x);
                    g.at3(ch, 2 * y, 2 * x) = gv;
                    g.at3(ch, 2 * y, 2 * x + 1) = gv;
                    g.at3(ch, 2 * y + 1, 2 * x) = gv;
                    g.at3(ch, 2 * y + 1, 2 * x + 1) = gv;
                }
        n.inputs[0]->accumulate(g);
    });
}

Ref upsample_nearest2(Tape& t, Ref a) {
    const Tensor& X = a->value;
    if (X.rank() != 3)
        throw ShapeError("upsample_nearest2: requires rank 3, got " + shape_str(X.shape()));
    int64_t c = X.extent(0), h = X.extent(1), w = X.extent(2);
    Tensor v(Shape{c, 2 * h, 2 * w}, X.dtype());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < 2 * h; ++y)
            for (int64_t x = 0; x < 2 * w; ++x)
                v.at3(ch, y, x) = X.at3(ch, y / 2, x / 2);
    return record(t, "upsample_nearest2", {a}, std::move(v), [c, h, w](TapeNode& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g(Shape{c, h, w}, Dtype::Float64);
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < 2 * h; ++y)
                for (int64_t x = 0; x < 2 * w; ++x)
                    g.at3(ch, y / 2, x / 2) += n.grad.at3(ch, y, x);
        n.inputs[0]->accumulate(g);
    });
}

Ref upsample_zero2(Tape& t, Ref a) {
    const Tensor& X = a->value;
    if (X.rank() != 3)
        throw ShapeError("upsample_zero2: requires rank 3, got " + shape_str(X.shape()));
    int64_t c = X.extent(0), h = X.extent(1), w = X.extent(2);
    Tensor v(Shape{c, 2 * h, 2 * w}, X.dtype());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                v.at3(ch, 2 * y, 2 * x) = X.at3(ch, y, x);
    return record(t, "upsample_zero2", {a}, std::move(v), [c, h, w](TapeNode& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g(Shape{c, h, w}, Dtype::Float64);
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    g.at3(ch, y, x) = n.grad.at3(ch, 2 * y, 2 * x);
        n.inputs[0]->accumulate(g);
    });
}

}  // namespace flowrecon
