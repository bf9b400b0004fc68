#include "flowrecon/layers.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace flowrecon {

namespace {

Ref param_leaf(Tape& tape, const ParameterStore& params, const std::string& name,
               bool train) {
    return tape.leaf(params.at(name).value, train, train ? name : "");
}

}  // namespace

// ---- CouplingLayer --------------------------------------------------------

CouplingLayer::CouplingLayer(std::string name, CouplingKind ckind, Shape in_shape,
                             SubnetSpec subnet, ParameterStore& params, const Rng& init_rng,
                             Dtype dtype, std::optional<int> cond_slot, Shape cond_shape,
                             double clamp)
    : name_(std::move(name)),
      ckind_(ckind),
      in_shape_(std::move(in_shape)),
      subnet_(subnet),
      cond_slot_(cond_slot),
      cond_shape_(std::move(cond_shape)),
      clamp_(clamp),
      dtype_(dtype) {
    if (in_shape_.size() != 3 && in_shape_.size() != 1)
        throw ShapeError("coupling '" + name_ + "': input must be (c,h,w) or (n), got " +
                         shape_str(in_shape_));
    int64_t c = in_shape_[0];
    if (c < 2)
        throw ShapeError("coupling '" + name_ + "': needs at least 2 channels, got " +
                         std::to_string(c));
    c1_ = (c + 1) / 2;
    c2_ = c - c1_;
    subnet_.dense = in_shape_.size() == 1;

    int64_t cond_c = 0;
    if (cond_slot_) {
        if (cond_shape_.size() != in_shape_.size())
            throw ShapeError("coupling '" + name_ + "': conditional feature rank " +
                             shape_str(cond_shape_) + " does not match input " +
                             shape_str(in_shape_));
        if (in_shape_.size() == 3 &&
            (cond_shape_[1] != in_shape_[1] || cond_shape_[2] != in_shape_[2]))
            throw ShapeError("coupling '" + name_ + "': conditional spatial extent " +
                             shape_str(cond_shape_) + " does not match input " +
                             shape_str(in_shape_));
        cond_c = cond_shape_[0];
    }

    int64_t cin = c1_ + cond_c;
    int64_t cout = ckind_ == CouplingKind::Affine ? 2 * c2_ : c2_;
    if (subnet_.dense) {
        params.create_dense(name_ + ".w1", subnet_.hidden, cin, init_rng, dtype_);
        params.create_zeros(name_ + ".b1", Shape{subnet_.hidden}, dtype_);
        params.create_zeros(name_ + ".w2", Shape{cout, subnet_.hidden}, dtype_);
        params.create_zeros(name_ + ".b2", Shape{cout}, dtype_);
    } else {
        params.create_conv(name_ + ".w1", subnet_.hidden, cin, subnet_.kernel, init_rng, dtype_);
        params.create_zeros(name_ + ".b1", Shape{subnet_.hidden}, dtype_);
        params.create_zeros(name_ + ".w2", Shape{cout, subnet_.hidden, subnet_.kernel, subnet_.kernel},
                            dtype_);
        params.create_zeros(name_ + ".b2", Shape{cout}, dtype_);
    }
}

std::string CouplingLayer::describe() const {
    std::ostringstream os;
    os << "coupling name=" << name_
       << " kind=" << (ckind_ == CouplingKind::Affine ? "affine" : "additive")
       << " shape=" << shape_str(in_shape_);
    if (cond_slot_) os << " cond_slot=" << *cond_slot_;
    if (ckind_ == CouplingKind::Affine) os << " clamp=" << clamp_;
    if (subnet_.dense)
        os << " subnet=dense(" << subnet_.hidden << ")";
    else
        os << " subnet=conv" << subnet_.kernel << "x" << subnet_.kernel << "(" << subnet_.hidden << ")";
    return os.str();
}

namespace {

// Shared forward body for CouplingLayer; `train` controls whether the
// parameter leaves carry names and require gradients.
struct CoupleOps {
    static Ref subnet(Tape& t, const ParameterStore& p, const std::string& name,
                      const SubnetSpec& spec, Ref in, bool train) {
        Ref w1 = param_leaf(t, p, name + ".w1", train);
        Ref b1 = param_leaf(t, p, name + ".b1", train);
        Ref w2 = param_leaf(t, p, name + ".w2", train);
        Ref b2 = param_leaf(t, p, name + ".b2", train);
        if (spec.dense) {
            Ref hdn = leaky_relu(t, add(t, matvec(t, w1, in), b1));
            return add(t, matvec(t, w2, hdn), b2);
        }
        Ref hdn = leaky_relu(t, bias_add(t, conv2d(t, in, w1), b1));
        return bias_add(t, conv2d(t, hdn, w2), b2);
    }
};

}  // namespace

static std::pair<Ref, Ref> couple_on(Tape& tape, const ParameterStore& params,
                                     const std::string& name, CouplingKind ckind,
                                     const SubnetSpec& subnet, int64_t c1, int64_t c2,
                                     double clamp, Ref x, Ref h, bool train) {
    Ref x1 = slice(tape, x, 0, 0, c1);
    Ref x2 = slice(tape, x, 0, c1, c2);
    Ref in = h ? concat(tape, x1, h, 0) : x1;
    Ref m = CoupleOps::subnet(tape, params, name, subnet, in, train);
    Ref y2 = nullptr;
    Ref ssum = nullptr;
    if (ckind == CouplingKind::Additive) {
        y2 = add(tape, x2, m);
    } else {
        Ref s_raw = slice(tape, m, 0, 0, c2);
        Ref trans = slice(tape, m, 0, c2, c2);
        Ref shat = clamp > 0.0 ? soft_clamp(tape, s_raw, clamp) : s_raw;
        y2 = add(tape, mul(tape, x2, exp_op(tape, shat)), trans);
        ssum = sum(tape, shat);
    }
    return {concat(tape, x1, y2, 0), ssum};
}

Ref CouplingLayer::fetch_cond(FlowContext& ctx) const {
    if (!cond_slot_) return nullptr;
    if (!ctx.cond || static_cast<size_t>(*cond_slot_) >= ctx.cond->size())
        throw Error("coupling '" + name_ + "' requires conditional features (slot " +
                    std::to_string(*cond_slot_) + ") but none were provided");
    Ref h = (*ctx.cond)[static_cast<size_t>(*cond_slot_)];
    if (h->value.shape() != cond_shape_)
        throw ShapeError("coupling '" + name_ + "': conditional feature shape " +
                         shape_str(h->value.shape()) + " does not match expected " +
                         shape_str(cond_shape_));
    return h;
}

const Tensor* CouplingLayer::fetch_cond(InverseContext& ctx) const {
    if (!cond_slot_) return nullptr;
    if (!ctx.cond || static_cast<size_t>(*cond_slot_) >= ctx.cond->size())
        throw Error("coupling '" + name_ + "' requires conditional features (slot " +
                    std::to_string(*cond_slot_) + ") but none were provided");
    const Tensor* h = &(*ctx.cond)[static_cast<size_t>(*cond_slot_)];
    if (h->shape() != cond_shape_)
        throw ShapeError("coupling '" + name_ + "': conditional feature shape " +
                         shape_str(h->shape()) + " does not match expected " +
                         shape_str(cond_shape_));
    return h;
}

Ref CouplingLayer::forward(FlowContext& ctx, Ref x) {
    if (x->value.shape() != in_shape_)
        throw ShapeError("coupling '" + name_ + "': input shape " + shape_str(x->value.shape()) +
                         " does not match layer shape " + shape_str(in_shape_));
    if (ctx.recompute) return forward_recompute(ctx, x);
    Ref h = fetch_cond(ctx);
    auto [y, ssum] = couple_on(*ctx.tape, *ctx.params, name_, ckind_, subnet_, c1_, c2_,
                               clamp_, x, h, true);
    if (ssum) ctx.logdet = add(*ctx.tape, ctx.logdet, ssum);
    return y;
}

Tensor CouplingLayer::inverse(const Tensor& y, InverseContext& ctx) const {
    const Tensor* hval = fetch_cond(ctx);
    // Rebuild via tape ops on a throwaway tape.
    Tape t;
    Ref ry = t.leaf(y);
    Ref ry1 = slice(t, ry, 0, 0, c1_);
    Ref ry2 = slice(t, ry, 0, c1_, c2_);
    Ref h = hval ? t.leaf(*hval) : nullptr;
    Ref in = h ? concat(t, ry1, h, 0) : ry1;
    Ref m = CoupleOps::subnet(t, *ctx.params, name_, subnet_, in, false);
    Ref x2 = nullptr;
    if (ckind_ == CouplingKind::Additive) {
        x2 = sub(t, ry2, m);
    } else {
        Ref s_raw = slice(t, m, 0, 0, c2_);
        Ref trans = slice(t, m, 0, c2_, c2_);
        Ref shat = clamp_ > 0.0 ? soft_clamp(t, s_raw, clamp_) : s_raw;
        x2 = mul(t, sub(t, ry2, trans), exp_op(t, scale(t, shat, -1.0)));
    }
    return concat(t, ry1, x2, 0)->value;
}

Ref CouplingLayer::forward_recompute(FlowContext& ctx, Ref x) {
    Ref h = fetch_cond(ctx);
    // Eager evaluation on a throwaway tape; subnet activations are not
    // kept on the main tape and are rebuilt during backward.
    Tensor yval;
    double ssum_val = 0.0;
    {
        Tape scratch;
        Ref sx = scratch.leaf(x->value);
        Ref sh = h ? scratch.leaf(h->value) : nullptr;
        auto [sy, sssum] = couple_on(scratch, *ctx.params, name_, ckind_, subnet_, c1_, c2_,
                                     clamp_, sx, sh, false);
        yval = sy->value;
        if (sssum) ssum_val = sssum->value[0];
    }
    int64_t n = yval.numel();
    std::vector<double> combined(static_cast<size_t>(n + 1));
    for (int64_t i = 0; i < n; ++i) combined[static_cast<size_t>(i)] = yval[i];
    combined[static_cast<size_t>(n)] = ssum_val;
    Tensor node_val(Shape{n + 1}, std::move(combined), yval.dtype());

    std::vector<Ref> inputs{x};
    if (h) inputs.push_back(h);
    std::map<std::string, Ref> pleaves;
    for (const char* suffix : {".w1", ".b1", ".w2", ".b2"}) {
        std::string pname = name_ + suffix;
        Ref pl = ctx.params->leaf_on(*ctx.tape, pname, true);
        pleaves[pname] = pl;
        inputs.push_back(pl);
    }
    const ParameterStore* store = ctx.params;
    const CouplingLayer* self = this;
    bool has_h = h != nullptr;
    const std::vector<Tensor>* cond_vals = nullptr;
    Ref node = ctx.tape->custom(
        "coupling_recompute", inputs, std::move(node_val),
        [self, store, has_h, n, pleaves](TapeNode& nd) {
            // Recover x from the stored output, then rebuild a local
            // tape for this coupling and backpropagate through it.
            Tensor ypart(self->in_shape_, Dtype::Float64);
            for (int64_t i = 0; i < n; ++i) ypart[i] = nd.value[i];
            std::vector<Tensor> condv;
            InverseContext ic;
            ic.params = store;
            if (has_h) {
                condv.assign(self->cond_slot_ ? *self->cond_slot_ + 1 : 1, Tensor());
                condv[static_cast<size_t>(*self->cond_slot_)] = nd.inputs[1]->value;
                ic.cond = &condv;
            }
            Tensor xrec = self->inverse(ypart, ic);

            Tape lt;
            Ref lx = lt.leaf(xrec, true);
            Ref lh = has_h ? lt.leaf(nd.inputs[1]->value, true) : nullptr;
            auto [ly, lssum] = couple_on(lt, *store, self->name_, self->ckind_, self->subnet_,
                                         self->c1_, self->c2_, self->clamp_, lx, lh, true);
            Ref flat = reshape(lt, ly, Shape{n});
            Ref tail = lssum ? reshape(lt, lssum, Shape{1})
                             : lt.leaf(Tensor::scalar(0.0));
            Ref comb = concat(lt, flat, tail, 0);
            lt.backward(comb, nd.grad);

            if (nd.inputs[0]->requires_grad && lx->grad_ready)
                nd.inputs[0]->accumulate(lx->grad);
            if (has_h && nd.inputs[1]->requires_grad && lh->grad_ready)
                nd.inputs[1]->accumulate(lh->grad);
            for (Ref lp : lt.param_leaves()) {
                if (!lp->grad_ready) continue;
                auto it = pleaves.find(lp->param_name);
                if (it != pleaves.end()) it->second->accumulate(lp->grad);
            }
        });
    (void)cond_vals;
    Ref y = reshape(*ctx.tape, slice(*ctx.tape, node, 0, 0, n), in_shape_);
    if (ckind_ == CouplingKind::Affine) {
        Ref ld = slice(*ctx.tape, node, 0, n, 1);
        ctx.logdet = add(*ctx.tape, ctx.logdet, ld);
    }
    return y;
}

// ---- PermutationLayer -----------------------------------------------------

PermutationLayer::PermutationLayer(PermKind pkind, int64_t channels, uint64_t seed)
    : pkind_(pkind), channels_(channels), seed_(seed) {
    Rng rng(seed);
    if (pkind_ == PermKind::RandomShuffle) {
        perm_.resize(static_cast<size_t>(channels));
        for (int64_t i = 0; i < channels; ++i) perm_[static_cast<size_t>(i)] = i;
        for (int64_t i = channels - 1; i > 0; --i)
            std::swap(perm_[static_cast<size_t>(i)],
                      perm_[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
        inv_perm_.resize(perm_.size());
        for (int64_t i = 0; i < channels; ++i)
            inv_perm_[static_cast<size_t>(perm_[static_cast<size_t>(i)])] = i;
    } else {
        // Fixed orthogonal mix: QR of a random matrix via Gram-Schmidt.
        size_t c = static_cast<size_t>(channels);
        mix_.assign(c * c, 0.0);
        for (size_t i = 0; i < c; ++i) {
            while (true) {
                for (size_t j = 0; j < c; ++j) mix_[i * c + j] = rng.normal();
                for (size_t k = 0; k < i; ++k) {
                    double dot = 0.0;
                    for (size_t j = 0; j < c; ++j) dot += mix_[i * c + j] * mix_[k * c + j];
                    for (size_t j = 0; j < c; ++j) mix_[i * c + j] -= dot * mix_[k * c + j];
                }
                double norm = 0.0;
                for (size_t j = 0; j < c; ++j) norm += mix_[i * c + j] * mix_[i * c + j];
                if (norm > 1e-8) {
                    norm = std::sqrt(norm);
                    for (size_t j = 0; j < c; ++j) mix_[i * c + j] /= norm;
                    break;
                }
            }
        }
    }
}

std::string PermutationLayer::describe() const {
    std::ostringstream os;
    os << "permutation kind=" << (pkind_ == PermKind::RandomShuffle ? "shuffle" : "orthogonal-mix")
       << " channels=" << channels_ << " seed=" << seed_;
    return os.str();
}

namespace {

// Apply a channel reindexing: out[i] = in[src[i]].
Tensor permute_channels(const Tensor& x, const std::vector<int64_t>& src) {
    int64_t c = x.extent(0);
    int64_t hw = x.numel() / c;
    Tensor out(x.shape(), x.dtype());
    for (int64_t i = 0; i < c; ++i)
        for (int64_t j = 0; j < hw; ++j)
            out[i * hw + j] = x[src[static_cast<size_t>(i)] * hw + j];
    return out;
}

// Per-pixel matrix multiply: out[i] = sum_j M[i][j] in[j]; transpose
// applies M^T instead.
Tensor mix_channels(const Tensor& x, const std::vector<double>& m, int64_t c, bool transpose) {
    int64_t hw = x.numel() / c;
    Tensor out(x.shape(), x.dtype());
    for (int64_t i = 0; i < c; ++i)
        for (int64_t j = 0; j < c; ++j) {
            double w = transpose ? m[static_cast<size_t>(j * c + i)] : m[static_cast<size_t>(i * c + j)];
            if (w == 0.0) continue;
            for (int64_t p = 0; p < hw; ++p) out[i * hw + p] += w * x[j * hw + p];
        }
    out.quantize();
    return out;
}

}  // namespace

Ref PermutationLayer::forward(FlowContext& ctx, Ref x) {
    if (x->value.extent(0) != channels_)
        throw ShapeError("permutation: channel count " + std::to_string(x->value.extent(0)) +
                         " does not match layer channels " + std::to_string(channels_));
    if (pkind_ == PermKind::RandomShuffle) {
        Tensor v = permute_channels(x->value, perm_);
        const auto& inv = inv_perm_;
        return ctx.tape->custom("shuffle", {x}, std::move(v), [&inv](TapeNode& n) {
            if (!n.inputs[0]->requires_grad) return;
            n.inputs[0]->accumulate(permute_channels(n.grad, inv));
        });
    }
    Tensor v = mix_channels(x->value, mix_, channels_, false);
    const auto& m = mix_;
    int64_t c = channels_;
    return ctx.tape->custom("orthogonal_mix", {x}, std::move(v), [&m, c](TapeNode& n) {
        if (!n.inputs[0]->requires_grad) return;
        n.inputs[0]->accumulate(mix_channels(n.grad, m, c, true));
    });
}

Tensor PermutationLayer::inverse(const Tensor& y, InverseContext&) const {
    if (pkind_ == PermKind::RandomShuffle) return permute_channels(y, inv_perm_);
    return mix_channels(y, mix_, channels_, true);
}

// ---- DownsampleLayer ------------------------------------------------------

Tensor DownsampleLayer::apply_down(DownKind k, const Tensor& x) {
    if (x.rank() != 3 || x.extent(1) % 2 || x.extent(2) % 2)
        throw ShapeError("invertible downsampling requires even spatial extents, got " +
                         shape_str(x.shape()));
    int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor out(Shape{4 * c, h / 2, w / 2}, x.dtype());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h / 2; ++y)
            for (int64_t xx = 0; xx < w / 2; ++xx) {
                double a = x.at3(ch, 2 * y, 2 * xx);
                double b = x.at3(ch, 2 * y, 2 * xx + 1);
                double cc = x.at3(ch, 2 * y + 1, 2 * xx);
                double d = x.at3(ch, 2 * y + 1, 2 * xx + 1);
                if (k == DownKind::Checkerboard) {
                    out.at3(0 * c + ch, y, xx) = a;
                    out.at3(1 * c + ch, y, xx) = b;
                    out.at3(2 * c + ch, y, xx) = cc;
                    out.at3(3 * c + ch, y, xx) = d;
                } else {
                    out.at3(0 * c + ch, y, xx) = 0.5 * (a + b + cc + d);
                    out.at3(1 * c + ch, y, xx) = 0.5 * (a - b + cc - d);
                    out.at3(2 * c + ch, y, xx) = 0.5 * (a + b - cc - d);
                    out.at3(3 * c + ch, y, xx) = 0.5 * (a - b - cc + d);
                }
            }
    out.quantize();
    return out;
}

Tensor DownsampleLayer::apply_up(DownKind k, const Tensor& x4) {
    if (x4.rank() != 3 || x4.extent(0) % 4)
        throw ShapeError("invertible upsampling requires channels divisible by 4, got " +
                         shape_str(x4.shape()));
    int64_t c = x4.extent(0) / 4, h = x4.extent(1), w = x4.extent(2);
    Tensor out(Shape{c, 2 * h, 2 * w}, x4.dtype());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx) {
                double o0 = x4.at3(0 * c + ch, y, xx);
                double o1 = x4.at3(1 * c + ch, y, xx);
                double o2 = x4.at3(2 * c + ch, y, xx);
                double o3 = x4.at3(3 * c + ch, y, xx);
                if (k == DownKind::Checkerboard) {
                    out.at3(ch, 2 * y, 2 * xx) = o0;
                    out.at3(ch, 2 * y, 2 * xx + 1) = o1;
                    out.at3(ch, 2 * y + 1, 2 * xx) = o2;
                    out.at3(ch, 2 * y + 1, 2 * xx + 1) = o3;
                } else {
                    out.at3(ch, 2 * y, 2 * xx) = 0.5 * (o0 + o1 + o2 + o3);
                    out.at3(ch, 2 * y, 2 * xx + 1) = 0.5 * (o0 - o1 + o2 - o3);
                    out.at3(ch, 2 * y + 1, 2 * xx) = 0.5 * (o0 + o1 - o2 - o3);
                    out.at3(ch, 2 * y + 1, 2 * xx + 1) = 0.5 * (o0 - o1 - o2 + o3);
                }
            }
    out.quantize();
    return out;
}

std::string DownsampleLayer::describe() const {
    std::ostringstream os;
    os << (up_ ? "upsample" : "downsample")
       << " kind=" << (dkind_ == DownKind::Checkerboard ? "checkerboard" : "haar");
    return os.str();
}

Shape DownsampleLayer::out_shape(const Shape& in) const {
    if (in.size() != 3)
        throw ShapeError("invertible resampling requires rank 3 input, got " + shape_str(in));
    if (up_) {
        if (in[0] % 4)
            throw ShapeError("invertible upsampling requires channels divisible by 4, got " +
                             shape_str(in));
        return Shape{in[0] / 4, 2 * in[1], 2 * in[2]};
    }
    if (in[1] % 2 || in[2] % 2)
        throw ShapeError("invertible downsampling requires even spatial extents, got " +
                         shape_str(in));
    return Shape{4 * in[0], in[1] / 2, in[2] / 2};
}

Ref DownsampleLayer::forward(FlowContext& ctx, Ref x) {
    DownKind k = dkind_;
    bool up = up_;
    Tensor v = up ? apply_up(k, x->value) : apply_down(k, x->value);
    return ctx.tape->custom(up ? "invertible_upsample" : "invertible_downsample", {x},
                            std::move(v), [k, up](TapeNode& n) {
        if (!n.inputs[0]->requires_grad) return;
        // Orthogonal map: the transpose equals the inverse direction.
        n.inputs[0]->accumulate(up ? apply_down(k, n.grad) : apply_up(k, n.grad));
    });
}

Tensor DownsampleLayer::inverse(const Tensor& y, InverseContext&) const {
    return up_ ? apply_down(dkind_, y) : apply_up(dkind_, y);
}

// ---- Split / Merge / Flatten ---------------------------------------------

std::string SplitLayer::describe() const {
    std::ostringstream os;
    os << "split keep=" << keep_
       << " target=" << (target_ == SplitTarget::Output ? "output" : "skip");
    return os.str();
}

Shape SplitLayer::out_shape(const Shape& in) const {
    if (keep_ <= 0 || keep_ >= in[0])
        throw ShapeError("split: keep=" + std::to_string(keep_) +
                         " must be inside (0," + std::to_string(in[0]) + ")");
    Shape out = in;
    out[0] = keep_;
    return out;
}

std::string MergeLayer::describe() const {
    return "merge skip_shape=" + shape_str(skip_shape_);
}

Shape MergeLayer::out_shape(const Shape& in) const {
    if (in.size() != skip_shape_.size())
        throw ShapeError("merge: rank mismatch between " + shape_str(in) + " and skip " +
                         shape_str(skip_shape_));
    Shape out = in;
    out[0] += skip_shape_[0];
    return out;
}

Shape FlattenLayer::out_shape(const Shape& in) const { return Shape{numel_of(in)}; }

Ref FlattenLayer::forward(FlowContext& ctx, Ref x) {
    return reshape(*ctx.tape, x, Shape{x->value.numel()});
}

Tensor FlattenLayer::inverse(const Tensor& y, InverseContext&) const {
    return y.reshaped(in_shape_);
}

}  // namespace flowrecon
