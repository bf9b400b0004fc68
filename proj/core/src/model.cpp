#include "flowrecon/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace flowrecon {

namespace {

// Contiguous axis-0 slice/concat on plain tensors, used on the inverse
// path where no tape is involved.
Tensor take_axis0(const Tensor& x, int64_t start, int64_t len) {
    if (x.rank() < 1) throw ShapeError("take_axis0: rank-0 tensor");
    int64_t c = x.extent(0);
    if (start < 0 || len < 1 || start + len > c)
        throw ShapeError("take_axis0: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside extent " + std::to_string(c));
    int64_t inner = x.numel() / c;
    Shape s = x.shape();
    s[0] = len;
    Tensor out(s, x.dtype());
    std::memcpy(out.data(), x.data() + start * inner,
                static_cast<size_t>(len * inner) * sizeof(double));
    return out;
}

Tensor join_axis0(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() < 1)
        throw ShapeError("join_axis0: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    for (int64_t i = 1; i < a.rank(); ++i)
        if (a.extent(i) != b.extent(i))
            throw ShapeError("join_axis0: trailing extents differ, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    Shape s = a.shape();
    s[0] += b.extent(0);
    Tensor out(s, a.dtype());
    std::memcpy(out.data(), a.data(), static_cast<size_t>(a.numel()) * sizeof(double));
    std::memcpy(out.data() + a.numel(), b.data(), static_cast<size_t>(b.numel()) * sizeof(double));
    return out;
}

}  // namespace

void FlowModel::add(std::unique_ptr<FlowLayer> layer) {
    if (finalized_) throw Error("FlowModel::add called after finalize");
    layers_.push_back(std::move(layer));
}

void FlowModel::finalize(BaseKind base_kind) {
    if (finalized_) throw Error("FlowModel::finalize called twice");
    if (input_shape_.empty()) throw Error("FlowModel: input shape not set");
    Shape cur = input_shape_;
    std::vector<Shape> build_skips;
    in_shapes_.clear();
    split_rest_shapes_.clear();
    for (size_t i = 0; i < layers_.size(); ++i) {
        FlowLayer& L = *layers_[i];
        in_shapes_.push_back(cur);
        switch (L.kind()) {
            case LayerKind::Split: {
                auto& sp = static_cast<SplitLayer&>(L);
                int64_t c = cur[0];
                if (sp.keep() < 1 || sp.keep() >= c)
                    throw ShapeError("split at layer " + std::to_string(i) + ": keep " +
                                     std::to_string(sp.keep()) + " invalid for extent " +
                                     std::to_string(c));
                Shape rest = cur;
                rest[0] = c - sp.keep();
                if (sp.target() == SplitTarget::Output)
                    split_rest_shapes_.push_back(rest);
                else
                    build_skips.push_back(rest);
                cur[0] = sp.keep();
                break;
            }
            case LayerKind::Merge: {
                auto& mg = static_cast<MergeLayer&>(L);
                if (build_skips.empty())
                    throw Error("merge at layer " + std::to_string(i) + ": skip stack is empty");
                Shape top = build_skips.back();
                build_skips.pop_back();
                if (top != mg.skip_shape())
                    throw ShapeError("merge at layer " + std::to_string(i) + ": skip shape " +
                                     shape_str(top) + " != declared " +
                                     shape_str(mg.skip_shape()));
                for (int64_t a = 1; a < static_cast<int64_t>(cur.size()); ++a)
                    if (cur[a] != top[a])
                        throw ShapeError("merge at layer " + std::to_string(i) +
                                         ": spatial extents differ, " + shape_str(cur) + " vs " +
                                         shape_str(top));
                cur[0] += top[0];
                break;
            }
            case LayerKind::Flatten:
                static_cast<FlattenLayer&>(L).set_in_shape(cur);
                cur = L.out_shape(cur);
                break;
            default:
                cur = L.out_shape(cur);
                break;
        }
    }
    if (!build_skips.empty())
        throw Error("FlowModel: " + std::to_string(build_skips.size()) +
                    " skip connections never merged");
    final_shape_ = cur;
    latent_dim_ = numel_of(final_shape_);
    for (const Shape& s : split_rest_shapes_) latent_dim_ += numel_of(s);
    if (latent_dim_ != numel_of(input_shape_))
        throw ShapeError("FlowModel: latent dimension " + std::to_string(latent_dim_) +
                         " != input dimension " + std::to_string(numel_of(input_shape_)));

    cond_shapes_.clear();
    for (const auto& lp : layers_) {
        if (lp->kind() != LayerKind::Coupling) continue;
        const auto& cp = static_cast<const CouplingLayer&>(*lp);
        if (!cp.conditional()) continue;
        int slot = *cp.cond_slot();
        if (slot < 0) throw Error("coupling '" + cp.name() + "': negative feature slot");
        if (static_cast<size_t>(slot) >= cond_shapes_.size())
            cond_shapes_.resize(static_cast<size_t>(slot) + 1);
        if (cond_shapes_[static_cast<size_t>(slot)].empty())
            cond_shapes_[static_cast<size_t>(slot)] = cp.cond_shape();
        else if (cond_shapes_[static_cast<size_t>(slot)] != cp.cond_shape())
            throw ShapeError("feature slot " + std::to_string(slot) +
                             " declared with conflicting shapes " +
                             shape_str(cond_shapes_[static_cast<size_t>(slot)]) + " and " +
                             shape_str(cp.cond_shape()));
    }
    for (size_t s = 0; s < cond_shapes_.size(); ++s)
        if (cond_shapes_[s].empty())
            throw Error("feature slot " + std::to_string(s) + " is declared but unused");

    base_ = std::make_unique<BaseDistribution>(base_kind, latent_dim_);
    finalized_ = true;
}

const BaseDistribution& FlowModel::base() const {
    if (!base_) throw Error("FlowModel: finalize was not called");
    return *base_;
}

FlowForward FlowModel::forward(Tape& tape, ParameterStore& params, Ref x,
                               const std::vector<Ref>* cond, bool recompute) const {
    if (!finalized_) throw Error("FlowModel: finalize was not called");
    if (x->value.shape() != input_shape_)
        throw ShapeError("FlowModel::forward: input shape " + shape_str(x->value.shape()) +
                         " != " + shape_str(input_shape_));
    if (!cond_shapes_.empty()) {
        if (cond == nullptr || cond->size() < cond_shapes_.size())
            throw Error("FlowModel::forward: model is conditional and expects " +
                        std::to_string(cond_shapes_.size()) + " feature slots");
    }
    FlowContext ctx;
    ctx.tape = &tape;
    ctx.params = &params;
    ctx.cond = cond;
    ctx.recompute = recompute;
    ctx.logdet = tape.leaf(Tensor::scalar(0.0));

    Ref cur = x;
    std::vector<Ref> z_parts;
    std::vector<Ref> skips;
    for (size_t i = 0; i < layers_.size(); ++i) {
        FlowLayer& L = *layers_[i];
        switch (L.kind()) {
            case LayerKind::Split: {
                auto& sp = static_cast<SplitLayer&>(L);
                int64_t c = cur->value.extent(0);
                Ref kept = slice(tape, cur, 0, 0, sp.keep());
                Ref rest = slice(tape, cur, 0, sp.keep(), c - sp.keep());
                if (sp.target() == SplitTarget::Output)
                    z_parts.push_back(rest);
                else
                    skips.push_back(rest);
                cur = kept;
                break;
            }
            case LayerKind::Merge: {
                if (skips.empty())
                    throw Error("merge at layer " + std::to_string(i) + ": skip stack is empty");
                Ref top = skips.back();
                skips.pop_back();
                cur = concat(tape, cur, top, 0);
                break;
            }
            default:
                cur = L.forward(ctx, cur);
                break;
        }
        if (!cur->value.all_finite())
            throw NumericalError("non-finite values after layer " + std::to_string(i) + " (" +
                                 L.describe() + ")");
    }

    Ref z = nullptr;
    for (Ref part : z_parts) {
        Ref flat = reshape(tape, part, Shape{part->value.numel()});
        z = z ? concat(tape, z, flat, 0) : flat;
    }
    Ref tail = reshape(tape, cur, Shape{cur->value.numel()});
    z = z ? concat(tape, z, tail, 0) : tail;
    return FlowForward{z, ctx.logdet};
}

Tensor FlowModel::inverse(const Tensor& z, const ParameterStore& params,
                          const std::vector<Tensor>* cond) const {
    if (!finalized_) throw Error("FlowModel: finalize was not called");
    if (z.rank() != 1 || z.numel() != latent_dim_)
        throw ShapeError("FlowModel::inverse: expected flat latent of dimension " +
                         std::to_string(latent_dim_) + ", got " + shape_str(z.shape()));
    if (!cond_shapes_.empty() && (cond == nullptr || cond->size() < cond_shapes_.size()))
        throw Error("FlowModel::inverse: model is conditional and expects " +
                    std::to_string(cond_shapes_.size()) + " feature slots");

    // Latent layout: split parts in forward order, then the tail.
    std::vector<Tensor> parts;
    int64_t off = 0;
    for (const Shape& s : split_rest_shapes_) {
        parts.push_back(take_axis0(z.reshaped(Shape{latent_dim_}), off, numel_of(s)).reshaped(s));
        off += numel_of(s);
    }
    Tensor cur = take_axis0(z, off, numel_of(final_shape_)).reshaped(final_shape_);

    InverseContext ictx;
    ictx.params = &params;
    ictx.cond = cond;
    size_t next_part = parts.size();
    for (size_t ri = layers_.size(); ri-- > 0;) {
        const FlowLayer& L = *layers_[ri];
        switch (L.kind()) {
            case LayerKind::Split: {
                const auto& sp = static_cast<const SplitLayer&>(L);
                Tensor rest;
                if (sp.target() == SplitTarget::Output) {
                    if (next_part == 0) throw Error("inverse: latent part bookkeeping underflow");
                    rest = parts[--next_part];
                } else {
                    if (ictx.skips.empty())
                        throw Error("inverse: skip stack empty at layer " + std::to_string(ri));
                    rest = ictx.skips.back();
                    ictx.skips.pop_back();
                }
                cur = join_axis0(cur, rest);
                break;
            }
            case LayerKind::Merge: {
                const auto& mg = static_cast<const MergeLayer&>(L);
                int64_t c_skip = mg.skip_shape()[0];
                int64_t c_main = cur.extent(0) - c_skip;
                ictx.skips.push_back(take_axis0(cur, c_main, c_skip));
                cur = take_axis0(cur, 0, c_main);
                break;
            }
            default:
                cur = L.inverse(cur, ictx);
                break;
        }
        if (!cur.all_finite())
            throw NumericalError("non-finite values inverting layer " + std::to_string(ri) +
                                 " (" + L.describe() + ")");
    }
    if (cur.shape() != input_shape_)
        throw ShapeError("FlowModel::inverse: produced " + shape_str(cur.shape()) +
                         ", expected " + shape_str(input_shape_));
    return cur;
}

Ref FlowModel::log_likelihood_ref(Tape& tape, ParameterStore& params, Ref x,
                                  const std::vector<Ref>* cond, bool recompute) const {
    FlowForward f = forward(tape, params, x, cond, recompute);
    return flowrecon::add(tape, base().log_density_ref(tape, f.z), f.logdet);
}

double FlowModel::log_likelihood(const ParameterStore& params, const Tensor& x,
                                 const std::vector<Tensor>* cond) const {
    Tape tape;
    Ref rx = tape.leaf(x);
    std::vector<Ref> cond_refs;
    if (cond)
        for (const Tensor& h : *cond) cond_refs.push_back(tape.leaf(h));
    auto& mutable_params = const_cast<ParameterStore&>(params);
    FlowForward f = forward(tape, mutable_params, rx, cond ? &cond_refs : nullptr, false);
    return base().log_density(f.z->value) + f.logdet->value[0];
}

double FlowModel::roundtrip_residual(ParameterStore& params, const Tensor& x,
                                     const std::vector<Tensor>* cond) const {
    Tape tape;
    Ref rx = tape.leaf(x);
    std::vector<Ref> cond_refs;
    if (cond)
        for (const Tensor& h : *cond) cond_refs.push_back(tape.leaf(h));
    FlowForward f = forward(tape, params, rx, cond ? &cond_refs : nullptr, false);
    Tensor back = inverse(f.z->value, params, cond);
    return max_abs_diff(back, x);
}

std::string FlowModel::describe() const {
    std::ostringstream os;
    os << "input " << shape_str(input_shape_) << ", latent " << latent_dim_;
    if (base_) os << ", base " << base_kind_name(base_->kind());
    os << "\n";
    for (size_t i = 0; i < layers_.size(); ++i)
        os << "  " << i << ": " << layers_[i]->describe() << "  in " << shape_str(in_shapes_[i])
           << "\n";
    os << "latent order:";
    for (const Shape& s : split_rest_shapes_) os << " split" << shape_str(s);
    os << " tail" << shape_str(final_shape_) << "\n";
    return os.str();
}

// ---- builders -------------------------------------------------------------

namespace {

struct SlotTable {
    bool enabled = false;
    int64_t channels = 0;
    std::vector<std::pair<int64_t, int>> by_res;  // (height, slot)
    int next = 0;

    std::optional<int> slot_for(int64_t h) {
        if (!enabled) return std::nullopt;
        for (auto& p : by_res)
            if (p.first == h) return p.second;
        by_res.emplace_back(h, next);
        return next++;
    }
};

void add_conv_block(FlowModel& m, ParameterStore& params, const Rng& root, const std::string& tag,
                    const Shape& cur, int count, CouplingKind ck, double clamp, int64_t hidden,
                    int64_t kernel, Dtype dtype, std::optional<int> slot, Shape cond_shape) {
    for (int j = 0; j < count; ++j) {
        std::string name = tag + ".couple" + std::to_string(j);
        m.add(std::make_unique<CouplingLayer>(name, ck, cur,
                                              SubnetSpec{false, hidden, kernel}, params,
                                              root.derive(name), dtype, slot, cond_shape, clamp));
        std::string pname = tag + ".mix" + std::to_string(j);
        m.add(std::make_unique<PermutationLayer>(PermKind::OrthogonalMix, cur[0],
                                                 root.derive(pname).seed()));
    }
}

}  // namespace

FlowModel build_multiscale(const MultiScaleSpec& spec, ParameterStore& params) {
    const Shape& in = spec.input_shape;
    if (in.size() != 3) throw ConfigError("multiscale: input shape must be (c,h,w)");
    if (spec.scales < 1) throw ConfigError("multiscale: scales must be >= 1");
    int64_t div = int64_t{1} << spec.scales;
    if (in[1] % div != 0 || in[2] % div != 0)
        throw ConfigError("multiscale: spatial extents " + shape_str(in) +
                          " not divisible by 2^" + std::to_string(spec.scales));
    if (spec.split_fraction <= 0.0 || spec.split_fraction >= 1.0)
        throw ConfigError("multiscale: split fraction must lie in (0,1)");

    FlowModel m;
    m.set_input_shape(in);
    Rng root(spec.seed);
    SlotTable slots;
    slots.enabled = spec.conditional;
    slots.channels = spec.cond_channels;
    Shape cur = in;
    if (cur[0] == 1) {
        m.add(std::make_unique<DownsampleLayer>(DownKind::Checkerboard));
        cur = {4, cur[1] / 2, cur[2] / 2};
    }
    for (int s = 0; s + 1 < spec.scales; ++s) {
        std::string tag = "scale" + std::to_string(s);
        auto slot = slots.slot_for(cur[1]);
        Shape cshape = slot ? Shape{spec.cond_channels, cur[1], cur[2]} : Shape{};
        add_conv_block(m, params, root, tag + ".a", cur, spec.couplings_per_block, spec.coupling,
                       spec.clamp, spec.hidden, 3, spec.dtype, slot, cshape);
        m.add(std::make_unique<DownsampleLayer>(spec.down));
        cur = {cur[0] * 4, cur[1] / 2, cur[2] / 2};
        slot = slots.slot_for(cur[1]);
        cshape = slot ? Shape{spec.cond_channels, cur[1], cur[2]} : Shape{};
        add_conv_block(m, params, root, tag + ".b", cur, spec.couplings_per_block, spec.coupling,
                       spec.clamp, spec.hidden, 3, spec.dtype, slot, cshape);
        int64_t forwarded = std::llround(static_cast<double>(cur[0]) * spec.split_fraction);
        forwarded = std::max<int64_t>(1, std::min(cur[0] - 2, forwarded));
        m.add(std::make_unique<SplitLayer>(cur[0] - forwarded, SplitTarget::Output));
        cur[0] -= forwarded;
    }
    m.add(std::make_unique<FlattenLayer>());
    int64_t n = numel_of(cur);
    auto flat_slot = slots.enabled ? std::optional<int>(slots.next++) : std::nullopt;
    Shape flat_cshape = flat_slot ? Shape{spec.cond_flat_dim} : Shape{};
    for (int64_t j = 0; j < spec.dense_couplings; ++j) {
        std::string pname = "dense.perm" + std::to_string(j);
        m.add(std::make_unique<PermutationLayer>(PermKind::RandomShuffle, n,
                                                 root.derive(pname).seed()));
        std::string name = "dense.couple" + std::to_string(j);
        m.add(std::make_unique<CouplingLayer>(name, spec.coupling, Shape{n},
                                              SubnetSpec{true, spec.dense_hidden, 1}, params,
                                              root.derive(name), spec.dtype, flat_slot,
                                              flat_cshape, spec.clamp));
    }
    m.finalize(spec.base);
    return m;
}

FlowModel build_iunet(const IUNetSpec& spec, ParameterStore& params) {
    const Shape& in = spec.input_shape;
    if (in.size() != 3) throw ConfigError("iunet: input shape must be (c,h,w)");
    if (spec.scales < 2) throw ConfigError("iunet: scales must be >= 2");
    int64_t div = int64_t{1} << spec.scales;
    if (in[1] % div != 0 || in[2] % div != 0)
        throw ConfigError("iunet: spatial extents " + shape_str(in) + " not divisible by 2^" +
                          std::to_string(spec.scales));

    FlowModel m;
    m.set_input_shape(in);
    Rng root(spec.seed);
    SlotTable slots;
    slots.enabled = spec.conditional;
    slots.channels = spec.cond_channels;
    Shape cur = in;
    bool stem = cur[0] == 1;
    if (stem) {
        m.add(std::make_unique<DownsampleLayer>(DownKind::Checkerboard));
        cur = {4, cur[1] / 2, cur[2] / 2};
    }
    std::vector<Shape> skip_shapes;
    for (int s = 0; s + 1 < spec.scales; ++s) {
        std::string tag = "down" + std::to_string(s);
        auto slot = slots.slot_for(cur[1]);
        Shape cshape = slot ? Shape{spec.cond_channels, cur[1], cur[2]} : Shape{};
        add_conv_block(m, params, root, tag, cur, spec.couplings_per_block, spec.coupling,
                       spec.clamp, spec.hidden, 3, spec.dtype, slot, cshape);
        int64_t c_skip = std::llround(static_cast<double>(cur[0]) * spec.skip_fraction);
        c_skip = std::max<int64_t>(1, std::min(cur[0] - 1, c_skip));
        m.add(std::make_unique<SplitLayer>(cur[0] - c_skip, SplitTarget::Skip));
        skip_shapes.push_back(Shape{c_skip, cur[1], cur[2]});
        cur[0] -= c_skip;
        m.add(std::make_unique<DownsampleLayer>(spec.down));
        cur = {cur[0] * 4, cur[1] / 2, cur[2] / 2};
    }
    {
        auto slot = slots.slot_for(cur[1]);
        Shape cshape = slot ? Shape{spec.cond_channels, cur[1], cur[2]} : Shape{};
        add_conv_block(m, params, root, "bottom", cur, spec.couplings_per_block, spec.coupling,
                       spec.clamp, spec.hidden, 3, spec.dtype, slot, cshape);
    }
    for (int s = spec.scales - 2; s >= 0; --s) {
        std::string tag = "up" + std::to_string(s);
        if (cur[0] % 4 != 0)
            throw ConfigError("iunet: cannot upsample " + shape_str(cur) +
                              " (channels not divisible by 4)");
        m.add(std::make_unique<DownsampleLayer>(spec.down, /*up=*/true));
        cur = {cur[0] / 4, cur[1] * 2, cur[2] * 2};
        Shape skip = skip_shapes.back();
        skip_shapes.pop_back();
        m.add(std::make_unique<MergeLayer>(skip));
        cur[0] += skip[0];
        auto slot = slots.slot_for(cur[1]);
        Shape cshape = slot ? Shape{spec.cond_channels, cur[1], cur[2]} : Shape{};
        add_conv_block(m, params, root, tag, cur, spec.couplings_per_block, spec.coupling,
                       spec.clamp, spec.hidden, 3, spec.dtype, slot, cshape);
    }
    if (stem) {
        m.add(std::make_unique<DownsampleLayer>(DownKind::Checkerboard, /*up=*/true));
        cur = {1, cur[1] * 2, cur[2] * 2};
    }
    m.add(std::make_unique<FlattenLayer>());
    m.finalize(spec.base);
    return m;
}

FlowModel build_dense_flow(const DenseFlowSpec& spec, ParameterStore& params) {
    if (spec.dim < 2) throw ConfigError("dense flow: dimension must be >= 2");
    if (spec.conditional && spec.cond_dim < 1)
        throw ConfigError("dense flow: conditional model needs a positive feature dimension");
    FlowModel m;
    m.set_input_shape(Shape{spec.dim});
    Rng root(spec.seed);
    auto slot = spec.conditional ? std::optional<int>(0) : std::nullopt;
    Shape cshape = slot ? Shape{spec.cond_dim} : Shape{};
    for (int j = 0; j < spec.couplings; ++j) {
        std::string pname = "perm" + std::to_string(j);
        m.add(std::make_unique<PermutationLayer>(PermKind::RandomShuffle, spec.dim,
                                                 root.derive(pname).seed()));
        std::string name = "couple" + std::to_string(j);
        m.add(std::make_unique<CouplingLayer>(name, spec.coupling, Shape{spec.dim},
                                              SubnetSpec{true, spec.hidden, 1}, params,
                                              root.derive(name), spec.dtype, slot, cshape,
                                              spec.clamp));
    }
    m.finalize(spec.base);
    return m;
}

FlowModel build_cs_multiscale(ParameterStore& params, BaseKind base, uint64_t seed, Dtype dtype,
                              int64_t cond_channels, int section_repeats) {
    FlowModel m;
    m.set_input_shape(Shape{1, 28, 28});
    Rng root(seed);

    auto section = [&](const std::string& tag, const Shape& cur, int slot) {
        Shape cshape{cond_channels, cur[1], cur[2]};
        for (int r = 0; r < section_repeats; ++r) {
            std::string rt = tag + ".r" + std::to_string(r);
            std::string n1 = rt + ".couple1x1";
            m.add(std::make_unique<CouplingLayer>(n1, CouplingKind::Affine, cur,
                                                  SubnetSpec{false, 32, 1}, params,
                                                  root.derive(n1), dtype, slot, cshape, 2.0));
            m.add(std::make_unique<PermutationLayer>(PermKind::OrthogonalMix, cur[0],
                                                     root.derive(rt + ".mix1").seed()));
            std::string n3 = rt + ".couple3x3";
            m.add(std::make_unique<CouplingLayer>(n3, CouplingKind::Affine, cur,
                                                  SubnetSpec{false, 32, 3}, params,
                                                  root.derive(n3), dtype, slot, cshape, 2.0));
            m.add(std::make_unique<PermutationLayer>(PermKind::OrthogonalMix, cur[0],
                                                     root.derive(rt + ".mix2").seed()));
        }
    };

    m.add(std::make_unique<DownsampleLayer>(DownKind::Haar));
    section("level1", Shape{4, 14, 14}, 0);
    m.add(std::make_unique<DownsampleLayer>(DownKind::Haar));
    section("level2", Shape{16, 7, 7}, 1);
    m.add(std::make_unique<FlattenLayer>());
    // 656 latent dimensions leave the flow here; 128 continue into the
    // dense section.
    m.add(std::make_unique<SplitLayer>(128, SplitTarget::Output));
    Shape flat_cshape{64};
    for (int j = 0; j < 3; ++j) {
        std::string pname = "dense.perm" + std::to_string(j);
        m.add(std::make_unique<PermutationLayer>(PermKind::RandomShuffle, 128,
                                                 root.derive(pname).seed()));
        std::string name = "dense.couple" + std::to_string(j);
        m.add(std::make_unique<CouplingLayer>(name, CouplingKind::Affine, Shape{128},
                                              SubnetSpec{true, 64, 1}, params, root.derive(name),
                                              dtype, 2, flat_cshape, 2.0));
    }
    m.finalize(base);
    return m;
}

}  // namespace flowrecon
