#include "flowrecon/conditioner.hpp"

#include <cmath>

#include "flowrecon/model.hpp"

namespace flowrecon {

const char* trunk_name(TrunkKind k) {
    switch (k) {
        case TrunkKind::AvgPool: return "avg-pool";
        case TrunkKind::Cnn: return "cnn";
        case TrunkKind::Resnet: return "resnet";
        case TrunkKind::Unet: return "unet";
    }
    return "?";
}

TrunkKind trunk_from_name(const std::string& name) {
    if (name == "avg-pool" || name == "avgpool") return TrunkKind::AvgPool;
    if (name == "cnn") return TrunkKind::Cnn;
    if (name == "resnet") return TrunkKind::Resnet;
    if (name == "unet") return TrunkKind::Unet;
    throw ConfigError("unknown trunk '" + name + "' (expected avg-pool|cnn|resnet|unet)");
}

Conditioner::Conditioner(ConditionerSpec spec, const MeasurementModel* op,
                         std::vector<Shape> slot_shapes, ParameterStore& params)
    : spec_(std::move(spec)), op_(op), slot_shapes_(std::move(slot_shapes)) {
    if (op_ == nullptr) throw ConfigError("conditioner: measurement model is required");
    if (spec_.width < 1) throw ConfigError("conditioner: width must be >= 1");
    Shape xs = op_->x_shape();
    image_ = xs.size() == 3;
    Rng root = Rng(spec_.seed).derive(spec_.prefix);
    const std::string& p = spec_.prefix;
    int64_t w = spec_.width;

    if (image_) {
        int64_t h0 = xs[1];
        slot_level_.assign(slot_shapes_.size(), -1);
        levels_ = 0;
        for (size_t i = 0; i < slot_shapes_.size(); ++i) {
            const Shape& s = slot_shapes_[i];
            if (s.size() == 1) continue;  // flat slots read the coarsest level
            if (s.size() != 3)
                throw ShapeError("conditioner: feature slot " + std::to_string(i) +
                                 " has unsupported shape " + shape_str(s));
            int64_t lev = 0, hh = h0;
            while (hh > s[1] && hh % 2 == 0) {
                hh /= 2;
                ++lev;
            }
            if (hh != s[1] || xs[2] >> lev != s[2])
                throw ShapeError("conditioner: slot " + std::to_string(i) + " extent " +
                                 shape_str(s) + " is not a halving of the inversion output " +
                                 shape_str(xs));
            slot_level_[i] = lev;
            levels_ = std::max(levels_, lev);
        }
        // Ensure the coarsest level still has even extents where pooling
        // is applied.
        if (h0 % (int64_t{1} << levels_) != 0 || xs[2] % (int64_t{1} << levels_) != 0)
            throw ShapeError("conditioner: inversion output " + shape_str(xs) +
                             " cannot be pooled " + std::to_string(levels_) + " times");

        params.create_conv(p + ".stem.w", w, xs[0], 3, root, spec_.dtype);
        params.create_zeros(p + ".stem.b", Shape{w}, spec_.dtype);
        for (int64_t k = 1; k <= levels_; ++k) {
            std::string lk = std::to_string(k);
            switch (spec_.trunk) {
                case TrunkKind::AvgPool:
                    break;  // pooling only, no per-level parameters
                case TrunkKind::Cnn:
                case TrunkKind::Unet:
                    params.create_conv(p + ".enc" + lk + ".w", w, w, 3, root, spec_.dtype);
                    params.create_zeros(p + ".enc" + lk + ".b", Shape{w}, spec_.dtype);
                    break;
                case TrunkKind::Resnet:
                    params.create_conv(p + ".res" + lk + ".wa", w, w, 3, root, spec_.dtype);
                    params.create_zeros(p + ".res" + lk + ".ba", Shape{w}, spec_.dtype);
                    params.create_conv(p + ".res" + lk + ".wb", w, w, 3, root, spec_.dtype);
                    params.create_zeros(p + ".res" + lk + ".bb", Shape{w}, spec_.dtype);
                    params.create_conv(p + ".down" + lk + ".w", w, w, 3, root, spec_.dtype);
                    params.create_zeros(p + ".down" + lk + ".b", Shape{w}, spec_.dtype);
                    break;
            }
        }
        if (spec_.trunk == TrunkKind::Unet) {
            for (int64_t k = levels_ - 1; k >= 0; --k) {
                std::string lk = std::to_string(k);
                params.create_conv(p + ".dec" + lk + ".w", w, 2 * w, 3, root, spec_.dtype);
                params.create_zeros(p + ".dec" + lk + ".b", Shape{w}, spec_.dtype);
            }
            params.create_conv(p + ".head.w", xs[0], w, 1, root, spec_.dtype);
            params.create_zeros(p + ".head.b", Shape{xs[0]}, spec_.dtype);
        }
        for (size_t i = 0; i < slot_shapes_.size(); ++i) {
            std::string si = std::to_string(i);
            const Shape& s = slot_shapes_[i];
            if (s.size() == 3) {
                params.create_conv(p + ".slot" + si + ".w", s[0], w, 1, root, spec_.dtype);
                params.create_zeros(p + ".slot" + si + ".b", Shape{s[0]}, spec_.dtype);
            } else {
                params.create_dense(p + ".slot" + si + ".w", s[0], w, root, spec_.dtype);
                params.create_zeros(p + ".slot" + si + ".b", Shape{s[0]}, spec_.dtype);
            }
        }
    } else {
        if (xs.size() != 1)
            throw ShapeError("conditioner: unsupported inversion output shape " + shape_str(xs));
        for (const Shape& s : slot_shapes_)
            if (s.size() != 1)
                throw ShapeError("conditioner: image feature slot requested but the operator "
                                 "inverts to a flat vector " +
                                 shape_str(xs));
        params.create_dense(p + ".stem.w", w, xs[0], root, spec_.dtype);
        params.create_zeros(p + ".stem.b", Shape{w}, spec_.dtype);
        params.create_dense(p + ".hid.w", w, w, root, spec_.dtype);
        params.create_zeros(p + ".hid.b", Shape{w}, spec_.dtype);
        if (spec_.trunk == TrunkKind::Unet) {
            params.create_dense(p + ".head.w", xs[0], w, root, spec_.dtype);
            params.create_zeros(p + ".head.b", Shape{xs[0]}, spec_.dtype);
        }
        for (size_t i = 0; i < slot_shapes_.size(); ++i) {
            std::string si = std::to_string(i);
            params.create_dense(p + ".slot" + si + ".w", slot_shapes_[i][0], w, root,
                                spec_.dtype);
            params.create_zeros(p + ".slot" + si + ".b", Shape{slot_shapes_[i][0]}, spec_.dtype);
        }
    }
}

Tensor Conditioner::invert_measurement(const Tensor& y) const { return op_->approx_inverse(y); }

Ref Conditioner::param(Tape& tape, ParameterStore& params, const std::string& name) const {
    return params.leaf_on(tape, name, /*requires_grad=*/!spec_.frozen);
}

namespace {

Ref channel_means(Tape& t, Ref x) {
    int64_t c = x->value.extent(0);
    Ref out = nullptr;
    for (int64_t i = 0; i < c; ++i) {
        Ref m = mean(t, slice(t, x, 0, i, 1));
        out = out ? concat(t, out, m, 0) : m;
    }
    return out;
}

}  // namespace

ConditionerOutput Conditioner::run_image(Tape& t, ParameterStore& ps, const Tensor& x0) const {
    const std::string& p = spec_.prefix;
    Ref cur = t.leaf(x0.to(spec_.dtype));
    cur = leaky_relu(
        t, bias_add(t, conv2d(t, cur, param(t, ps, p + ".stem.w")), param(t, ps, p + ".stem.b")));
    std::vector<Ref> enc{cur};
    for (int64_t k = 1; k <= levels_; ++k) {
        std::string lk = std::to_string(k);
        switch (spec_.trunk) {
            case TrunkKind::AvgPool:
                cur = avg_pool2(t, cur);
                break;
            case TrunkKind::Cnn:
            case TrunkKind::Unet:
                cur = leaky_relu(t, bias_add(t, conv2d(t, cur, param(t, ps, p + ".enc" + lk + ".w")),
                                             param(t, ps, p + ".enc" + lk + ".b")));
                cur = avg_pool2(t, cur);
                break;
            case TrunkKind::Resnet: {
                Ref a = leaky_relu(
                    t, bias_add(t, conv2d(t, cur, param(t, ps, p + ".res" + lk + ".wa")),
                                param(t, ps, p + ".res" + lk + ".ba")));
                Ref b = bias_add(t, conv2d(t, a, param(t, ps, p + ".res" + lk + ".wb")),
                                 param(t, ps, p + ".res" + lk + ".bb"));
                Ref r = add(t, cur, b);
                cur = leaky_relu(
                    t, bias_add(t, conv2d(t, r, param(t, ps, p + ".down" + lk + ".w"), 2),
                                param(t, ps, p + ".down" + lk + ".b")));
                break;
            }
        }
        enc.push_back(cur);
    }

    ConditionerOutput out;
    std::vector<Ref> src = enc;
    if (spec_.trunk == TrunkKind::Unet) {
        // Decoder runs opposite to the flow's coarsening direction;
        // features are read off the decoder activations.
        std::vector<Ref> dec(static_cast<size_t>(levels_ + 1), nullptr);
        dec[static_cast<size_t>(levels_)] = enc[static_cast<size_t>(levels_)];
        for (int64_t k = levels_ - 1; k >= 0; --k) {
            std::string lk = std::to_string(k);
            Ref u = upsample_nearest2(t, dec[static_cast<size_t>(k + 1)]);
            Ref cat = concat(t, u, enc[static_cast<size_t>(k)], 0);
            dec[static_cast<size_t>(k)] =
                leaky_relu(t, bias_add(t, conv2d(t, cat, param(t, ps, p + ".dec" + lk + ".w")),
                                       param(t, ps, p + ".dec" + lk + ".b")));
        }
        src = dec;
        out.reconstruction = bias_add(t, conv2d(t, dec[0], param(t, ps, p + ".head.w")),
                                      param(t, ps, p + ".head.b"));
    }

    for (size_t i = 0; i < slot_shapes_.size(); ++i) {
        std::string si = std::to_string(i);
        const Shape& s = slot_shapes_[i];
        if (s.size() == 3) {
            Ref f = src[static_cast<size_t>(slot_level_[i])];
            out.features.push_back(bias_add(t, conv2d(t, f, param(t, ps, p + ".slot" + si + ".w")),
                                            param(t, ps, p + ".slot" + si + ".b")));
        } else {
            Ref v = channel_means(t, src[static_cast<size_t>(levels_)]);
            out.features.push_back(bias_add(t, matvec(t, param(t, ps, p + ".slot" + si + ".w"), v),
                                            param(t, ps, p + ".slot" + si + ".b")));
        }
    }
    return out;
}

ConditionerOutput Conditioner::run_dense(Tape& t, ParameterStore& ps, const Tensor& x0) const {
    const std::string& p = spec_.prefix;
    Ref cur = t.leaf(x0.to(spec_.dtype));
    cur = leaky_relu(
        t, bias_add(t, matvec(t, param(t, ps, p + ".stem.w"), cur), param(t, ps, p + ".stem.b")));
    cur = leaky_relu(
        t, bias_add(t, matvec(t, param(t, ps, p + ".hid.w"), cur), param(t, ps, p + ".hid.b")));
    ConditionerOutput out;
    if (spec_.trunk == TrunkKind::Unet)
        out.reconstruction = bias_add(t, matvec(t, param(t, ps, p + ".head.w"), cur),
                                      param(t, ps, p + ".head.b"));
    for (size_t i = 0; i < slot_shapes_.size(); ++i) {
        std::string si = std::to_string(i);
        out.features.push_back(bias_add(t, matvec(t, param(t, ps, p + ".slot" + si + ".w"), cur),
                                        param(t, ps, p + ".slot" + si + ".b")));
    }
    return out;
}

ConditionerOutput Conditioner::run_from_inversion(Tape& tape, ParameterStore& params,
                                                  const Tensor& x0) const {
    if (x0.shape() != op_->x_shape())
        throw ShapeError("conditioner: inversion output " + shape_str(x0.shape()) +
                         " does not match the operator's " + shape_str(op_->x_shape()));
    return image_ ? run_image(tape, params, x0) : run_dense(tape, params, x0);
}

ConditionerOutput Conditioner::run(Tape& tape, ParameterStore& params, const Tensor& y) const {
    return run_from_inversion(tape, params, invert_measurement(y));
}

std::vector<Ref> Conditioner::condition(Tape& tape, ParameterStore& params,
                                        const Tensor& y) const {
    return run(tape, params, y).features;
}

std::vector<Tensor> Conditioner::condition_values(ParameterStore& params, const Tensor& y) const {
    Tape tape;
    ConditionerOutput out = run(tape, params, y);
    std::vector<Tensor> vals;
    for (Ref f : out.features) vals.push_back(f->value);
    return vals;
}

Ref Conditioner::reconstruction(Tape& tape, ParameterStore& params, const Tensor& y) const {
    if (spec_.trunk != TrunkKind::Unet)
        throw ConfigError("conditioner reconstruction requires the unet trunk, have " +
                          std::string(trunk_name(spec_.trunk)));
    return run(tape, params, y).reconstruction;
}

Tensor Conditioner::reconstruction_value(ParameterStore& params, const Tensor& y) const {
    Tape tape;
    return reconstruction(tape, params, y)->value;
}

Ref conditional_loss(Tape& tape, const FlowModel& model, const Conditioner& cond,
                     ParameterStore& params, const Tensor& x, const Tensor& y, double alpha,
                     bool recompute) {
    if (alpha < 0.0) throw ConfigError("conditional loss: alpha must be >= 0");
    if (alpha > 0.0 && cond.trunk() != TrunkKind::Unet)
        throw ConfigError("conditional loss with alpha > 0 requires the unet trunk");
    ConditionerOutput co = cond.run(tape, params, y);
    Ref rx = tape.leaf(x);
    Ref ll = model.log_likelihood_ref(tape, params, rx, &co.features, recompute);
    Ref loss = scale(tape, ll, -1.0);
    if (alpha > 0.0) {
        Ref target = tape.leaf(x);
        Ref d = sub(tape, co.reconstruction, target);
        loss = add(tape, loss, scale(tape, mean(tape, mul(tape, d, d)), alpha));
    }
    return loss;
}

}  // namespace flowrecon
