#include "flowrecon/params.hpp"

#include <cmath>

namespace flowrecon {

Tensor& ParameterStore::create(const std::string& name, Tensor init) {
    if (slots_.count(name))
        throw Error("parameter '" + name + "' already exists");
    ParamSlot slot;
    slot.grad = Tensor::zeros(init.shape(), Dtype::Float64);
    slot.m1 = Tensor::zeros(init.shape(), Dtype::Float64);
    slot.m2 = Tensor::zeros(init.shape(), Dtype::Float64);
    slot.value = std::move(init);
    auto [it, ok] = slots_.emplace(name, std::move(slot));
    (void)ok;
    return it->second.value;
}

ParamSlot& ParameterStore::at(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
}

const ParamSlot& ParameterStore::at(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
}

Ref ParameterStore::leaf_on(Tape& tape, const std::string& name, bool requires_grad) {
    return tape.leaf(at(name).value, requires_grad, name);
}

void ParameterStore::collect_grads(Tape& tape) {
    for (Ref leaf : tape.param_leaves()) {
        if (!leaf->grad_ready) continue;
        at(leaf->param_name).grad.add_scaled(leaf->grad, 1.0);
    }
}

void ParameterStore::zero_grad() {
    for (auto& [name, slot] : slots_) slot.grad.fill(0.0);
}

void ParameterStore::adam_step(const AdamConfig& cfg) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (auto& [name, slot] : slots_) {
        for (int64_t i = 0; i < slot.value.numel(); ++i) {
            double g = slot.grad[i];
            slot.m1[i] = cfg.beta1 * slot.m1[i] + (1.0 - cfg.beta1) * g;
            slot.m2[i] = cfg.beta2 * slot.m2[i] + (1.0 - cfg.beta2) * g * g;
            if (g == 0.0 && slot.m1[i] == 0.0 && slot.m2[i] == 0.0) continue;
            double mhat = slot.m1[i] / bc1;
            double vhat = slot.m2[i] / bc2;
            slot.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        slot.value.quantize();
    }
}

Tensor& ParameterStore::create_conv(const std::string& name, int64_t cout, int64_t cin,
                                    int64_t k, const Rng& root, Dtype dtype) {
    Rng rng = root.derive(name);
    double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    return create(name, Tensor::randn(Shape{cout, cin, k, k}, rng, stddev, dtype));
}

Tensor& ParameterStore::create_dense(const std::string& name, int64_t rows, int64_t cols,
                                     const Rng& root, Dtype dtype) {
    Rng rng = root.derive(name);
    double stddev = std::sqrt(2.0 / static_cast<double>(cols));
    return create(name, Tensor::randn(Shape{rows, cols}, rng, stddev, dtype));
}

Tensor& ParameterStore::create_zeros(const std::string& name, Shape shape, Dtype dtype) {
    return create(name, Tensor::zeros(std::move(shape), dtype));
}

}  // namespace flowrecon
