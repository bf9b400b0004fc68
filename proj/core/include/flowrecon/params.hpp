#pragma once

#include <map>
#include <string>

#include "flowrecon/tape.hpp"
#include "flowrecon/tensor.hpp"

namespace flowrecon {

// One named parameter with its gradient accumulator and Adam moments.
struct ParamSlot {
    Tensor value;
    Tensor grad;  // Float64, same shape as value
    Tensor m1;
    Tensor m2;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameter slots. Iteration order is the sorted name order, so
// optimizer sweeps and checkpoints are deterministic.
class ParameterStore {
public:
    Tensor& create(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return slots_.count(name) != 0; }
    ParamSlot& at(const std::string& name);
    const ParamSlot& at(const std::string& name) const;

    // Record the parameter as a tape leaf carrying its name.
    Ref leaf_on(Tape& tape, const std::string& name, bool requires_grad = true);

    // Add gradients of every parameter leaf on the tape into the
    // matching slots, in leaf creation order.
    void collect_grads(Tape& tape);

    void zero_grad();

    // One Adam update over all slots; advances the shared timestep even
    // when gradients are zero.
    void adam_step(const AdamConfig& cfg);
    int64_t adam_timestep() const { return step_; }
    void set_adam_timestep(int64_t t) { step_ = t; }

    size_t size() const { return slots_.size(); }
    auto begin() { return slots_.begin(); }
    auto end() { return slots_.end(); }
    auto begin() const { return slots_.begin(); }
    auto end() const { return slots_.end(); }

    // Deterministic He-style initializers.
    Tensor& create_conv(const std::string& name, int64_t cout, int64_t cin, int64_t k,
                        const Rng& root, Dtype dtype);
    Tensor& create_dense(const std::string& name, int64_t rows, int64_t cols,
                         const Rng& root, Dtype dtype);
    Tensor& create_zeros(const std::string& name, Shape shape, Dtype dtype);

private:
    std::map<std::string, ParamSlot> slots_;
    int64_t step_ = 0;
};

}  // namespace flowrecon
