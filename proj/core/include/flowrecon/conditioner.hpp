#pragma once

#include <string>
#include <vector>

#include "flowrecon/operators.hpp"
#include "flowrecon/params.hpp"
#include "flowrecon/tape.hpp"

namespace flowrecon {

class FlowModel;

enum class TrunkKind { AvgPool, Cnn, Resnet, Unet };

const char* trunk_name(TrunkKind k);
TrunkKind trunk_from_name(const std::string& name);

struct ConditionerSpec {
    TrunkKind trunk = TrunkKind::Cnn;
    int64_t width = 32;   // trunk channel count
    bool frozen = false;  // pre-trained mode: parameters get no gradient
    uint64_t seed = 1;
    Dtype dtype = Dtype::Float32;
    std::string prefix = "cond";
};

struct ConditionerOutput {
    std::vector<Ref> features;   // one per slot, shapes as requested
    Ref reconstruction = nullptr;  // unet trunk only
};

// Conditioning network H: fixed model-based inversion of the
// measurement followed by a trainable trunk emitting one feature
// tensor per flow scale (and, for the unet trunk, an image-domain
// reconstruction head).
class Conditioner {
public:
    Conditioner(ConditionerSpec spec, const MeasurementModel* op,
                std::vector<Shape> slot_shapes, ParameterStore& params);

    // Fixed inversion x0 = approximate-inverse(y); never trained.
    Tensor invert_measurement(const Tensor& y) const;

    ConditionerOutput run(Tape& tape, ParameterStore& params, const Tensor& y) const;
    // Same, starting from a precomputed inversion (lets training loops
    // invert each measurement once).
    ConditionerOutput run_from_inversion(Tape& tape, ParameterStore& params,
                                         const Tensor& x0) const;

    std::vector<Ref> condition(Tape& tape, ParameterStore& params, const Tensor& y) const;
    std::vector<Tensor> condition_values(ParameterStore& params, const Tensor& y) const;
    Ref reconstruction(Tape& tape, ParameterStore& params, const Tensor& y) const;
    Tensor reconstruction_value(ParameterStore& params, const Tensor& y) const;

    TrunkKind trunk() const { return spec_.trunk; }
    bool frozen() const { return spec_.frozen; }
    void set_frozen(bool on) { spec_.frozen = on; }
    const std::vector<Shape>& slot_shapes() const { return slot_shapes_; }
    const MeasurementModel& op() const { return *op_; }
    const ConditionerSpec& spec() const { return spec_; }

private:
    ConditionerOutput run_image(Tape& tape, ParameterStore& params, const Tensor& x0) const;
    ConditionerOutput run_dense(Tape& tape, ParameterStore& params, const Tensor& x0) const;
    Ref param(Tape& tape, ParameterStore& params, const std::string& name) const;

    ConditionerSpec spec_;
    const MeasurementModel* op_;
    std::vector<Shape> slot_shapes_;
    bool image_ = false;
    int64_t levels_ = 0;                // pooling steps below full resolution
    std::vector<int64_t> slot_level_;   // rank-3 slots: which level feeds the head
};

// Conditional training objective: negative log-likelihood plus
// alpha * MSE(reconstruction head, x). alpha = 0 is exactly the NLL;
// alpha > 0 requires the unet trunk.
Ref conditional_loss(Tape& tape, const FlowModel& model, const Conditioner& cond,
                     ParameterStore& params, const Tensor& x, const Tensor& y, double alpha,
                     bool recompute = false);

}  // namespace flowrecon
