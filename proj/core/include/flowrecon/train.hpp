#pragma once

#include <vector>

#include "flowrecon/conditioner.hpp"
#include "flowrecon/io.hpp"
#include "flowrecon/model.hpp"

namespace flowrecon {

struct TrainConfig {
    double lr = 1e-4;
    double plateau_factor = 0.8;
    int64_t plateau_patience = 5;
    int64_t early_stop_patience = 10;
    int64_t batch_size = 16;
    int64_t epochs = 30;
    double dequant_variance = 0.0;  // 0.005 when dequantization is on
    double alpha = 0.0;             // conditional-loss reconstruction weight
    uint64_t seed = 1;
    double validation_split = 0.2;
    bool recompute = false;          // memory-saving coupling backward
    double stability_threshold = 1e-2;  // round-trip residual alarm

    void validate() const;
};

// Paired training data; `y` is empty for unconditional density fits.
struct Dataset {
    std::vector<Tensor> x;
    std::vector<Tensor> y;

    bool conditional() const { return !y.empty(); }
    void check() const;
};

struct EpochRecord {
    int64_t epoch;
    double train_nll;
    double val_nll;
    double lr;
    double roundtrip_residual;
};

struct TrainResult {
    Checkpoint best;  // parameters (+ optimizer state) at minimal validation NLL
    std::vector<EpochRecord> history;
    double best_val_nll = 0.0;
    int64_t best_epoch = -1;
    bool aborted_nan = false;
    bool stability_flag = false;
};

// Mean of -log p(x|y) over the index set, using current parameters.
double nll_value(const FlowModel& model, const Conditioner* cond, ParameterStore& params,
                 const Dataset& data, const std::vector<size_t>& idx);

// Maximum-likelihood loop: Adam, plateau learning-rate schedule,
// best-validation checkpointing, round-trip stability monitor, NaN
// abort returning the last good checkpoint.
TrainResult train(const FlowModel& model, const Conditioner* cond, ParameterStore& params,
                  const Dataset& data, const TrainConfig& cfg);

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace flowrecon
