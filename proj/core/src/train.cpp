#include "flowrecon/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace flowrecon {

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("train: learning rate must be > 0");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
        throw ConfigError("train: plateau factor must lie in (0,1)");
    if (dequant_variance < 0.0) throw ConfigError("train: dequantization variance must be >= 0");
    if (alpha < 0.0) throw ConfigError("train: alpha must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epoch budget must be >= 1");
    if (validation_split <= 0.0 || validation_split >= 1.0)
        throw ConfigError("train: validation split must lie in (0,1)");
}

void Dataset::check() const {
    if (x.empty()) throw ConfigError("dataset is empty");
    if (!y.empty() && y.size() != x.size())
        throw ConfigError("dataset has " + std::to_string(x.size()) + " images but " +
                          std::to_string(y.size()) + " measurements");
}

namespace {

double sample_nll(const FlowModel& model, const Conditioner* cond, ParameterStore& params,
                  const Tensor& x, const Tensor* x0inv) {
    Tape tape;
    Ref rx = tape.leaf(x);
    if (cond) {
        ConditionerOutput co = cond->run_from_inversion(tape, params, *x0inv);
        Ref ll = model.log_likelihood_ref(tape, params, rx, &co.features, false);
        return -ll->value[0];
    }
    Ref ll = model.log_likelihood_ref(tape, params, rx, nullptr, false);
    return -ll->value[0];
}

}  // namespace

double nll_value(const FlowModel& model, const Conditioner* cond, ParameterStore& params,
                 const Dataset& data, const std::vector<size_t>& idx) {
    if (idx.empty()) throw ConfigError("nll_value: empty index set");
    double acc = 0.0;
    for (size_t i : idx) {
        Tensor inv;
        const Tensor* pinv = nullptr;
        if (cond) {
            inv = cond->invert_measurement(data.y[i]);
            pinv = &inv;
        }
        acc += sample_nll(model, cond, params, data.x[i], pinv);
    }
    return acc / static_cast<double>(idx.size());
}

TrainResult train(const FlowModel& model, const Conditioner* cond, ParameterStore& params,
                  const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    data.check();
    if (data.conditional() && cond == nullptr)
        throw ConfigError("train: dataset has measurements but no conditioner was given");
    if (!data.conditional() && cond != nullptr)
        throw ConfigError("train: conditioner given but the dataset has no measurements");
    if (cfg.alpha > 0.0 && (cond == nullptr || cond->trunk() != TrunkKind::Unet))
        throw ConfigError("train: alpha > 0 requires a unet-trunk conditioner");

    size_t n = data.x.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    {
        Rng shuf = Rng(cfg.seed).derive("train-split");
        for (size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(shuf.below(i))]);
    }
    size_t n_val = std::max<size_t>(1, static_cast<size_t>(std::floor(
                                           cfg.validation_split * static_cast<double>(n))));
    if (n_val >= n) throw ConfigError("train: validation split leaves no training data");
    std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<int64_t>(n_val));
    std::vector<size_t> train_idx(order.begin() + static_cast<int64_t>(n_val), order.end());

    // Invert each measurement once; the inversion operator is fixed.
    std::vector<Tensor> inv(n);
    if (cond)
        for (size_t i = 0; i < n; ++i) inv[i] = cond->invert_measurement(data.y[i]);

    TrainResult res;
    res.best_val_nll = std::numeric_limits<double>::infinity();
    double lr = cfg.lr;
    int64_t plateau_count = 0, no_improve = 0;
    AdamConfig adam;
    adam.lr = lr;
    double dq_sd = std::sqrt(cfg.dequant_variance);

    auto snapshot_best = [&](int64_t epoch, double val) {
        res.best = Checkpoint{};
        store_params(res.best, params, /*with_optimizer_state=*/true);
        res.best.set_meta("best.val_nll", format_double(val));
        res.best.set_meta("best.epoch", std::to_string(epoch));
        res.best.set_meta("train.lr", format_double(lr));
        res.best_val_nll = val;
        res.best_epoch = epoch;
    };

    auto validation_nll = [&]() {
        double acc = 0.0;
        for (size_t i : val_idx)
            acc += sample_nll(model, cond, params, data.x[i], cond ? &inv[i] : nullptr);
        return acc / static_cast<double>(val_idx.size());
    };

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = Rng(cfg.seed).derive("epoch-" + std::to_string(epoch));
        std::vector<size_t> sweep = train_idx;
        for (size_t i = sweep.size(); i > 1; --i)
            std::swap(sweep[i - 1], sweep[static_cast<size_t>(erng.below(i))]);

        double nll_sum = 0.0;
        size_t batch_count = 0;
        bool nan_hit = false;
        params.zero_grad();
        for (size_t bi = 0; bi < sweep.size() && !nan_hit; ++bi) {
            size_t i = sweep[bi];
            Tensor xin = data.x[i];
            if (dq_sd > 0.0) {
                Rng nz = erng.derive("dequant-" + std::to_string(i));
                for (int64_t k = 0; k < xin.numel(); ++k) xin[k] += dq_sd * nz.normal();
                xin.quantize();
            }
            try {
                Tape tape;
                Ref rx = tape.leaf(xin);
                Ref loss;
                double nllv;
                if (cond) {
                    ConditionerOutput co = cond->run_from_inversion(tape, params, inv[i]);
                    Ref ll =
                        model.log_likelihood_ref(tape, params, rx, &co.features, cfg.recompute);
                    nllv = -ll->value[0];
                    loss = scale(tape, ll, -1.0);
                    if (cfg.alpha > 0.0) {
                        Ref target = tape.leaf(xin);
                        Ref d = sub(tape, co.reconstruction, target);
                        loss = add(tape, loss,
                                   scale(tape, mean(tape, mul(tape, d, d)), cfg.alpha));
                    }
                } else {
                    Ref ll = model.log_likelihood_ref(tape, params, rx, nullptr, cfg.recompute);
                    nllv = -ll->value[0];
                    loss = scale(tape, ll, -1.0);
                }
                if (!std::isfinite(loss->value[0])) {
                    nan_hit = true;
                    break;
                }
                nll_sum += nllv;
                tape.backward(loss);
                params.collect_grads(tape);
            } catch (const NumericalError&) {
                nan_hit = true;
                break;
            }
            ++batch_count;
            if (batch_count == static_cast<size_t>(cfg.batch_size) || bi + 1 == sweep.size()) {
                double inv_cnt = 1.0 / static_cast<double>(batch_count);
                bool grad_finite = true;
                for (auto& [name, slot] : params) {
                    slot.grad.scale_inplace(inv_cnt);
                    if (!slot.grad.all_finite()) grad_finite = false;
                }
                if (!grad_finite) {
                    nan_hit = true;
                    break;
                }
                adam.lr = lr;
                params.adam_step(adam);
                params.zero_grad();
                batch_count = 0;
            }
        }
        if (nan_hit) {
            res.aborted_nan = true;
            break;
        }

        double train_nll = nll_sum / static_cast<double>(sweep.size());
        double val_nll;
        double roundtrip;
        try {
            val_nll = validation_nll();
            size_t probe = val_idx.front();
            if (cond) {
                std::vector<Tensor> feats = [&] {
                    Tape t;
                    ConditionerOutput co = cond->run_from_inversion(t, params, inv[probe]);
                    std::vector<Tensor> v;
                    for (Ref f : co.features) v.push_back(f->value);
                    return v;
                }();
                roundtrip = model.roundtrip_residual(params, data.x[probe], &feats);
            } else {
                roundtrip = model.roundtrip_residual(params, data.x[probe], nullptr);
            }
        } catch (const NumericalError&) {
            res.aborted_nan = true;
            break;
        }
        if (!std::isfinite(val_nll) || !std::isfinite(roundtrip)) {
            res.aborted_nan = true;
            break;
        }
        if (roundtrip > cfg.stability_threshold) res.stability_flag = true;
        res.history.push_back({epoch, train_nll, val_nll, lr, roundtrip});

        if (val_nll < res.best_val_nll) {
            snapshot_best(epoch, val_nll);
            plateau_count = 0;
            no_improve = 0;
        } else {
            ++plateau_count;
            ++no_improve;
            if (plateau_count >= cfg.plateau_patience) {
                lr *= cfg.plateau_factor;
                plateau_count = 0;
            }
            if (no_improve >= cfg.early_stop_patience) break;
        }
    }

    if (res.best_epoch < 0) {
        // Never reached a finite validation pass; checkpoint the
        // initial state so callers still get a usable archive.
        snapshot_best(-1, std::numeric_limits<double>::infinity());
    } else if (res.aborted_nan || res.history.empty() ||
               res.history.back().epoch != res.best_epoch) {
        restore_params(res.best, params);
    }
    return res;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
    std::vector<std::vector<std::string>> rows;
    for (const EpochRecord& r : history)
        rows.push_back({std::to_string(r.epoch), format_double(r.train_nll),
                        format_double(r.val_nll), format_double(r.lr),
                        format_double(r.roundtrip_residual)});
    write_csv(path, {"epoch", "train_nll", "val_nll", "lr", "roundtrip_residual"}, rows);
}

}  // namespace flowrecon
