#include "flowrecon/infer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

namespace flowrecon {

int64_t thread_count() {
    if (const char* env = std::getenv("FLOWRECON_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end && *end == '\0' && v >= 1) return static_cast<int64_t>(v);
        throw ConfigError("FLOWRECON_THREADS must be a positive integer, got '" +
                          std::string(env) + "'");
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int64_t>(hw);
}

PosteriorSummary posterior_samples(const FlowModel& model, const Conditioner* cond,
                                   ParameterStore& params, const Tensor* y, int64_t n,
                                   uint64_t seed, bool keep_samples) {
    if (n < 1) throw ConfigError("posterior_samples: sample count must be >= 1");
    if (model.conditional() && (cond == nullptr || y == nullptr))
        throw ConfigError("posterior_samples: conditional model needs a conditioner and y");

    std::vector<Tensor> feats;
    const std::vector<Tensor>* pfeats = nullptr;
    if (model.conditional()) {
        feats = cond->condition_values(params, *y);
        pfeats = &feats;
    }

    std::vector<Tensor> samples(static_cast<size_t>(n));
    const BaseDistribution& base = model.base();
    auto worker = [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            Rng rng = Rng(seed).derive("posterior-sample-" + std::to_string(i));
            Tensor z = base.sample(rng);
            samples[static_cast<size_t>(i)] = model.inverse(z, params, pfeats);
        }
    };
    int64_t workers = std::min<int64_t>(thread_count(), n);
    if (workers <= 1) {
        worker(0, n);
    } else {
        std::vector<std::thread> pool;
        int64_t chunk = (n + workers - 1) / workers;
        for (int64_t w = 0; w < workers; ++w) {
            int64_t lo = w * chunk, hi = std::min(n, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(worker, lo, hi);
        }
        for (auto& t : pool) t.join();
    }

    PosteriorSummary out;
    out.count = n;
    out.mean = Tensor::zeros(samples[0].shape());
    for (const Tensor& s : samples) out.mean.add_scaled(s, 1.0 / static_cast<double>(n));
    Tensor var = Tensor::zeros(samples[0].shape());
    for (const Tensor& s : samples)
        for (int64_t i = 0; i < var.numel(); ++i) {
            double d = s[i] - out.mean[i];
            var[i] += d * d / static_cast<double>(n);
        }
    out.stddev = Tensor(var.shape(), var.dtype());
    for (int64_t i = 0; i < var.numel(); ++i) out.stddev[i] = std::sqrt(var[i]);
    if (keep_samples) out.samples = std::move(samples);
    return out;
}

RefineResult sample_refine(const FlowModel& model, const Conditioner* cond,
                           ParameterStore& params, const MeasurementModel& op, const Tensor& y,
                           double lambda, int64_t iterations, double lr, uint64_t seed,
                           const Tensor* z0) {
    if (lambda < 0.0) throw ConfigError("sample_refine: lambda must be >= 0");
    if (iterations < 1) throw ConfigError("sample_refine: iterations must be >= 1");

    std::vector<Tensor> feats;
    const std::vector<Tensor>* pfeats = nullptr;
    if (model.conditional()) {
        if (cond == nullptr)
            throw ConfigError("sample_refine: conditional model needs a conditioner");
        feats = cond->condition_values(params, y);
        pfeats = &feats;
    }

    Tensor z;
    if (z0) {
        z = *z0;
    } else {
        Rng rng = Rng(seed).derive("refine-init");
        z = model.base().sample(rng);
    }
    Tensor x = model.inverse(z, params, pfeats);

    RefineResult res;
    res.initial = x;
    Tensor best = x;
    double best_obj = std::numeric_limits<double>::infinity();

    std::vector<Ref> feat_refs;
    for (int64_t it = 0; it < iterations; ++it) {
        Tape tape;
        Ref rx = tape.leaf(x, /*requires_grad=*/true);
        Ref ry = tape.leaf(y);
        Ref r = sub(tape, op.forward_ref(tape, rx), ry);
        Ref obj = sum(tape, mul(tape, r, r));
        if (lambda > 0.0) {
            feat_refs.clear();
            if (pfeats)
                for (const Tensor& f : feats) feat_refs.push_back(tape.leaf(f));
            Ref ll = model.log_likelihood_ref(tape, params, rx,
                                              pfeats ? &feat_refs : nullptr, false);
            obj = sub(tape, obj, scale(tape, ll, lambda));
        }
        double ov = obj->value[0];
        if (!std::isfinite(ov)) {
            res.stopped_nan = true;
            break;
        }
        if (ov < best_obj) {
            best_obj = ov;
            best = x;
        }
        res.objective_trace.push_back(ov);
        try {
            tape.backward(obj);
        } catch (const NumericalError&) {
            res.stopped_nan = true;
            break;
        }
        if (!rx->grad_ready || !rx->grad.all_finite()) {
            res.stopped_nan = true;
            break;
        }
        x.add_scaled(rx->grad, -lr);
        x.quantize();
    }
    res.image = res.stopped_nan ? best : x;
    return res;
}

}  // namespace flowrecon
