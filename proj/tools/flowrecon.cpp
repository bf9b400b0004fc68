// Command-line front end: simulate synthetic datasets, train conditional
// flows, draw posterior reconstructions, and score them.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include "flowrecon/conditioner.hpp"
#include "flowrecon/config.hpp"
#include "flowrecon/infer.hpp"
#include "flowrecon/io.hpp"
#include "flowrecon/metrics.hpp"
#include "flowrecon/model.hpp"
#include "flowrecon/operators.hpp"
#include "flowrecon/phantoms.hpp"
#include "flowrecon/train.hpp"

namespace fs = std::filesystem;
using namespace flowrecon;

namespace {

std::string index_name(const std::string& stem, int64_t i) {
    std::ostringstream os;
    os << stem << "_" << std::setw(5) << std::setfill('0') << i << ".frt";
    return os.str();
}

Dtype dtype_from_config(const Config& cfg) {
    std::string d = cfg.get_string("arch.dtype", "f32");
    if (d == "f32") return Dtype::Float32;
    if (d == "f64") return Dtype::Float64;
    throw ConfigError("arch.dtype must be f32 or f64, got '" + d + "'");
}

CouplingKind coupling_from_config(const Config& cfg) {
    std::string c = cfg.get_string("arch.coupling", "affine");
    if (c == "affine") return CouplingKind::Affine;
    if (c == "additive") return CouplingKind::Additive;
    throw ConfigError("arch.coupling must be affine or additive, got '" + c + "'");
}

DownKind down_from_config(const Config& cfg) {
    std::string d = cfg.get_string("arch.down", "haar");
    if (d == "haar") return DownKind::Haar;
    if (d == "checkerboard") return DownKind::Checkerboard;
    throw ConfigError("arch.down must be haar or checkerboard, got '" + d + "'");
}

// Everything a command needs, assembled from the config file.
struct Experiment {
    Config cfg;
    std::string problem;  // cs | ct | mri | toy2d
    std::string out_dir;
    uint64_t seed = 1;
    int64_t size = 16;  // image extent, or 2 for toy2d
    std::unique_ptr<MeasurementModel> op;
    GaussianMixture2D mixture;

    bool conditional() const { return op != nullptr; }
    std::string data_dir() const { return out_dir + "/data"; }
    std::string checkpoint_path() const { return out_dir + "/checkpoint.fra"; }
    std::string recon_dir() const { return out_dir + "/recon"; }
};

// Touch every key of the experiment schema, then reject the rest, so a
// typo is reported no matter which command runs first.
void check_schema(const Config& c) {
    for (const char* k : {"problem.kind", "data.kind", "op.inversion", "op.noise_model",
                          "arch.kind", "arch.base", "arch.dtype", "arch.coupling", "arch.down",
                          "cond.trunk", "eval.range", "out.dir"})
        c.get_string(k, "");
    for (const char* k :
         {"problem.size", "op.m", "op.angles", "op.detectors", "op.acceleration", "data.count",
          "arch.seed", "arch.couplings", "arch.hidden", "arch.cond_dim", "arch.scales",
          "arch.cond_channels", "arch.sections", "cond.width", "train.plateau_patience",
          "train.patience", "train.batch", "train.epochs", "recon.images", "recon.samples",
          "recon.refine_iters"})
        c.get_int(k, 0);
    for (const char* k : {"problem.seed", "op.seed", "data.seed", "cond.seed", "train.seed"})
        c.get_u64(k, 0);
    for (const char* k :
         {"op.tv_lambda", "op.center_fraction", "op.noise", "op.photons", "arch.clamp",
          "train.lr", "train.plateau_factor", "train.dequant_variance", "train.alpha",
          "train.val_split", "train.stability_threshold", "recon.refine_lambda",
          "recon.refine_lr", "eval.fixed_range"})
        c.get_double(k, 0.0);
    for (const char* k : {"op.enabled", "cond.frozen", "train.recompute", "recon.keep_samples"})
        c.get_bool(k, false);
    c.reject_unknown();
}

Experiment load_experiment(const std::string& config_path, uint64_t seed_override,
                           bool have_seed, const std::string& out_override) {
    Experiment ex;
    ex.cfg = Config::from_file(config_path);
    const Config& c = ex.cfg;
    ex.problem = c.require_string("problem.kind");
    ex.seed = have_seed ? seed_override : c.get_u64("problem.seed", 1);
    ex.out_dir = !out_override.empty() ? out_override : c.get_string("out.dir", "out");

    if (ex.problem == "toy2d") {
        ex.size = 2;
        ex.mixture = mixture3();
        if (c.get_bool("op.enabled", false)) {
            int64_t m = c.get_int("op.m", 2);
            ex.op = std::make_unique<GaussianMatrixModel>(m, 2, c.get_u64("op.seed", 7));
        }
    } else if (ex.problem == "cs") {
        ex.size = c.get_int("problem.size", 16);
        int64_t n = ex.size * ex.size;
        int64_t m = c.get_int("op.m", n / 4);
        auto g = std::make_unique<GaussianMatrixModel>(m, n, c.get_u64("op.seed", 7),
                                                       Shape{1, ex.size, ex.size});
        std::string invk = c.get_string("op.inversion", "pinv");
        if (invk == "tv")
            g->use_tv_inversion(c.get_double("op.tv_lambda", 0.02));
        else if (invk != "pinv")
            throw ConfigError("op.inversion must be pinv or tv, got '" + invk + "'");
        ex.op = std::move(g);
    } else if (ex.problem == "ct") {
        ex.size = c.get_int("problem.size", 32);
        ex.op = std::make_unique<RadonModel>(c.get_int("op.angles", 45),
                                             c.get_int("op.detectors", 47), ex.size);
    } else if (ex.problem == "mri") {
        ex.size = c.get_int("problem.size", 16);
        SamplingMask mask =
            make_mask(ex.size, c.get_double("op.center_fraction", 0.08),
                      c.get_int("op.acceleration", 4), c.get_u64("op.seed", 7));
        ex.op = std::make_unique<FourierMaskModel>(std::move(mask), ex.size, ex.size);
    } else {
        throw ConfigError("problem.kind must be cs|ct|mri|toy2d, got '" + ex.problem + "'");
    }
    check_schema(ex.cfg);
    return ex;
}

FlowModel build_model(const Experiment& ex, ParameterStore& params) {
    const Config& c = ex.cfg;
    std::string kind = c.get_string("arch.kind", ex.problem == "toy2d" ? "dense" : "multiscale");
    BaseKind base = base_kind_from_name(c.get_string("arch.base", "normal"));
    Dtype dtype = dtype_from_config(c);
    uint64_t aseed = c.get_u64("arch.seed", 11);
    if (kind == "dense") {
        DenseFlowSpec s;
        s.dim = ex.size == 2 ? 2 : ex.size * ex.size;
        s.couplings = static_cast<int>(c.get_int("arch.couplings", 6));
        s.hidden = c.get_int("arch.hidden", 64);
        s.coupling = coupling_from_config(c);
        s.clamp = c.get_double("arch.clamp", 2.0);
        s.base = base;
        s.conditional = ex.conditional();
        s.cond_dim = c.get_int("arch.cond_dim", 16);
        s.seed = aseed;
        s.dtype = dtype;
        return build_dense_flow(s, params);
    }
    if (kind == "multiscale") {
        MultiScaleSpec s;
        s.input_shape = {1, ex.size, ex.size};
        s.scales = static_cast<int>(c.get_int("arch.scales", 3));
        s.couplings_per_block = static_cast<int>(c.get_int("arch.couplings", 2));
        s.down = down_from_config(c);
        s.coupling = coupling_from_config(c);
        s.clamp = c.get_double("arch.clamp", 2.0);
        s.hidden = c.get_int("arch.hidden", 32);
        s.base = base;
        s.conditional = ex.conditional();
        s.cond_channels = c.get_int("arch.cond_channels", 32);
        s.seed = aseed;
        s.dtype = dtype;
        return build_multiscale(s, params);
    }
    if (kind == "iunet") {
        IUNetSpec s;
        s.input_shape = {1, ex.size, ex.size};
        s.scales = static_cast<int>(c.get_int("arch.scales", 3));
        s.couplings_per_block = static_cast<int>(c.get_int("arch.couplings", 1));
        s.down = down_from_config(c);
        s.coupling = coupling_from_config(c);
        s.clamp = c.get_double("arch.clamp", 2.0);
        s.hidden = c.get_int("arch.hidden", 32);
        s.base = base;
        s.conditional = ex.conditional();
        s.cond_channels = c.get_int("arch.cond_channels", 32);
        s.seed = aseed;
        s.dtype = dtype;
        return build_iunet(s, params);
    }
    if (kind == "cs-appendix") {
        if (ex.size != 28) throw ConfigError("arch.kind cs-appendix requires problem.size = 28");
        return build_cs_multiscale(params, base, aseed, dtype,
                                   c.get_int("arch.cond_channels", 16),
                                   static_cast<int>(c.get_int("arch.sections", 8)));
    }
    throw ConfigError("arch.kind must be dense|multiscale|iunet|cs-appendix, got '" + kind + "'");
}

std::unique_ptr<Conditioner> build_conditioner(const Experiment& ex, const FlowModel& model,
                                               ParameterStore& params) {
    if (!model.conditional()) return nullptr;
    ConditionerSpec s;
    s.trunk = trunk_from_name(ex.cfg.get_string("cond.trunk", "cnn"));
    s.width = ex.cfg.get_int("cond.width", 32);
    s.frozen = ex.cfg.get_bool("cond.frozen", false);
    s.seed = ex.cfg.get_u64("cond.seed", 21);
    s.dtype = dtype_from_config(ex.cfg);
    return std::make_unique<Conditioner>(s, ex.op.get(), model.cond_shapes(), params);
}

Dataset load_dataset(const Experiment& ex) {
    const std::string manifest = ex.data_dir() + "/manifest.txt";
    if (!std::filesystem::exists(manifest))
        throw IoError("no dataset manifest at '" + manifest + "'; run simulate first");
    Config man = Config::from_file(manifest);
    int64_t count = man.get_int("count", -1);
    bool conditional = man.get_bool("conditional", false);
    if (count < 1) throw IoError("dataset manifest has no sample count");
    Dataset d;
    for (int64_t i = 0; i < count; ++i) {
        d.x.push_back(read_tensor(ex.data_dir() + "/" + index_name("x", i)));
        if (conditional) d.y.push_back(read_tensor(ex.data_dir() + "/" + index_name("y", i)));
    }
    return d;
}

// ---- commands --------------------------------------------------------------

int cmd_simulate(Experiment& ex) {
    const Config& c = ex.cfg;
    int64_t count = c.get_int("data.count", 200);
    uint64_t dseed = c.get_u64("data.seed", ex.seed);
    double noise = c.get_double("op.noise", 0.1);
    std::string noise_model =
        c.get_string("op.noise_model", ex.problem == "ct" ? "poisson" : "relative");
    double photons = c.get_double("op.photons", 4096.0);

    fs::create_directories(ex.data_dir());
    for (int64_t i = 0; i < count; ++i) {
        Tensor x;
        if (ex.problem == "toy2d") {
            Rng rng = Rng(dseed).derive("toy-sample-" + std::to_string(i));
            x = ex.mixture.sample(rng);
        } else {
            PhantomKind pk = phantom_from_name(
                c.get_string("data.kind", ex.problem == "cs" ? "shapes" : "ellipses"));
            Rng rng = Rng(dseed).derive("phantom-" + std::to_string(i));
            x = make_phantom(pk, ex.size, rng);
        }
        write_tensor(ex.data_dir() + "/" + index_name("x", i), x);
        if (ex.conditional()) {
            Tensor y = ex.op->forward(x);
            uint64_t nseed = Rng(dseed).derive("noise-" + std::to_string(i)).seed();
            if (noise_model == "poisson")
                y = poisson_lowdose_noise(y, photons, nseed);
            else if (noise_model == "relative")
                y = add_relative_gaussian_noise(y, noise, nseed);
            else if (noise_model != "none")
                throw ConfigError("op.noise_model must be relative|poisson|none");
            write_tensor(ex.data_dir() + "/" + index_name("y", i), y);
        }
    }
    std::ostringstream man;
    man << "count = " << count << "\n";
    man << "conditional = " << (ex.conditional() ? 1 : 0) << "\n";
    man << "problem = " << ex.problem << "\n";
    if (ex.op) man << "operator = " << ex.op->describe() << "\n";
    write_text(ex.data_dir() + "/manifest.txt", man.str());
    std::cout << "wrote " << count << " pairs to " << ex.data_dir() << "\n";
    return 0;
}

int cmd_train(Experiment& ex) {
    const Config& c = ex.cfg;
    ParameterStore params;
    FlowModel model = build_model(ex, params);
    std::unique_ptr<Conditioner> cond = build_conditioner(ex, model, params);
    Dataset data = load_dataset(ex);

    TrainConfig tc;
    tc.lr = c.get_double("train.lr", 1e-4);
    tc.plateau_factor = c.get_double("train.plateau_factor", 0.8);
    tc.plateau_patience = c.get_int("train.plateau_patience", 5);
    tc.early_stop_patience = c.get_int("train.patience", 10);
    tc.batch_size = c.get_int("train.batch", 16);
    tc.epochs = c.get_int("train.epochs", 30);
    tc.dequant_variance = c.get_double("train.dequant_variance", 0.0);
    tc.alpha = c.get_double("train.alpha", 0.0);
    tc.seed = c.get_u64("train.seed", ex.seed);
    tc.validation_split = c.get_double("train.val_split", 0.2);
    tc.recompute = c.get_bool("train.recompute", false);
    tc.stability_threshold = c.get_double("train.stability_threshold", 1e-2);

    TrainResult res = train(model, cond.get(), params, data, tc);
    fs::create_directories(ex.out_dir);
    res.best.set_meta("model", model.describe());
    if (cond) res.best.set_meta("conditioner", trunk_name(cond->trunk()));
    res.best.set_meta("stability_flag", res.stability_flag ? "1" : "0");
    res.best.set_meta("aborted_nan", res.aborted_nan ? "1" : "0");
    save_checkpoint(ex.checkpoint_path(), res.best);
    write_history_csv(ex.out_dir + "/history.csv", res.history);

    std::cout << "best validation NLL " << format_double(res.best_val_nll) << " at epoch "
              << res.best_epoch << "\n";
    if (res.aborted_nan) std::cerr << "training aborted on a non-finite loss\n";
    if (res.stability_flag) std::cerr << "round-trip stability monitor tripped\n";
    return (res.aborted_nan || res.stability_flag) ? 2 : 0;
}

int cmd_reconstruct(Experiment& ex) {
    const Config& c = ex.cfg;
    ParameterStore params;
    FlowModel model = build_model(ex, params);
    std::unique_ptr<Conditioner> cond = build_conditioner(ex, model, params);
    Checkpoint ck = load_checkpoint(ex.checkpoint_path());
    restore_params(ck, params);

    int64_t n_images = c.get_int("recon.images", 4);
    int64_t n_samples = c.get_int("recon.samples", ex.problem == "ct" ? 1000 : 100);
    bool keep = c.get_bool("recon.keep_samples", false);
    double refine_lambda = c.get_double("recon.refine_lambda", -1.0);
    int64_t refine_iters = c.get_int("recon.refine_iters", 100);
    double refine_lr = c.get_double("recon.refine_lr", 1e-4);

    Dataset data = load_dataset(ex);
    n_images = std::min<int64_t>(n_images, static_cast<int64_t>(data.x.size()));
    fs::create_directories(ex.recon_dir());
    for (int64_t i = 0; i < n_images; ++i) {
        const Tensor* y = ex.conditional() ? &data.y[static_cast<size_t>(i)] : nullptr;
        uint64_t sseed = Rng(ex.seed).derive("recon-" + std::to_string(i)).seed();
        PosteriorSummary ps =
            posterior_samples(model, cond.get(), params, y, n_samples, sseed, keep);
        std::string stem = ex.recon_dir() + "/" + std::to_string(i);
        write_tensor(stem + "_mean.frt", ps.mean);
        write_tensor(stem + "_std.frt", ps.stddev);
        if (ps.mean.rank() == 3) {
            write_pgm(stem + "_mean.pgm", ps.mean);
            write_pgm(stem + "_std.pgm", ps.stddev);
        }
        if (keep)
            for (size_t s = 0; s < ps.samples.size(); ++s)
                write_tensor(stem + "_sample" + std::to_string(s) + ".frt", ps.samples[s]);
        if (refine_lambda >= 0.0 && ex.conditional()) {
            RefineResult rr = sample_refine(model, cond.get(), params, *ex.op, *y,
                                            refine_lambda, refine_iters, refine_lr, sseed);
            write_tensor(stem + "_refine_init.frt", rr.initial);
            write_tensor(stem + "_refined.frt", rr.image);
            std::vector<std::vector<std::string>> rows;
            for (size_t t = 0; t < rr.objective_trace.size(); ++t)
                rows.push_back({std::to_string(t), format_double(rr.objective_trace[t])});
            write_csv(stem + "_refine_trace.csv", {"iteration", "objective"}, rows);
        }
    }
    std::cout << "wrote " << n_images << " reconstructions to " << ex.recon_dir() << "\n";
    return 0;
}

int cmd_evaluate(Experiment& ex) {
    const Config& c = ex.cfg;
    int64_t n_images = c.get_int("recon.images", 4);
    std::string range_mode = c.get_string("eval.range", "minmax");
    double fixed = c.get_double("eval.fixed_range", 1.0);
    RangeMode rm;
    if (range_mode == "minmax")
        rm = RangeMode::MinMax;
    else if (range_mode == "fixed")
        rm = RangeMode::Fixed;
    else
        throw ConfigError("eval.range must be minmax or fixed, got '" + range_mode + "'");

    Dataset data = load_dataset(ex);
    n_images = std::min<int64_t>(n_images, static_cast<int64_t>(data.x.size()));
    std::vector<std::vector<std::string>> rows;
    double psum = 0, ssum = 0, p2 = 0, s2 = 0;
    int64_t used = 0;
    for (int64_t i = 0; i < n_images; ++i) {
        std::string stem = ex.recon_dir() + "/" + std::to_string(i);
        Tensor mean = read_tensor(stem + "_mean.frt");
        const Tensor& ref = data.x[static_cast<size_t>(i)];
        double p = psnr(mean, ref, rm, fixed);
        double s = mean.rank() == 3 ? ssim(mean, ref, rm, fixed) : 0.0;
        rows.push_back({std::to_string(i), format_double(p), format_double(s)});
        if (std::isfinite(p)) {
            psum += p;
            p2 += p * p;
            ssum += s;
            s2 += s * s;
            ++used;
        }
    }
    if (used > 0) {
        double pm = psum / used, sm = ssum / used;
        double psd = std::sqrt(std::max(0.0, p2 / used - pm * pm));
        double ssd = std::sqrt(std::max(0.0, s2 / used - sm * sm));
        rows.push_back({"mean±std", format_double(pm) + "±" + format_double(psd),
                        format_double(sm) + "±" + format_double(ssd)});
        std::cout << "PSNR " << pm << " ± " << psd << " dB, SSIM " << sm << " ± " << ssd << "\n";
    }
    write_csv(ex.out_dir + "/metrics.csv", {"id", "psnr", "ssim"}, rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional normalizing flows for linear inverse problems"};
    app.require_subcommand(1);
    std::string config_path, out_override;
    uint64_t seed_override = 0;
    bool have_seed = false;
    app.add_option("--config", config_path, "experiment config file")->required();
    app.add_option("--seed", seed_override, "seed override")->each([&](const std::string&) {
        have_seed = true;
    });
    app.add_option("--out", out_override, "output directory override");
    auto* sim = app.add_subcommand("simulate", "generate a synthetic paired dataset");
    auto* trn = app.add_subcommand("train", "train the flow (and conditioner)");
    auto* rec = app.add_subcommand("reconstruct", "posterior sampling reconstruction");
    auto* evl = app.add_subcommand("evaluate", "PSNR/SSIM against references");
    // Accept `flowrecon <command> --config ...`: flags given after the
    // subcommand fall through to the top-level options.
    for (CLI::App* sub : {sim, trn, rec, evl}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        Experiment ex = load_experiment(config_path, seed_override, have_seed, out_override);
        if (sim->parsed()) return cmd_simulate(ex);
        if (trn->parsed()) return cmd_train(ex);
        if (rec->parsed()) return cmd_reconstruct(ex);
        if (evl->parsed()) return cmd_evaluate(ex);
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
