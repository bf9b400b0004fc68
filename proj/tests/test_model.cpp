#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "flowrecon/model.hpp"
#include "test_support.hpp"

using namespace flowrecon;

TEST_SUITE_BEGIN("model");

namespace {

void perturb(ParameterStore& params, uint64_t seed, double sd) {
    Rng rng(seed);
    for (auto& [name, slot] : params) {
        for (int64_t i = 0; i < slot.value.numel(); ++i) slot.value[i] += sd * rng.normal();
        slot.value.quantize();
    }
}

Tensor forward_values(const FlowModel& m, ParameterStore& params, const Tensor& x,
                      double* logdet = nullptr, const std::vector<Tensor>* cond = nullptr) {
    Tape tape;
    std::vector<Ref> cond_refs;
    if (cond)
        for (const Tensor& h : *cond) cond_refs.push_back(tape.leaf(h));
    FlowForward f = m.forward(tape, params, tape.leaf(x), cond ? &cond_refs : nullptr);
    if (logdet) *logdet = f.logdet->value[0];
    return f.z->value;
}

// ln|det| of the numeric Jacobian of x -> z.
double numeric_logdet(const FlowModel& m, ParameterStore& params, const Tensor& x) {
    int64_t n = x.numel();
    Eigen::MatrixXd J(n, n);
    Tensor p = x;
    const double eps = 1e-5;
    for (int64_t j = 0; j < n; ++j) {
        double v = x[j];
        p[j] = v + eps;
        Tensor zp = forward_values(m, params, p);
        p[j] = v - eps;
        Tensor zm = forward_values(m, params, p);
        p[j] = v;
        for (int64_t i = 0; i < n; ++i) J(i, j) = (zp[i] - zm[i]) / (2.0 * eps);
    }
    return std::log(std::abs(J.determinant()));
}

FlowModel single(Shape in, std::unique_ptr<FlowLayer> layer) {
    FlowModel m;
    m.set_input_shape(std::move(in));
    m.add(std::move(layer));
    m.finalize(BaseKind::StandardNormal);
    return m;
}

std::vector<Tensor> random_features(const FlowModel& m, uint64_t seed) {
    std::vector<Tensor> feats;
    uint64_t s = seed;
    for (const Shape& shp : m.cond_shapes()) feats.push_back(ts::rand_tensor(shp, s++, -0.5, 0.5));
    return feats;
}

}  // namespace

TEST_CASE("analytic logdet matches the numeric Jacobian per layer type") {
    struct Case {
        const char* what;
        FlowModel model;
        ParameterStore params;
        Shape in;
    };

    {
        ParameterStore params;
        auto cpl = std::make_unique<CouplingLayer>("c", CouplingKind::Affine, Shape{6},
                                                   SubnetSpec{.hidden = 8}, params, Rng(1),
                                                   Dtype::Float64);
        FlowModel m = single({6}, std::move(cpl));
        perturb(params, 2, 0.4);
        Tensor x = ts::rand_tensor({6}, 3);
        double ld = 0.0;
        forward_values(m, params, x, &ld);
        CHECK(ts::rel_err(ld, numeric_logdet(m, params, x)) < 1e-3);
    }
    {
        ParameterStore params;
        auto cpl = std::make_unique<CouplingLayer>("c", CouplingKind::Additive, Shape{6},
                                                   SubnetSpec{.hidden = 8}, params, Rng(1),
                                                   Dtype::Float64);
        FlowModel m = single({6}, std::move(cpl));
        perturb(params, 4, 0.4);
        Tensor x = ts::rand_tensor({6}, 5);
        double ld = 1.0;
        forward_values(m, params, x, &ld);
        CHECK(ld == 0.0);
        CHECK(std::abs(numeric_logdet(m, params, x)) < 1e-3);
    }
    {
        ParameterStore params;
        auto cpl = std::make_unique<CouplingLayer>("c", CouplingKind::Affine, Shape{4, 2, 2},
                                                   SubnetSpec{.hidden = 6}, params, Rng(1),
                                                   Dtype::Float64);
        FlowModel m = single({4, 2, 2}, std::move(cpl));
        perturb(params, 6, 0.3);
        Tensor x = ts::rand_tensor({4, 2, 2}, 7);
        double ld = 0.0;
        forward_values(m, params, x, &ld);
        CHECK(ts::rel_err(ld, numeric_logdet(m, params, x)) < 1e-3);
    }
    for (PermKind pk : {PermKind::RandomShuffle, PermKind::OrthogonalMix}) {
        ParameterStore params;
        FlowModel m = single({4, 2, 2}, std::make_unique<PermutationLayer>(pk, 4, 9));
        Tensor x = ts::rand_tensor({4, 2, 2}, 10);
        double ld = 1.0;
        forward_values(m, params, x, &ld);
        CHECK(ld == 0.0);
        CHECK(std::abs(numeric_logdet(m, params, x)) < 1e-3);
    }
    for (DownKind dk : {DownKind::Checkerboard, DownKind::Haar}) {
        ParameterStore params;
        FlowModel m = single({1, 4, 4}, std::make_unique<DownsampleLayer>(dk));
        Tensor x = ts::rand_tensor({1, 4, 4}, 11);
        double ld = 1.0;
        forward_values(m, params, x, &ld);
        CHECK(ld == 0.0);
        CHECK(std::abs(numeric_logdet(m, params, x)) < 1e-3);
    }
    {
        ParameterStore params;
        FlowModel m = single({2, 2, 2}, std::make_unique<FlattenLayer>());
        Tensor x = ts::rand_tensor({2, 2, 2}, 12);
        CHECK(std::abs(numeric_logdet(m, params, x)) < 1e-3);
    }
}

TEST_CASE("composite logdet matches the numeric Jacobian") {
    ParameterStore params;
    FlowModel m;
    m.set_input_shape({1, 4, 4});
    m.add(std::make_unique<DownsampleLayer>(DownKind::Checkerboard));
    m.add(std::make_unique<CouplingLayer>("c0", CouplingKind::Affine, Shape{4, 2, 2},
                                          SubnetSpec{.hidden = 6}, params, Rng(1),
                                          Dtype::Float64));
    m.add(std::make_unique<PermutationLayer>(PermKind::OrthogonalMix, 4, 13));
    m.add(std::make_unique<CouplingLayer>("c1", CouplingKind::Affine, Shape{4, 2, 2},
                                          SubnetSpec{.hidden = 6}, params, Rng(2),
                                          Dtype::Float64));
    m.finalize(BaseKind::StandardNormal);
    perturb(params, 14, 0.3);
    Tensor x = ts::rand_tensor({1, 4, 4}, 15);
    double ld = 0.0;
    forward_values(m, params, x, &ld);
    CHECK(ts::rel_err(ld, numeric_logdet(m, params, x)) < 1e-3);
    CHECK(m.roundtrip_residual(params, x) < 1e-11);
}

TEST_CASE("multi-scale builder: shapes, latent size, invertibility") {
    for (Dtype dt : {Dtype::Float32, Dtype::Float64}) {
        MultiScaleSpec spec;
        spec.input_shape = {1, 16, 16};
        spec.scales = 3;
        spec.hidden = 8;
        spec.dense_hidden = 16;
        spec.dtype = dt;
        ParameterStore params;
        FlowModel m = build_multiscale(spec, params);
        CHECK(m.latent_dim() == 256);
        CHECK(!m.conditional());
        CHECK(!m.describe().empty());
        perturb(params, 20, 0.04);
        Tensor x = ts::rand_tensor({1, 16, 16}, 21, -1, 1, dt);
        double tol = dt == Dtype::Float32 ? 1e-4 : 1e-10;
        CHECK(m.roundtrip_residual(params, x) < tol);
    }
}

TEST_CASE("iunet builder: shapes, latent size, invertibility") {
    for (Dtype dt : {Dtype::Float32, Dtype::Float64}) {
        IUNetSpec spec;
        spec.input_shape = {1, 16, 16};
        spec.scales = 3;
        spec.hidden = 8;
        spec.dtype = dt;
        ParameterStore params;
        FlowModel m = build_iunet(spec, params);
        CHECK(m.latent_dim() == 256);
        perturb(params, 22, 0.04);
        Tensor x = ts::rand_tensor({1, 16, 16}, 23, -1, 1, dt);
        double tol = dt == Dtype::Float32 ? 1e-4 : 1e-10;
        CHECK(m.roundtrip_residual(params, x) < tol);
    }
}

TEST_CASE("conditional multi-scale accepts features and inverts") {
    MultiScaleSpec spec;
    spec.input_shape = {1, 16, 16};
    spec.scales = 2;
    spec.hidden = 8;
    spec.dense_hidden = 16;
    spec.conditional = true;
    spec.cond_channels = 4;
    spec.cond_flat_dim = 8;
    spec.dtype = Dtype::Float64;
    ParameterStore params;
    FlowModel m = build_multiscale(spec, params);
    CHECK(m.conditional());
    CHECK(!m.cond_shapes().empty());
    perturb(params, 24, 0.1);
    Tensor x = ts::rand_tensor({1, 16, 16}, 25);
    std::vector<Tensor> feats = random_features(m, 26);
    CHECK(m.roundtrip_residual(params, x, &feats) < 1e-10);

    // Different features give a different latent code.
    std::vector<Tensor> feats2 = random_features(m, 260);
    Tensor z1 = forward_values(m, params, x, nullptr, &feats);
    Tensor z2 = forward_values(m, params, x, nullptr, &feats2);
    CHECK(max_abs_diff(z1, z2) > 1e-8);
}

TEST_CASE("conditional iunet accepts features and inverts") {
    IUNetSpec spec;
    spec.input_shape = {1, 16, 16};
    spec.scales = 2;
    spec.hidden = 8;
    spec.conditional = true;
    spec.cond_channels = 4;
    spec.dtype = Dtype::Float64;
    ParameterStore params;
    FlowModel m = build_iunet(spec, params);
    CHECK(m.conditional());
    perturb(params, 27, 0.2);
    Tensor x = ts::rand_tensor({1, 16, 16}, 28);
    std::vector<Tensor> feats = random_features(m, 29);
    CHECK(m.roundtrip_residual(params, x, &feats) < 1e-10);
}

TEST_CASE("dense flow builder") {
    DenseFlowSpec spec;
    spec.dim = 2;
    spec.couplings = 4;
    spec.hidden = 16;
    spec.dtype = Dtype::Float64;
    ParameterStore params;
    FlowModel m = build_dense_flow(spec, params);
    CHECK(m.latent_dim() == 2);
    perturb(params, 30, 0.3);
    Tensor x = ts::rand_tensor({2}, 31);
    CHECK(m.roundtrip_residual(params, x) < 1e-11);
    CHECK(std::isfinite(m.log_likelihood(params, x)));
}

TEST_CASE("compressed-sensing stack builder") {
    ParameterStore params;
    FlowModel m = build_cs_multiscale(params, BaseKind::StandardNormal, 1, Dtype::Float64,
                                      /*cond_channels=*/4, /*section_repeats=*/2);
    CHECK(m.input_shape() == Shape{1, 28, 28});
    CHECK(m.latent_dim() == 784);
    CHECK(m.conditional());
    perturb(params, 32, 0.05);
    Tensor x = ts::rand_tensor({1, 28, 28}, 33);
    std::vector<Tensor> feats = random_features(m, 34);
    CHECK(m.roundtrip_residual(params, x, &feats) < 1e-9);
}

TEST_CASE("identity-initialized model has the base NLL") {
    // Volume-preserving rearrangements + identity couplings: z is a
    // rearrangement of x, so log p(x) = log base(z) with zero logdet.
    MultiScaleSpec spec;
    spec.input_shape = {1, 8, 8};
    spec.scales = 2;
    spec.hidden = 8;
    spec.dense_hidden = 8;
    spec.dtype = Dtype::Float64;
    ParameterStore params;
    FlowModel m = build_multiscale(spec, params);
    Tensor x = Tensor::zeros({1, 8, 8});
    double expect = -0.5 * 64.0 * std::log(2.0 * M_PI);
    CHECK(m.log_likelihood(params, x) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("model guards") {
    FlowModel m;
    m.set_input_shape({6});
    ParameterStore params;
    m.add(std::make_unique<FlattenLayer>());
    Tape t;
    CHECK_THROWS_AS(m.forward(t, params, t.leaf(Tensor(Shape{6}, Dtype::Float64))), Error);
    m.finalize(BaseKind::StandardNormal);
    CHECK_THROWS_AS(m.inverse(Tensor(Shape{5}, Dtype::Float64), params), ShapeError);
    Tape t2;
    CHECK_THROWS_AS(m.forward(t2, params, t2.leaf(Tensor(Shape{7}, Dtype::Float64))),
                    ShapeError);
}

TEST_SUITE_END();
