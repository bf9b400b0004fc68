#include <doctest.h>

#include <cmath>

#include "flowrecon/tape.hpp"
#include "test_support.hpp"

using namespace flowrecon;

TEST_SUITE_BEGIN("tape");

namespace {
constexpr double kTol = 1e-5;

Tensor vin(Shape s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    return ts::rand_tensor(std::move(s), seed, lo, hi);
}
}  // namespace

TEST_CASE("elementwise binary ops match finite differences") {
    auto bin = [](Ref (*op)(Tape&, Ref, Ref)) {
        return [op](Tape& t, std::vector<Ref>& r) { return op(t, r[0], r[1]); };
    };
    CHECK(ts::max_grad_rel_err(bin(&add), {vin({3, 4}, 1), vin({3, 4}, 2)}) < kTol);
    CHECK(ts::max_grad_rel_err(bin(&sub), {vin({3, 4}, 3), vin({3, 4}, 4)}) < kTol);
    CHECK(ts::max_grad_rel_err(bin(&mul), {vin({3, 4}, 5), vin({3, 4}, 6)}) < kTol);
}

TEST_CASE("elementwise unary ops match finite differences") {
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return scale(t, r[0], -1.7); },
              {vin({5}, 10)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return add_scalar(t, r[0], 0.3); },
              {vin({5}, 11)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return exp_op(t, r[0]); },
              {vin({5}, 12)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return log_op(t, r[0]); },
              {vin({5}, 13, 0.5, 2.0)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return tanh_op(t, r[0]); },
              {vin({5}, 14)}) < kTol);
    // Keep rectifier inputs away from the kink at zero.
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return relu(t, r[0]); },
              {vin({8}, 15, 0.2, 1.0)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return relu(t, r[0]); },
              {vin({8}, 16, -1.0, -0.2)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return leaky_relu(t, r[0]); },
              {vin({8}, 17, 0.2, 1.0)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return leaky_relu(t, r[0]); },
              {vin({8}, 18, -1.0, -0.2)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return soft_clamp(t, r[0], 2.0); },
              {vin({8}, 19, -3.0, 3.0)}) < kTol);
}

TEST_CASE("leaky_relu slope and soft_clamp bound") {
    Tape t;
    Ref x = t.leaf(Tensor(Shape{2}, {-2.0, 3.0}));
    Ref y = leaky_relu(t, x);
    CHECK(y->value[0] == doctest::Approx(-0.4));
    CHECK(y->value[1] == doctest::Approx(3.0));
    Ref c = soft_clamp(t, t.leaf(Tensor(Shape{1}, {100.0})), 2.0);
    CHECK(c->value[0] == doctest::Approx(2.0).epsilon(1e-9));
    Ref c0 = soft_clamp(t, t.leaf(Tensor(Shape{1}, {1e-6})), 2.0);
    CHECK(c0->value[0] == doctest::Approx(1e-6).epsilon(1e-6));
}

TEST_CASE("linear algebra ops match finite differences") {
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return matmul(t, r[0], r[1]); },
              {vin({3, 4}, 20), vin({4, 2}, 21)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return matvec(t, r[0], r[1]); },
              {vin({3, 5}, 22), vin({5}, 23)}) < kTol);
}

TEST_CASE("matmul values") {
    Tape t;
    Ref a = t.leaf(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
    Ref b = t.leaf(Tensor(Shape{2, 2}, {5, 6, 7, 8}));
    Ref c = matmul(t, a, b);
    CHECK(c->value[0] == 19.0);
    CHECK(c->value[3] == 50.0);
    Ref w = t.leaf(Tensor(Shape{2, 3}, {1, 0, 2, 0, 1, -1}));
    Ref x = t.leaf(Tensor(Shape{3}, {3, 4, 5}));
    Ref y = matvec(t, w, x);
    CHECK(y->value[0] == 13.0);
    CHECK(y->value[1] == -1.0);
}

TEST_CASE("conv2d matches finite differences for stride 1 and 2") {
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return conv2d(t, r[0], r[1], 1); },
              {vin({2, 5, 5}, 30), vin({3, 2, 3, 3}, 31)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return conv2d(t, r[0], r[1], 2); },
              {vin({2, 6, 6}, 32), vin({3, 2, 3, 3}, 33)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return conv2d(t, r[0], r[1], 1); },
              {vin({2, 4, 4}, 34), vin({4, 2, 1, 1}, 35)}) < kTol);
}

TEST_CASE("conv2d shapes and validation") {
    Tape t;
    Ref x = t.leaf(vin({2, 6, 6}, 40));
    Ref w = t.leaf(vin({3, 2, 3, 3}, 41));
    CHECK(conv2d(t, x, w, 1)->value.shape() == Shape{3, 6, 6});
    CHECK(conv2d(t, x, w, 2)->value.shape() == Shape{3, 3, 3});
    Ref bad = t.leaf(vin({3, 2, 2, 2}, 42));
    CHECK_THROWS_AS(conv2d(t, x, bad, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(t, x, w, 3), ShapeError);
}

TEST_CASE("bias_add both forms match finite differences") {
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return bias_add(t, r[0], r[1]); },
              {vin({3, 4, 4}, 50), vin({3}, 51)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return bias_add(t, r[0], r[1]); },
              {vin({6}, 52), vin({6}, 53)}) < kTol);
}

TEST_CASE("reductions match finite differences and shapes") {
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return sum(t, r[0]); },
              {vin({3, 4}, 60)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return mean(t, r[0]); },
              {vin({3, 4}, 61)}) < kTol);
    Tape t;
    Ref s = sum(t, t.leaf(vin({3, 4}, 62)));
    CHECK(s->value.shape() == Shape{1});
    Ref m = mean(t, t.leaf(Tensor(Shape{4}, {1, 2, 3, 4})));
    CHECK(m->value[0] == doctest::Approx(2.5));
}

TEST_CASE("shape ops match finite differences") {
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return slice(t, r[0], 0, 1, 2); },
              {vin({4, 3, 3}, 70)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return slice(t, r[0], 0, 2, 3); },
              {vin({6}, 71)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return concat(t, r[0], r[1], 0); },
              {vin({2, 3, 3}, 72), vin({3, 3, 3}, 73)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return reshape(t, r[0], Shape{6}); },
              {vin({2, 3}, 74)}) < kTol);
}

TEST_CASE("slice and concat values") {
    Tape t;
    Ref x = t.leaf(Tensor(Shape{4}, {10, 11, 12, 13}));
    Ref s = slice(t, x, 0, 1, 2);
    CHECK(s->value.shape() == Shape{2});
    CHECK(s->value[0] == 11.0);
    CHECK(s->value[1] == 12.0);
    Ref a = t.leaf(Tensor(Shape{1, 2, 2}, {1, 2, 3, 4}));
    Ref b = t.leaf(Tensor(Shape{1, 2, 2}, {5, 6, 7, 8}));
    Ref c = concat(t, a, b, 0);
    CHECK(c->value.shape() == Shape{2, 2, 2});
    CHECK(c->value[4] == 5.0);
}

TEST_CASE("resampling ops match finite differences") {
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return avg_pool2(t, r[0]); },
              {vin({2, 4, 4}, 80)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return upsample_nearest2(t, r[0]); },
              {vin({2, 3, 3}, 81)}) < kTol);
    CHECK(ts::max_grad_rel_err(
              [](Tape& t, std::vector<Ref>& r) { return upsample_zero2(t, r[0]); },
              {vin({2, 3, 3}, 82)}) < kTol);
}

TEST_CASE("resampling values") {
    Tape t;
    Ref x = t.leaf(Tensor(Shape{1, 2, 2}, {1, 2, 3, 4}));
    Ref p = avg_pool2(t, x);
    CHECK(p->value.shape() == Shape{1, 1, 1});
    CHECK(p->value[0] == doctest::Approx(2.5));
    Ref un = upsample_nearest2(t, x);
    CHECK(un->value.shape() == Shape{1, 4, 4});
    CHECK(un->value.at3(0, 1, 1) == 1.0);
    CHECK(un->value.at3(0, 2, 3) == 4.0);
    Ref uz = upsample_zero2(t, x);
    CHECK(uz->value.at3(0, 0, 0) == 1.0);
    CHECK(uz->value.at3(0, 0, 1) == 0.0);
    CHECK(uz->value.at3(0, 1, 1) == 0.0);
}

TEST_CASE("gradient accumulates across fan-out") {
    // f(x) = sum(x*x) + 3*sum(x) uses x twice; df/dx = 2x + 3.
    Tensor x = vin({5}, 90);
    Tape t;
    Ref rx = t.leaf(x, true);
    Ref f = add(t, sum(t, mul(t, rx, rx)), scale(t, sum(t, rx), 3.0));
    t.backward(f);
    for (int64_t i = 0; i < 5; ++i)
        CHECK(rx->grad[i] == doctest::Approx(2.0 * x[i] + 3.0));
}

TEST_CASE("tape is single-use") {
    Tape t;
    Ref x = t.leaf(Tensor::scalar(2.0), true);
    Ref f = mul(t, x, x);
    t.backward(f);
    CHECK(x->grad[0] == doctest::Approx(4.0));
    CHECK(t.consumed());
    CHECK_THROWS_AS(t.backward(f), Error);
}

TEST_CASE("custom nodes participate in the backward pass") {
    Tape t;
    Tensor xv(Shape{3}, {1.0, 2.0, 3.0});
    Ref x = t.leaf(xv, true);
    Tensor doubled = xv;
    doubled.scale_inplace(2.0);
    Ref y = t.custom("double", {x}, doubled, [](TapeNode& nd) {
        Tensor g = nd.grad;
        g.scale_inplace(2.0);
        nd.inputs[0]->accumulate(g);
    });
    t.backward(sum(t, y));
    for (int64_t i = 0; i < 3; ++i) CHECK(x->grad[i] == doctest::Approx(2.0));
}

TEST_CASE("param leaves are tracked in creation order") {
    Tape t;
    t.leaf(Tensor::scalar(1.0), true, "w.a");
    t.leaf(Tensor::scalar(2.0), false);
    t.leaf(Tensor::scalar(3.0), true, "w.b");
    auto leaves = t.param_leaves();
    REQUIRE(leaves.size() == 2);
    CHECK(leaves[0]->param_name == "w.a");
    CHECK(leaves[1]->param_name == "w.b");
}

TEST_CASE("float32 ops quantize their results") {
    Tape t;
    Ref a = t.leaf(Tensor(Shape{1}, {1.0}, Dtype::Float32));
    Ref b = t.leaf(Tensor(Shape{1}, {1e-12}, Dtype::Float32));
    Ref c = add(t, a, b);
    CHECK(c->value[0] == 1.0);  // absorbed at float precision
    Ref d = add(t, t.leaf(Tensor(Shape{1}, {1.0})), t.leaf(Tensor(Shape{1}, {1e-12})));
    CHECK(d->value[0] == 1.0 + 1e-12);
}

TEST_SUITE_END();
