#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "flowrecon/tensor.hpp"

namespace flowrecon {

class Tape;

// One recorded primitive application. The backward rule consumes only
// the cached value/inputs and the incoming gradient.
struct TapeNode {
    std::string op;
    Tensor value;
    Tensor grad;       // allocated lazily, always Float64
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<TapeNode*> inputs;
    std::function<void(TapeNode&)> backward_fn;
    std::string param_name;  // nonempty for parameter leaves

    void ensure_grad();
    void accumulate(const Tensor& g);
};

using Ref = TapeNode*;

// Eager single-use tape. Nodes are appended in topological order by
// construction; backward walks them in reverse.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf holding a constant or an input; set requires_grad to obtain
    // d(output)/d(leaf) after backward.
    Ref leaf(Tensor value, bool requires_grad = false, std::string param_name = "");

    // Escape hatch for ops with hand-written backward rules (linear
    // measurement operators, orthogonal mixes, recomputing couplings).
    Ref custom(std::string op, std::vector<Ref> inputs, Tensor value,
               std::function<void(TapeNode&)> backward_fn);

    // Reverse pass from `output` seeded with `seed` (same shape as the
    // output value). Tapes are single-use; a second call throws.
    void backward(Ref output, const Tensor& seed);
    void backward(Ref output);  // scalar output, seed = 1

    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }

    size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Parameter leaves recorded on this tape, in creation order.
    std::vector<Ref> param_leaves();

private:
    friend Ref record(Tape&, std::string, std::vector<Ref>, Tensor,
                      std::function<void(TapeNode&)>);
    std::deque<TapeNode> nodes_;
    bool consumed_ = false;
    bool check_finite_ = false;
};

Ref record(Tape& tape, std::string op, std::vector<Ref> inputs, Tensor value,
           std::function<void(TapeNode&)> backward_fn);

// ---- primitive operations -------------------------------------------------

Ref add(Tape& t, Ref a, Ref b);
Ref sub(Tape& t, Ref a, Ref b);
Ref mul(Tape& t, Ref a, Ref b);
Ref scale(Tape& t, Ref a, double c);
Ref add_scalar(Tape& t, Ref a, double c);
Ref exp_op(Tape& t, Ref a);
Ref log_op(Tape& t, Ref a);
Ref tanh_op(Tape& t, Ref a);
Ref relu(Tape& t, Ref a);
Ref leaky_relu(Tape& t, Ref a, double slope = 0.2);

// Soft clamp c*tanh(a/c); identity-like near zero, bounded by +-c.
Ref soft_clamp(Tape& t, Ref a, double c);

Ref matmul(Tape& t, Ref a, Ref b);   // (m,k) x (k,n)
Ref matvec(Tape& t, Ref w, Ref x);   // (m,n) x (n)

// 2D convolution over (c,h,w), odd square kernel, same padding,
// stride 1 or 2.
Ref conv2d(Tape& t, Ref x, Ref w, int stride = 1);
Ref bias_add(Tape& t, Ref x, Ref b);  // b has extent channels (rank 3 x) or matches x (rank 1)

Ref sum(Tape& t, Ref a);
Ref mean(Tape& t, Ref a);

Ref slice(Tape& t, Ref a, int64_t axis, int64_t start, int64_t len);
Ref concat(Tape& t, Ref a, Ref b, int64_t axis);
Ref reshape(Tape& t, Ref a, Shape shape);

Ref avg_pool2(Tape& t, Ref a);           // (c,h,w) -> (c,h/2,w/2)
Ref upsample_nearest2(Tape& t, Ref a);   // (c,h,w) -> (c,2h,2w)
Ref upsample_zero2(Tape& t, Ref a);      // zero-insertion (transposed) upsampling

}  // namespace flowrecon
