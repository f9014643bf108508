#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mome/common.hpp"

namespace mome {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

/// Lightweight handle to a node on a Tape. Values live in the tape; handles
/// stay valid for the tape's lifetime.
class Tensor {
  public:
    Tensor() = default;
    bool valid() const { return tape_ != nullptr; }
    const Shape& shape() const;
    int rows() const;  // rank-1 tensors read as 1 x n
    int cols() const;
    std::span<const double> values() const;
    std::span<const double> grad() const;
    double scalar() const;
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

  private:
    friend class Tape;
    Tensor(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Row-major boolean mask over an n x m attention problem.
/// blocked(r, c) == true means key c must not be attended by query r.
struct AttnMask {
    const std::uint8_t* data = nullptr;
    int n = 0;
    int m = 0;
    bool blocked(int r, int c) const { return data[static_cast<std::size_t>(r) * m + c] != 0; }
};

/// Dynamic reverse-mode tape. Nodes are appended in construction order,
/// which is already topological; backward() walks them in reverse exactly
/// once. One tape per forward pass; distinct tapes are independent and may
/// live on distinct threads.
class Tape {
  public:
    explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor leaf(Shape shape, std::vector<double> values);
    Tensor zeros(Shape shape);

    /// Seeds d(loss)/d(loss)=1 and propagates to every node. The loss must
    /// be a scalar; a second call without reset() is a usage error.
    void backward(const Tensor& loss);
    void reset();

    bool grad_enabled() const { return grad_; }
    bool backward_done() const { return backward_done_; }
    std::size_t size() const { return nodes_.size(); }

    // --- internals shared with the op implementations ---
    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad;
        std::function<void(Tape&)> back;  // empty for leaves / no-grad tapes
    };
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Tensor emplace(Shape shape, std::vector<double> values, std::function<void(Tape&)> back);

  private:
    std::vector<Node> nodes_;
    bool grad_ = true;
    bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Ops. All operands must live on the same tape; shape violations raise
// DimensionError. Every op is differentiable on its documented domain.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// alpha * x + beta, elementwise.
Tensor affine(const Tensor& x, double alpha, double beta);
Tensor scale(const Tensor& x, double alpha);
/// x[m x n] + b broadcast over rows; b is rank-1 [n] or [1 x n].
Tensor add_rowvec(const Tensor& x, const Tensor& b);
/// Scales row r of x by factors[r]; factors are compile-time constants.
Tensor scale_rows(const Tensor& x, std::vector<double> factors);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a^T * b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor gather_rows(const Tensor& a, std::vector<int> rows);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor abs_op(const Tensor& x);
Tensor pow_const(const Tensor& x, double p);
/// Clamps into [lo, hi]; gradient is zero where clamped.
Tensor clamp_const(const Tensor& x, double lo, double hi);

/// Numerically stable softmax along `axis` of a rank-2 tensor
/// (axis 1 = across each row). Rank-1 input behaves as a single row.
Tensor softmax(const Tensor& x, int axis = 1);
Tensor log_softmax_rows(const Tensor& x);

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Fused multi-head scaled-dot-product attention over already-projected
/// q [n x D], k [m x D], v [m x D]. Blocked logits are -inf before softmax;
/// a fully blocked query row yields a zero context row (not NaN) and
/// contributes no gradient. heads must divide D.
Tensor attn_heads(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                  const AttnMask* mask = nullptr);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---------------------------------------------------------------------------
// Persistent parameters and the optimizer. Parameters outlive tapes; each
// forward pass binds them in as leaves and accumulates leaf gradients back
// at a single merge point (Binding::accumulate).
// ---------------------------------------------------------------------------

struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> m;  // first-moment state (moment-based kind)
    std::vector<double> v;  // second-moment state
    bool trainable = true;
};

class ParamStore {
  public:
    Param& add(const std::string& name, Shape shape, std::vector<double> init,
               bool trainable = true);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    Param* find(const std::string& name);
    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }
    std::vector<std::string> manifest() const;
    void zero_grad();
    /// Concatenated little-endian value bytes of params matching a name
    /// prefix; used by freeze tests and checkpoint digests.
    std::vector<unsigned char> value_bytes(const std::string& prefix = "") const;

  private:
    std::vector<Param> params_;
};

/// Bridges a ParamStore and one Tape: use() injects a parameter as a leaf,
/// accumulate() adds the leaf grads back into Param::grad.
class Binding {
  public:
    explicit Binding(Tape& tape) : tape_(&tape) {}
    Tensor use(Param& p);
    void accumulate();
    /// Moves the per-parameter leaf gradients out instead of accumulating;
    /// lets worker threads hand grads to a serialized merge point.
    std::vector<std::pair<Param*, std::vector<double>>> take_grads();

  private:
    Tape* tape_;
    std::vector<std::pair<Param*, Tensor>> bound_;
};

enum class OptKind { Sgd, Adam };

struct Optimizer {
    OptKind kind = OptKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;

    /// Applies one update to every trainable parameter accepted by `filter`
    /// (all trainable params when filter is empty). Gradients are left
    /// untouched; call ParamStore::zero_grad between steps.
    void step(ParamStore& store, const std::function<bool(const Param&)>& filter = {});
};

}  // namespace mome
