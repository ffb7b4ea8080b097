#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace mgtcom {

using Matrix = Eigen::MatrixXd;

class Tape;

// Handle to a tape node. Cheap to copy; valid for the tape's lifetime.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Single-step computation graph with reverse-mode differentiation over
// dense 2-D double tensors. Nodes are created in topological order, so the
// backward pass is a reverse sweep that visits each op exactly once. A tape
// and its tensors are confined to one worker; build, call backward once,
// then drop the tape.
class Tape {
public:
    Var input(Matrix value, bool requires_grad = false);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    // Broadcast-add a 1 x N row vector to every row of an M x N matrix.
    Var add_rowvec(Var a, Var b);
    Var scale(Var a, double s);
    Var rowwise_concat(const std::vector<Var>& parts);
    Var elementwise_mul(Var a, Var b);
    Var gelu(Var a);  // tanh approximation
    Var sigmoid(Var a);
    // Train-mode dropout: keep-mask entries scaled by 1/(1 - rate). The
    // mask is supplied by the caller so sampling stays outside the tape.
    Var dropout(Var a, const Eigen::ArrayXXd& mask, double rate);
    Var reduce_mean(Var a);   // 1x1
    Var l2_norm_sq(Var a);    // 1x1
    // max over rows of neg (N x 1) of max(0, neg_i - pos + delta); pos is 1x1.
    Var hinge_max(Var neg, Var pos, double delta);
    Var transpose(Var a);
    // Gather rows; backward scatter-adds.
    Var rows(Var a, std::vector<int> indices);

    // Escape hatch for fused ops (graph convolution, feature assembly).
    // backward receives the node's output gradient and the tape; it must
    // accumulate into the inputs via accum_grad.
    Var custom(const std::vector<Var>& inputs, Matrix value,
               std::function<void(Tape&, const Matrix& gout)> backward);

    // Runs the reverse sweep from a scalar root.
    void backward(Var root);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    // Gradient of the last backward root w.r.t. v (zeros if untouched).
    Matrix grad(Var v) const;
    bool grad_touched(Var v) const { return nodes_[v.id].grad_live; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    void accum_grad(Var v, const Matrix& g);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;  // allocated on first touch
        bool requires_grad = false;
        bool grad_live = false;
        std::function<void(Tape&)> backward;
    };
    // deque: value()/grad() references stay valid while new nodes are added
    std::deque<Node> nodes_;

    Var make(Matrix value, bool requires_grad, std::function<void(Tape&)> bw);
    void check_same_shape(Var a, Var b, const char* op) const;
};

// Per-parameter master values, indexable and stable across steps.
class ParamStore {
public:
    int add(std::string name, Matrix init);
    Matrix& operator[](int i) { return params_[i]; }
    const Matrix& operator[](int i) const { return params_[i]; }
    const std::string& name(int i) const { return names_[i]; }
    std::size_t size() const { return params_.size(); }

private:
    std::vector<Matrix> params_;
    std::vector<std::string> names_;
};

// Adaptive-moment (Adam) optimizer state over a ParamStore.
struct AdamConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    AdamOptimizer() = default;
    AdamOptimizer(const ParamStore& store, AdamConfig cfg);

    // grads aligned with the store; a 0x0 matrix means zero gradient.
    // Throws on non-finite gradients, naming the parameter.
    void step(ParamStore& store, const std::vector<Matrix>& grads);

    long step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

    // Reinstates serialized optimizer state (checkpoint loading).
    void restore(std::vector<Matrix> m_in, std::vector<Matrix> v_in, long step_in) {
        m = std::move(m_in);
        v = std::move(v_in);
        step_ = step_in;
    }

    std::vector<Matrix> m, v;  // first/second moment accumulators

private:
    AdamConfig cfg_;
    long step_ = 0;
};

}  // namespace mgtcom
