#include "mgtcom/tensor.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace mgtcom {

Var Tape::make(Matrix value, bool requires_grad, std::function<void(Tape&)> bw) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_same_shape(Var a, Var b, const char* op) const {
    const Matrix& x = nodes_[a.id].value;
    const Matrix& y = nodes_[b.id].value;
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                                    " vs " + std::to_string(y.rows()) + "x" +
                                    std::to_string(y.cols()));
    }
}

void Tape::accum_grad(Var v, const Matrix& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (!n.grad_live) {
        n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        n.grad_live = true;
    }
    n.grad += g;
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad_live) return n.grad;
    return Matrix::Zero(n.value.rows(), n.value.cols());
}

Var Tape::input(Matrix value, bool requires_grad) {
    return make(std::move(value), requires_grad, nullptr);
}

Var Tape::matmul(Var a, Var b) {
    const Matrix& A = nodes_[a.id].value;
    const Matrix& B = nodes_[b.id].value;
    if (A.cols() != B.rows()) {
        throw std::invalid_argument("matmul: inner dimensions " + std::to_string(A.cols()) +
                                    " vs " + std::to_string(B.rows()));
    }
    bool rg = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    Var out = make(A * B, rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, b, out](Tape& t) {
            const Matrix& g = t.nodes_[out.id].grad;
            t.accum_grad(a, g * t.nodes_[b.id].value.transpose());
            t.accum_grad(b, t.nodes_[a.id].value.transpose() * g);
        };
    }
    return out;
}

Var Tape::add(Var a, Var b) {
    check_same_shape(a, b, "add");
    bool rg = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    Var out = make(nodes_[a.id].value + nodes_[b.id].value, rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, b, out](Tape& t) {
            const Matrix& g = t.nodes_[out.id].grad;
            t.accum_grad(a, g);
            t.accum_grad(b, g);
        };
    }
    return out;
}

Var Tape::add_rowvec(Var a, Var b) {
    const Matrix& A = nodes_[a.id].value;
    const Matrix& B = nodes_[b.id].value;
    if (B.rows() != 1 || B.cols() != A.cols()) {
        throw std::invalid_argument("add_rowvec: expected 1x" + std::to_string(A.cols()) +
                                    " bias, got " + std::to_string(B.rows()) + "x" +
                                    std::to_string(B.cols()));
    }
    bool rg = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    Matrix out_v = A.rowwise() + B.row(0);
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, b, out](Tape& t) {
            const Matrix& g = t.nodes_[out.id].grad;
            t.accum_grad(a, g);
            t.accum_grad(b, g.colwise().sum());
        };
    }
    return out;
}

Var Tape::scale(Var a, double s) {
    bool rg = nodes_[a.id].requires_grad;
    Var out = make(nodes_[a.id].value * s, rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, s, out](Tape& t) {
            t.accum_grad(a, t.nodes_[out.id].grad * s);
        };
    }
    return out;
}

Var Tape::rowwise_concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("rowwise_concat: no inputs");
    Eigen::Index rows = nodes_[parts[0].id].value.rows();
    Eigen::Index cols = 0;
    bool rg = false;
    for (Var p : parts) {
        const Matrix& m = nodes_[p.id].value;
        if (m.rows() != rows) throw std::invalid_argument("rowwise_concat: row count mismatch");
        cols += m.cols();
        rg = rg || nodes_[p.id].requires_grad;
    }
    Matrix out_v(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        const Matrix& m = nodes_[p.id].value;
        out_v.middleCols(at, m.cols()) = m;
        at += m.cols();
    }
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg) {
        std::vector<Var> held = parts;
        nodes_[out.id].backward = [held, out](Tape& t) {
            const Matrix& g = t.nodes_[out.id].grad;
            Eigen::Index at = 0;
            for (Var p : held) {
                Eigen::Index w = t.nodes_[p.id].value.cols();
                t.accum_grad(p, g.middleCols(at, w));
                at += w;
            }
        };
    }
    return out;
}

Var Tape::elementwise_mul(Var a, Var b) {
    check_same_shape(a, b, "elementwise_mul");
    bool rg = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    Matrix out_v = nodes_[a.id].value.cwiseProduct(nodes_[b.id].value);
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, b, out](Tape& t) {
            const Matrix& g = t.nodes_[out.id].grad;
            t.accum_grad(a, g.cwiseProduct(t.nodes_[b.id].value));
            t.accum_grad(b, g.cwiseProduct(t.nodes_[a.id].value));
        };
    }
    return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var Tape::gelu(Var a) {
    const Matrix& A = nodes_[a.id].value;
    bool rg = nodes_[a.id].requires_grad;
    Matrix out_v = A.unaryExpr([](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    });
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, out](Tape& t) {
            const Matrix& x = t.nodes_[a.id].value;
            Matrix d = x.unaryExpr([](double v) {
                double u = kGeluC * (v + kGeluA * v * v * v);
                double th = std::tanh(u);
                double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
            });
            t.accum_grad(a, t.nodes_[out.id].grad.cwiseProduct(d));
        };
    }
    return out;
}

Var Tape::sigmoid(Var a) {
    bool rg = nodes_[a.id].requires_grad;
    Matrix out_v = nodes_[a.id].value.unaryExpr(
        [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, out](Tape& t) {
            const Matrix& s = t.nodes_[out.id].value;
            Matrix d = s.array() * (1.0 - s.array());
            t.accum_grad(a, t.nodes_[out.id].grad.cwiseProduct(d));
        };
    }
    return out;
}

Var Tape::dropout(Var a, const Eigen::ArrayXXd& mask, double rate) {
    const Matrix& A = nodes_[a.id].value;
    if (mask.rows() != A.rows() || mask.cols() != A.cols()) {
        throw std::invalid_argument("dropout: mask shape mismatch");
    }
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    double inv_keep = 1.0 / (1.0 - rate);
    bool rg = nodes_[a.id].requires_grad;
    Matrix out_v = (A.array() * mask * inv_keep).matrix();
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg) {
        auto held = std::make_shared<Eigen::ArrayXXd>(mask);
        nodes_[out.id].backward = [a, held, inv_keep, out](Tape& t) {
            t.accum_grad(a, (t.nodes_[out.id].grad.array() * (*held) * inv_keep).matrix());
        };
    }
    return out;
}

Var Tape::reduce_mean(Var a) {
    const Matrix& A = nodes_[a.id].value;
    if (A.size() == 0) throw std::invalid_argument("reduce_mean: empty input");
    bool rg = nodes_[a.id].requires_grad;
    Matrix out_v(1, 1);
    out_v(0, 0) = A.mean();
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, out](Tape& t) {
            const Matrix& x = t.nodes_[a.id].value;
            double g = t.nodes_[out.id].grad(0, 0) / static_cast<double>(x.size());
            t.accum_grad(a, Matrix::Constant(x.rows(), x.cols(), g));
        };
    }
    return out;
}

Var Tape::l2_norm_sq(Var a) {
    const Matrix& A = nodes_[a.id].value;
    bool rg = nodes_[a.id].requires_grad;
    Matrix out_v(1, 1);
    out_v(0, 0) = A.squaredNorm();
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, out](Tape& t) {
            double g = t.nodes_[out.id].grad(0, 0);
            t.accum_grad(a, 2.0 * g * t.nodes_[a.id].value);
        };
    }
    return out;
}

Var Tape::hinge_max(Var neg, Var pos, double delta) {
    const Matrix& N = nodes_[neg.id].value;
    const Matrix& P = nodes_[pos.id].value;
    if (N.cols() != 1 || N.rows() < 1) throw std::invalid_argument("hinge_max: neg must be Nx1");
    if (P.rows() != 1 || P.cols() != 1) throw std::invalid_argument("hinge_max: pos must be 1x1");
    int best = 0;
    for (int i = 1; i < N.rows(); ++i) {
        if (N(i, 0) > N(best, 0)) best = i;
    }
    double raw = N(best, 0) - P(0, 0) + delta;
    bool rg = nodes_[neg.id].requires_grad || nodes_[pos.id].requires_grad;
    Matrix out_v(1, 1);
    out_v(0, 0) = raw > 0.0 ? raw : 0.0;
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg && raw > 0.0) {
        nodes_[out.id].backward = [neg, pos, best, out](Tape& t) {
            double g = t.nodes_[out.id].grad(0, 0);
            const Matrix& n = t.nodes_[neg.id].value;
            Matrix gn = Matrix::Zero(n.rows(), 1);
            gn(best, 0) = g;
            t.accum_grad(neg, gn);
            Matrix gp(1, 1);
            gp(0, 0) = -g;
            t.accum_grad(pos, gp);
        };
    }
    return out;
}

Var Tape::transpose(Var a) {
    bool rg = nodes_[a.id].requires_grad;
    Var out = make(nodes_[a.id].value.transpose(), rg, nullptr);
    if (rg) {
        nodes_[out.id].backward = [a, out](Tape& t) {
            t.accum_grad(a, t.nodes_[out.id].grad.transpose());
        };
    }
    return out;
}

Var Tape::rows(Var a, std::vector<int> indices) {
    const Matrix& A = nodes_[a.id].value;
    for (int i : indices) {
        if (i < 0 || i >= A.rows()) {
            throw std::out_of_range("rows: index " + std::to_string(i) + " out of " +
                                    std::to_string(A.rows()));
        }
    }
    Matrix out_v(static_cast<Eigen::Index>(indices.size()), A.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) out_v.row(r) = A.row(indices[r]);
    bool rg = nodes_[a.id].requires_grad;
    Var out = make(std::move(out_v), rg, nullptr);
    if (rg) {
        auto held = std::make_shared<std::vector<int>>(std::move(indices));
        nodes_[out.id].backward = [a, held, out](Tape& t) {
            const Matrix& g = t.nodes_[out.id].grad;
            const Matrix& x = t.nodes_[a.id].value;
            Matrix gx = Matrix::Zero(x.rows(), x.cols());
            for (std::size_t r = 0; r < held->size(); ++r) gx.row((*held)[r]) += g.row(r);
            t.accum_grad(a, gx);
        };
    }
    return out;
}

Var Tape::custom(const std::vector<Var>& inputs, Matrix value,
                 std::function<void(Tape&, const Matrix& gout)> backward) {
    bool rg = false;
    for (Var in : inputs) rg = rg || nodes_[in.id].requires_grad;
    Var out = make(std::move(value), rg, nullptr);
    if (rg && backward) {
        auto bw = std::move(backward);
        nodes_[out.id].backward = [bw, out](Tape& t) { bw(t, t.nodes_[out.id].grad); };
    }
    return out;
}

void Tape::backward(Var root) {
    Node& r = nodes_[root.id];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
        throw std::invalid_argument("backward: root must be a 1x1 scalar");
    }
    if (!r.grad_live) {
        r.grad = Matrix::Zero(1, 1);
        r.grad_live = true;
    }
    r.grad(0, 0) = 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad_live && n.backward) n.backward(*this);
    }
}

int ParamStore::add(std::string name, Matrix init) {
    params_.push_back(std::move(init));
    names_.push_back(std::move(name));
    return static_cast<int>(params_.size()) - 1;
}

AdamOptimizer::AdamOptimizer(const ParamStore& store, AdamConfig cfg) : cfg_(cfg) {
    m.resize(store.size());
    v.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        m[i] = Matrix::Zero(store[static_cast<int>(i)].rows(), store[static_cast<int>(i)].cols());
        v[i] = Matrix::Zero(store[static_cast<int>(i)].rows(), store[static_cast<int>(i)].cols());
    }
}

void AdamOptimizer::step(ParamStore& store, const std::vector<Matrix>& grads) {
    if (grads.size() != store.size()) {
        throw std::invalid_argument("optimizer step: expected " + std::to_string(store.size()) +
                                    " gradients, got " + std::to_string(grads.size()));
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].size() != 0 && !grads[i].allFinite()) {
            throw std::runtime_error("non-finite gradient for parameter '" +
                                     store.name(static_cast<int>(i)) + "' at step " +
                                     std::to_string(step_ + 1));
        }
    }
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < store.size(); ++i) {
        Matrix& p = store[static_cast<int>(i)];
        if (grads[i].size() == 0) {
            // zero gradient: moments still decay
            m[i] *= cfg_.beta1;
            v[i] *= cfg_.beta2;
        } else {
            if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols()) {
                throw std::invalid_argument("optimizer step: gradient shape mismatch for '" +
                                            store.name(static_cast<int>(i)) + "'");
            }
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grads[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grads[i].cwiseProduct(grads[i]);
        }
        Matrix mhat = m[i] / bc1;
        Matrix vhat = v[i] / bc2;
        p.array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
    }
}

}  // namespace mgtcom
