#include "mome/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#ifdef MOME_HAVE_EIGEN
#include <Eigen/Core>
#endif

namespace mome {

std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {

int rows_of(const Shape& s) { return s.size() >= 2 ? s[0] : 1; }
int cols_of(const Shape& s) {
    if (s.empty()) return 1;
    return s.size() >= 2 ? s[1] : s[0];
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

Tape* same_tape(std::initializer_list<const Tensor*> ts) {
    Tape* t = nullptr;
    for (const Tensor* x : ts) {
        if (!x->valid()) throw UsageError("tensor handle is empty");
        if (t == nullptr) t = x->tape();
        if (x->tape() != t) throw UsageError("operands live on different tapes");
    }
    return t;
}

// --- dense kernels -----------------------------------------------------

#ifdef MOME_HAVE_EIGEN
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;
#endif

// C (+)= A[m x k] * B[k x n]
void mm_nn(double* c, const double* a, const double* b, int m, int k, int n, bool accumulate) {
#ifdef MOME_HAVE_EIGEN
    MMap C(c, m, n);
    if (accumulate)
        C.noalias() += CMap(a, m, k) * CMap(b, k, n);
    else
        C.noalias() = CMap(a, m, k) * CMap(b, k, n);
#else
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::size_t>(i) * k + p];
            const double* brow = b + static_cast<std::size_t>(p) * n;
            double* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
#endif
}

// C (+)= A[m x k] * B[n x k]^T
void mm_nt(double* c, const double* a, const double* b, int m, int k, int n, bool accumulate) {
#ifdef MOME_HAVE_EIGEN
    MMap C(c, m, n);
    if (accumulate)
        C.noalias() += CMap(a, m, k) * CMap(b, n, k).transpose();
    else
        C.noalias() = CMap(a, m, k) * CMap(b, n, k).transpose();
#else
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            const double* arow = a + static_cast<std::size_t>(i) * k;
            const double* brow = b + static_cast<std::size_t>(j) * k;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            double& out = c[static_cast<std::size_t>(i) * n + j];
            out = accumulate ? out + s : s;
        }
#endif
}

// C (+)= A[k x m]^T * B[k x n]
void mm_tn(double* c, const double* a, const double* b, int m, int k, int n, bool accumulate) {
#ifdef MOME_HAVE_EIGEN
    MMap C(c, m, n);
    if (accumulate)
        C.noalias() += CMap(a, k, m).transpose() * CMap(b, k, n);
    else
        C.noalias() = CMap(a, k, m).transpose() * CMap(b, k, n);
#else
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    for (int p = 0; p < k; ++p) {
        const double* arow = a + static_cast<std::size_t>(p) * m;
        const double* brow = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
#endif
}

// Elementwise op factory: forward f, backward df(x, y) multiplied into dy.
template <typename F, typename DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
    Tape* t = same_tape({&x});
    const auto& xn = t->node(x.id());
    std::vector<double> out(xn.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xn.val[i]);
    Tensor y = t->emplace(xn.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int xid = x.id(), yid = y.id();
        t->node(yid).back = [xid, yid, df](Tape& tp) {
            auto& xnode = tp.node(xid);
            auto& ynode = tp.node(yid);
            for (std::size_t i = 0; i < xnode.val.size(); ++i)
                xnode.grad[i] += ynode.grad[i] * df(xnode.val[i], ynode.val[i]);
        };
    }
    return y;
}

}  // namespace

// --- Tensor ------------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
int Tensor::rows() const { return rows_of(shape()); }
int Tensor::cols() const { return cols_of(shape()); }
std::span<const double> Tensor::values() const {
    const auto& n = tape_->node(id_);
    return {n.val.data(), n.val.size()};
}
std::span<const double> Tensor::grad() const {
    const auto& n = tape_->node(id_);
    return {n.grad.data(), n.grad.size()};
}
double Tensor::scalar() const {
    const auto& n = tape_->node(id_);
    if (n.val.size() != 1) throw UsageError("scalar() on non-scalar tensor " + shape_str(n.shape));
    return n.val[0];
}

// --- Tape --------------------------------------------------------------

Tensor Tape::emplace(Shape shape, std::vector<double> values, std::function<void(Tape&)> back) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
        throw DimensionError("value count does not match shape " + shape_str(shape));
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(values);
    if (grad_) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
    return emplace(std::move(shape), std::move(values), nullptr);
}

Tensor Tape::zeros(Shape shape) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)), 0.0);
    return emplace(std::move(shape), std::move(v), nullptr);
}

void Tape::backward(const Tensor& loss) {
    if (!grad_) throw UsageError("backward on a gradient-disabled tape");
    if (backward_done_) throw UsageError("backward called twice without reset");
    if (loss.tape() != this) throw UsageError("loss lives on another tape");
    if (numel(node(loss.id()).shape) != 1) throw UsageError("backward requires a scalar loss");
    for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
    node(loss.id()).grad[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        if (nodes_[static_cast<std::size_t>(i)].back) nodes_[static_cast<std::size_t>(i)].back(*this);
    }
    backward_done_ = true;
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

// --- binary / structural ops -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    Tape* t = same_tape({&a, &b});
    const auto& an = t->node(a.id());
    const auto& bn = t->node(b.id());
    require(an.shape == bn.shape, "add: shape mismatch " + shape_str(an.shape) + " vs " + shape_str(bn.shape));
    std::vector<double> out(an.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = an.val[i] + bn.val[i];
    Tensor y = t->emplace(an.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t->node(yid).back = [aid, bid, yid](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& ga = tp.node(aid).grad;
            auto& gb = tp.node(bid).grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        };
    }
    return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Tape* t = same_tape({&a, &b});
    const auto& an = t->node(a.id());
    const auto& bn = t->node(b.id());
    require(an.shape == bn.shape, "sub: shape mismatch");
    std::vector<double> out(an.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = an.val[i] - bn.val[i];
    Tensor y = t->emplace(an.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t->node(yid).back = [aid, bid, yid](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& ga = tp.node(aid).grad;
            auto& gb = tp.node(bid).grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
        };
    }
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Tape* t = same_tape({&a, &b});
    const auto& an = t->node(a.id());
    const auto& bn = t->node(b.id());
    require(an.shape == bn.shape, "mul: shape mismatch");
    std::vector<double> out(an.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = an.val[i] * bn.val[i];
    Tensor y = t->emplace(an.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t->node(yid).back = [aid, bid, yid](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& na = tp.node(aid);
            auto& nb = tp.node(bid);
            for (std::size_t i = 0; i < g.size(); ++i) {
                na.grad[i] += g[i] * nb.val[i];
                nb.grad[i] += g[i] * na.val[i];
            }
        };
    }
    return y;
}

Tensor affine(const Tensor& x, double alpha, double beta) {
    Tape* t = same_tape({&x});
    const auto& xn = t->node(x.id());
    std::vector<double> out(xn.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * xn.val[i] + beta;
    Tensor y = t->emplace(xn.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int xid = x.id(), yid = y.id();
        t->node(yid).back = [xid, yid, alpha](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& gx = tp.node(xid).grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += alpha * g[i];
        };
    }
    return y;
}

Tensor scale(const Tensor& x, double alpha) { return affine(x, alpha, 0.0); }

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    Tape* t = same_tape({&x, &b});
    const auto& xn = t->node(x.id());
    const auto& bn = t->node(b.id());
    const int m = rows_of(xn.shape), n = cols_of(xn.shape);
    require(static_cast<std::int64_t>(n) == numel(bn.shape), "add_rowvec: bias length mismatch");
    std::vector<double> out(xn.val.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] = xn.val[static_cast<std::size_t>(i) * n + j] + bn.val[static_cast<std::size_t>(j)];
    Tensor y = t->emplace(xn.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int xid = x.id(), bid = b.id(), yid = y.id();
        t->node(yid).back = [xid, bid, yid, m, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& gx = tp.node(xid).grad;
            auto& gb = tp.node(bid).grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = g[static_cast<std::size_t>(i) * n + j];
                    gx[static_cast<std::size_t>(i) * n + j] += gv;
                    gb[static_cast<std::size_t>(j)] += gv;
                }
        };
    }
    return y;
}

Tensor scale_rows(const Tensor& x, std::vector<double> factors) {
    Tape* t = same_tape({&x});
    const auto& xn = t->node(x.id());
    const int m = rows_of(xn.shape), n = cols_of(xn.shape);
    require(static_cast<int>(factors.size()) == m, "scale_rows: factor count mismatch");
    std::vector<double> out(xn.val.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] = xn.val[static_cast<std::size_t>(i) * n + j] * factors[static_cast<std::size_t>(i)];
    auto fshared = std::make_shared<std::vector<double>>(std::move(factors));
    Tensor y = t->emplace(xn.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int xid = x.id(), yid = y.id();
        t->node(yid).back = [xid, yid, fshared, m, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& gx = tp.node(xid).grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gx[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(i) * n + j] * (*fshared)[static_cast<std::size_t>(i)];
        };
    }
    return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape* t = same_tape({&a, &b});
    const auto& an = t->node(a.id());
    const auto& bn = t->node(b.id());
    const int m = rows_of(an.shape), k = cols_of(an.shape);
    const int k2 = rows_of(bn.shape), n = cols_of(bn.shape);
    require(k == k2, "matmul: inner dims disagree " + shape_str(an.shape) + " * " + shape_str(bn.shape));
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    mm_nn(out.data(), an.val.data(), bn.val.data(), m, k, n, false);
    Tensor y = t->emplace({m, n}, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t->node(yid).back = [aid, bid, yid, m, k, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& na = tp.node(aid);
            auto& nb = tp.node(bid);
            // dA += dC * B^T ; dB += A^T * dC
            mm_nt(na.grad.data(), g.data(), nb.val.data(), m, n, k, true);
            mm_tn(nb.grad.data(), na.val.data(), g.data(), k, m, n, true);
        };
    }
    return y;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    Tape* t = same_tape({&a, &b});
    const auto& an = t->node(a.id());
    const auto& bn = t->node(b.id());
    const int m = rows_of(an.shape), k = cols_of(an.shape);
    const int n = rows_of(bn.shape), k2 = cols_of(bn.shape);
    require(k == k2, "matmul_nt: inner dims disagree");
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    mm_nt(out.data(), an.val.data(), bn.val.data(), m, k, n, false);
    Tensor y = t->emplace({m, n}, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t->node(yid).back = [aid, bid, yid, m, k, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;  // [m x n]
            auto& na = tp.node(aid);
            auto& nb = tp.node(bid);
            // dA += dC * B ; dB += dC^T * A
            mm_nn(na.grad.data(), g.data(), nb.val.data(), m, n, k, true);
            mm_tn(nb.grad.data(), g.data(), na.val.data(), n, m, k, true);
        };
    }
    return y;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    Tape* t = same_tape({&a, &b});
    const auto& an = t->node(a.id());
    const auto& bn = t->node(b.id());
    const int k = rows_of(an.shape), m = cols_of(an.shape);
    const int k2 = rows_of(bn.shape), n = cols_of(bn.shape);
    require(k == k2, "matmul_tn: inner dims disagree");
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    mm_tn(out.data(), an.val.data(), bn.val.data(), m, k, n, false);
    Tensor y = t->emplace({m, n}, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), bid = b.id(), yid = y.id();
        t->node(yid).back = [aid, bid, yid, m, k, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;  // [m x n]
            auto& na = tp.node(aid);
            auto& nb = tp.node(bid);
            // A is [k x m]: dA += B * dC^T ; dB += A * dC
            mm_nt(na.grad.data(), nb.val.data(), g.data(), k, n, m, true);
            mm_nn(nb.grad.data(), na.val.data(), g.data(), k, m, n, true);
        };
    }
    return y;
}

Tensor transpose(const Tensor& a) {
    Tape* t = same_tape({&a});
    const auto& an = t->node(a.id());
    const int m = rows_of(an.shape), n = cols_of(an.shape);
    std::vector<double> out(an.val.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = an.val[static_cast<std::size_t>(i) * n + j];
    Tensor y = t->emplace({n, m}, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), yid = y.id();
        t->node(yid).back = [aid, yid, m, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& ga = tp.node(aid).grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
        };
    }
    return y;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw UsageError("concat_rows: no inputs");
    Tape* t = parts[0].tape();
    int n = parts[0].cols();
    int m = 0;
    for (const Tensor& p : parts) {
        same_tape({&parts[0], &p});
        require(p.cols() == n, "concat_rows: column mismatch");
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m) * n);
    for (const Tensor& p : parts) {
        auto v = p.values();
        out.insert(out.end(), v.begin(), v.end());
    }
    Tensor y = t->emplace({m, n}, std::move(out), nullptr);
    if (t->grad_enabled()) {
        std::vector<int> ids;
        std::vector<int> rows;
        for (const Tensor& p : parts) {
            ids.push_back(p.id());
            rows.push_back(p.rows());
        }
        int yid = y.id();
        t->node(yid).back = [ids, rows, yid, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            std::size_t off = 0;
            for (std::size_t p = 0; p < ids.size(); ++p) {
                auto& gp = tp.node(ids[p]).grad;
                const std::size_t count = static_cast<std::size_t>(rows[p]) * n;
                for (std::size_t i = 0; i < count; ++i) gp[i] += g[off + i];
                off += count;
            }
        };
    }
    return y;
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw UsageError("concat_cols: no inputs");
    Tape* t = parts[0].tape();
    int m = parts[0].rows();
    int n = 0;
    for (const Tensor& p : parts) {
        same_tape({&parts[0], &p});
        require(p.rows() == m, "concat_cols: row mismatch");
        n += p.cols();
    }
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    int coff = 0;
    for (const Tensor& p : parts) {
        const int pc = p.cols();
        auto v = p.values();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j)
                out[static_cast<std::size_t>(i) * n + coff + j] = v[static_cast<std::size_t>(i) * pc + j];
        coff += pc;
    }
    Tensor y = t->emplace({m, n}, std::move(out), nullptr);
    if (t->grad_enabled()) {
        std::vector<int> ids;
        std::vector<int> cols;
        for (const Tensor& p : parts) {
            ids.push_back(p.id());
            cols.push_back(p.cols());
        }
        int yid = y.id();
        t->node(yid).back = [ids, cols, yid, m, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            int coff2 = 0;
            for (std::size_t p = 0; p < ids.size(); ++p) {
                auto& gp = tp.node(ids[p]).grad;
                const int pc = cols[p];
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < pc; ++j)
                        gp[static_cast<std::size_t>(i) * pc + j] += g[static_cast<std::size_t>(i) * n + coff2 + j];
                coff2 += pc;
            }
        };
    }
    return y;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    Tape* t = same_tape({&a});
    const int m = a.rows(), n = a.cols();
    require(0 <= r0 && r0 <= r1 && r1 <= m, "slice_rows: range out of bounds");
    const auto& an = t->node(a.id());
    std::vector<double> out(an.val.begin() + static_cast<std::ptrdiff_t>(r0) * n,
                            an.val.begin() + static_cast<std::ptrdiff_t>(r1) * n);
    Tensor y = t->emplace({r1 - r0, n}, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), yid = y.id();
        t->node(yid).back = [aid, yid, r0, r1, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& ga = tp.node(aid).grad;
            const std::size_t count = static_cast<std::size_t>(r1 - r0) * n;
            for (std::size_t i = 0; i < count; ++i)
                ga[static_cast<std::size_t>(r0) * n + i] += g[i];
        };
    }
    return y;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    Tape* t = same_tape({&a});
    const int m = a.rows(), n = a.cols();
    require(0 <= c0 && c0 <= c1 && c1 <= n, "slice_cols: range out of bounds");
    const auto& an = t->node(a.id());
    const int w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(m) * w);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            out[static_cast<std::size_t>(i) * w + j] = an.val[static_cast<std::size_t>(i) * n + c0 + j];
    Tensor y = t->emplace({m, w}, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), yid = y.id();
        t->node(yid).back = [aid, yid, c0, w, m, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& ga = tp.node(aid).grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    ga[static_cast<std::size_t>(i) * n + c0 + j] += g[static_cast<std::size_t>(i) * w + j];
        };
    }
    return y;
}

Tensor gather_rows(const Tensor& a, std::vector<int> rows) {
    Tape* t = same_tape({&a});
    const int m = a.rows(), n = a.cols();
    for (int r : rows) require(0 <= r && r < m, "gather_rows: index out of bounds");
    const auto& an = t->node(a.id());
    std::vector<double> out(rows.size() * static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(an.val.begin() + static_cast<std::ptrdiff_t>(rows[i]) * n, n,
                    out.begin() + static_cast<std::ptrdiff_t>(i) * n);
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    Tensor y = t->emplace({static_cast<int>(idx->size()), n}, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int aid = a.id(), yid = y.id();
        t->node(yid).back = [aid, yid, idx, n](Tape& tp) {
            const auto& g = tp.node(yid).grad;
            auto& ga = tp.node(aid).grad;
            for (std::size_t i = 0; i < idx->size(); ++i)
                for (int j = 0; j < n; ++j)
                    ga[static_cast<std::size_t>((*idx)[i]) * n + j] += g[i * static_cast<std::size_t>(n) + j];
        };
    }
    return y;
}

// --- elementwise nonlinearities ------------------------------------------

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary_op(
        x, [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [=](double v, double) {
            const double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            return phi + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_op(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

Tensor log_op(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor abs_op(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor pow_const(const Tensor& x, double p) {
    return unary_op(
        x, [p](double v) { return std::pow(v, p); },
        [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

Tensor clamp_const(const Tensor& x, double lo, double hi) {
    return unary_op(
        x, [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// --- softmax family -------------------------------------------------------

namespace {

// Row-wise stable softmax into out; rows of length n, stride n.
void softmax_rows_inplace(std::vector<double>& out, const std::vector<double>& in, int m, int n) {
    for (int i = 0; i < m; ++i) {
        const double* row = in.data() + static_cast<std::size_t>(i) * n;
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        const double inv = 1.0 / denom;
        for (int j = 0; j < n; ++j) orow[j] *= inv;
    }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    if (axis == 0) return transpose(softmax(transpose(x), 1));
    require(axis == 1, "softmax: axis must be 0 or 1");
    Tape* t = same_tape({&x});
    const auto& xn = t->node(x.id());
    const int m = rows_of(xn.shape), n = cols_of(xn.shape);
    std::vector<double> out(xn.val.size());
    softmax_rows_inplace(out, xn.val, m, n);
    Tensor y = t->emplace(xn.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int xid = x.id(), yid = y.id();
        t->node(yid).back = [xid, yid, m, n](Tape& tp) {
            const auto& yn = tp.node(yid);
            auto& gx = tp.node(xid).grad;
            for (int i = 0; i < m; ++i) {
                const double* s = yn.val.data() + static_cast<std::size_t>(i) * n;
                const double* gy = yn.grad.data() + static_cast<std::size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += gy[j] * s[j];
                double* gxr = gx.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) gxr[j] += s[j] * (gy[j] - dot);
            }
        };
    }
    return y;
}

Tensor log_softmax_rows(const Tensor& x) {
    Tape* t = same_tape({&x});
    const auto& xn = t->node(x.id());
    const int m = rows_of(xn.shape), n = cols_of(xn.shape);
    std::vector<double> out(xn.val.size());
    for (int i = 0; i < m; ++i) {
        const double* row = xn.val.data() + static_cast<std::size_t>(i) * n;
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
        const double lse = mx + std::log(denom);
        for (int j = 0; j < n; ++j) orow[j] = row[j] - lse;
    }
    Tensor y = t->emplace(xn.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int xid = x.id(), yid = y.id();
        t->node(yid).back = [xid, yid, m, n](Tape& tp) {
            const auto& yn = tp.node(yid);
            auto& gx = tp.node(xid).grad;
            for (int i = 0; i < m; ++i) {
                const double* ls = yn.val.data() + static_cast<std::size_t>(i) * n;
                const double* gy = yn.grad.data() + static_cast<std::size_t>(i) * n;
                double gsum = 0.0;
                for (int j = 0; j < n; ++j) gsum += gy[j];
                double* gxr = gx.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) gxr[j] += gy[j] - std::exp(ls[j]) * gsum;
            }
        };
    }
    return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    Tape* t = same_tape({&x, &gain, &bias});
    const auto& xn = t->node(x.id());
    const int m = rows_of(xn.shape), n = cols_of(xn.shape);
    require(numel(t->node(gain.id()).shape) == n, "layernorm: gain length mismatch");
    require(numel(t->node(bias.id()).shape) == n, "layernorm: bias length mismatch");
    const auto& gv = t->node(gain.id()).val;
    const auto& bv = t->node(bias.id()).val;
    std::vector<double> out(xn.val.size());
    auto xhat = std::make_shared<std::vector<double>>(xn.val.size());
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* row = xn.val.data() + static_cast<std::size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (row[j] - mu) * is;
            (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
            out[static_cast<std::size_t>(i) * n + j] = xh * gv[static_cast<std::size_t>(j)] + bv[static_cast<std::size_t>(j)];
        }
    }
    Tensor y = t->emplace(xn.shape, std::move(out), nullptr);
    if (t->grad_enabled()) {
        int xid = x.id(), gid = gain.id(), bid = bias.id(), yid = y.id();
        t->node(yid).back = [xid, gid, bid, yid, xhat, inv_sigma, m, n](Tape& tp) {
            const auto& gy = tp.node(yid).grad;
            auto& gx = tp.node(xid).grad;
            auto& gg = tp.node(gid).grad;
            auto& gb = tp.node(bid).grad;
            const auto& gv = tp.node(gid).val;
            for (int i = 0; i < m; ++i) {
                const double* dy = gy.data() + static_cast<std::size_t>(i) * n;
                const double* xh = xhat->data() + static_cast<std::size_t>(i) * n;
                const double is = (*inv_sigma)[static_cast<std::size_t>(i)];
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double dxh = dy[j] * gv[static_cast<std::size_t>(j)];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xh[j];
                    gg[static_cast<std::size_t>(j)] += dy[j] * xh[j];
                    gb[static_cast<std::size_t>(j)] += dy[j];
                }
                mean_dxhat /= n;
                mean_dxhat_xhat /= n;
                double* gxr = gx.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) {
                    const double dxh = dy[j] * gv[static_cast<std::size_t>(j)];
                    gxr[j] += is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                }
            }
        };
    }
    return y;
}

// --- fused multi-head attention -------------------------------------------

Tensor attn_heads(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                  const AttnMask* mask) {
    Tape* t = same_tape({&q, &k, &v});
    const int n = q.rows(), d = q.cols();
    const int m = k.rows();
    require(k.cols() == d && v.cols() == d, "attn_heads: projection width mismatch");
    require(v.rows() == m, "attn_heads: key/value count mismatch");
    if (heads <= 0 || d % heads != 0)
        throw ConfigError("attn_heads: head count " + std::to_string(heads) + " must divide dim " + std::to_string(d));
    if (mask != nullptr) require(mask->n == n && mask->m == m, "attn_heads: mask dims mismatch");
    const int dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& qv = t->node(q.id()).val;
    const auto& kv = t->node(k.id()).val;
    const auto& vv = t->node(v.id()).val;

    const bool save = t->grad_enabled();
    // Saved softmax probabilities per head, only in grad mode.
    auto probs = std::make_shared<std::vector<std::vector<double>>>();
    if (save) probs->resize(static_cast<std::size_t>(heads));
    // Copy of blocked flags, captured so backward does not depend on the
    // caller-owned mask outliving the forward call.
    std::shared_ptr<std::vector<std::uint8_t>> mask_copy;
    if (mask != nullptr && save) {
        mask_copy = std::make_shared<std::vector<std::uint8_t>>(
            mask->data, mask->data + static_cast<std::size_t>(n) * m);
    }

    std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
    std::vector<double> logits(static_cast<std::size_t>(n) * m);
    for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        // logits = Qh * Kh^T * sc with blocked entries at -inf
        for (int i = 0; i < n; ++i) {
            const double* qrow = qv.data() + static_cast<std::size_t>(i) * d + off;
            double* lrow = logits.data() + static_cast<std::size_t>(i) * m;
            for (int j = 0; j < m; ++j) {
                if (mask != nullptr && mask->blocked(i, j)) {
                    lrow[j] = -std::numeric_limits<double>::infinity();
                    continue;
                }
                const double* krow = kv.data() + static_cast<std::size_t>(j) * d + off;
                double s = 0.0;
                for (int c = 0; c < dh; ++c) s += qrow[c] * krow[c];
                lrow[j] = s * sc;
            }
        }
        // row softmax; fully blocked rows become all-zero probability rows
        std::vector<double> p(static_cast<std::size_t>(n) * m, 0.0);
        for (int i = 0; i < n; ++i) {
            const double* lrow = logits.data() + static_cast<std::size_t>(i) * m;
            double* prow = p.data() + static_cast<std::size_t>(i) * m;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < m; ++j) mx = std::max(mx, lrow[j]);
            if (!std::isfinite(mx)) continue;  // fully blocked
            double denom = 0.0;
            for (int j = 0; j < m; ++j) {
                if (std::isfinite(lrow[j])) {
                    prow[j] = std::exp(lrow[j] - mx);
                    denom += prow[j];
                }
            }
            const double inv = 1.0 / denom;
            for (int j = 0; j < m; ++j) prow[j] *= inv;
        }
        // context = P * Vh
        for (int i = 0; i < n; ++i) {
            const double* prow = p.data() + static_cast<std::size_t>(i) * m;
            double* orow = out.data() + static_cast<std::size_t>(i) * d + off;
            for (int j = 0; j < m; ++j) {
                const double pj = prow[j];
                if (pj == 0.0) continue;
                const double* vrow = vv.data() + static_cast<std::size_t>(j) * d + off;
                for (int c = 0; c < dh; ++c) orow[c] += pj * vrow[c];
            }
        }
        if (save) (*probs)[static_cast<std::size_t>(h)] = std::move(p);
    }

    Tensor y = t->emplace({n, d}, std::move(out), nullptr);
    if (save) {
        int qid = q.id(), kid = k.id(), vid = v.id(), yid = y.id();
        t->node(yid).back = [qid, kid, vid, yid, probs, mask_copy, heads, dh, n, m, sc](Tape& tp) {
            const int d = heads * dh;
            const auto& gy = tp.node(yid).grad;
            auto& nq = tp.node(qid);
            auto& nk = tp.node(kid);
            auto& nv = tp.node(vid);
            std::vector<double> dlog(static_cast<std::size_t>(m));
            for (int h = 0; h < heads; ++h) {
                const int off = h * dh;
                const auto& p = (*probs)[static_cast<std::size_t>(h)];
                for (int i = 0; i < n; ++i) {
                    const double* prow = p.data() + static_cast<std::size_t>(i) * m;
                    const double* gctx = gy.data() + static_cast<std::size_t>(i) * d + off;
                    // dV += p_ij * dCtx ; dP_j = dCtx . Vh_j
                    double dot = 0.0;
                    for (int j = 0; j < m; ++j) {
                        if (prow[j] == 0.0) {
                            dlog[static_cast<std::size_t>(j)] = 0.0;
                            continue;
                        }
                        const double* vrow = nv.val.data() + static_cast<std::size_t>(j) * d + off;
                        double* gvrow = nv.grad.data() + static_cast<std::size_t>(j) * d + off;
                        double dp = 0.0;
                        for (int c = 0; c < dh; ++c) {
                            dp += gctx[c] * vrow[c];
                            gvrow[c] += prow[j] * gctx[c];
                        }
                        dlog[static_cast<std::size_t>(j)] = dp;
                        dot += dp * prow[j];
                    }
                    // softmax backward, then dQ/dK
                    const double* qrow = nq.val.data() + static_cast<std::size_t>(i) * d + off;
                    double* gqrow = nq.grad.data() + static_cast<std::size_t>(i) * d + off;
                    for (int j = 0; j < m; ++j) {
                        const double pj = prow[j];
                        if (pj == 0.0) continue;
                        const double dl = pj * (dlog[static_cast<std::size_t>(j)] - dot) * sc;
                        if (dl == 0.0) continue;
                        const double* krow = nk.val.data() + static_cast<std::size_t>(j) * d + off;
                        double* gkrow = nk.grad.data() + static_cast<std::size_t>(j) * d + off;
                        for (int c = 0; c < dh; ++c) {
                            gqrow[c] += dl * krow[c];
                            gkrow[c] += dl * qrow[c];
                        }
                    }
                }
            }
        };
    }
    return y;
}

// --- reductions ------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    Tape* t = same_tape({&x});
    const auto& xn = t->node(x.id());
    double s = 0.0;
    for (double v : xn.val) s += v;
    Tensor y = t->emplace({1}, {s}, nullptr);
    if (t->grad_enabled()) {
        int xid = x.id(), yid = y.id();
        t->node(yid).back = [xid, yid](Tape& tp) {
            const double g = tp.node(yid).grad[0];
            auto& gx = tp.node(xid).grad;
            for (double& v : gx) v += g;
        };
    }
    return y;
}

Tensor mean_all(const Tensor& x) {
    Tape* t = same_tape({&x});
    const auto& xn = t->node(x.id());
    const double inv = 1.0 / static_cast<double>(xn.val.size());
    double s = 0.0;
    for (double v : xn.val) s += v;
    Tensor y = t->emplace({1}, {s * inv}, nullptr);
    if (t->grad_enabled()) {
        int xid = x.id(), yid = y.id();
        t->node(yid).back = [xid, yid, inv](Tape& tp) {
            const double g = tp.node(yid).grad[0] * inv;
            auto& gx = tp.node(xid).grad;
            for (double& v : gx) v += g;
        };
    }
    return y;
}

// --- parameters and optimizer ------------------------------------------------

Param& ParamStore::add(const std::string& name, Shape shape, std::vector<double> init,
                       bool trainable) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
    if (numel(shape) != static_cast<std::int64_t>(init.size()))
        throw DimensionError("parameter init size mismatch for " + name);
    Param p;
    p.name = name;
    p.shape = std::move(shape);
    p.value = std::move(init);
    p.grad.assign(p.value.size(), 0.0);
    p.trainable = trainable;
    params_.push_back(std::move(p));
    return params_.back();
}

Param& ParamStore::at(const std::string& name) {
    Param* p = find(name);
    if (p == nullptr) throw ConfigError("unknown parameter: " + name);
    return *p;
}

const Param& ParamStore::at(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw ConfigError("unknown parameter: " + name);
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

std::vector<std::string> ParamStore::manifest() const {
    std::vector<std::string> names;
    names.reserve(params_.size());
    for (const auto& p : params_) names.push_back(p.name);
    return names;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::vector<unsigned char> ParamStore::value_bytes(const std::string& prefix) const {
    std::vector<unsigned char> bytes;
    for (const auto& p : params_) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        for (double v : p.value) {
            unsigned char buf[8];
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, 8);
            for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
            bytes.insert(bytes.end(), buf, buf + 8);
        }
    }
    return bytes;
}

Tensor Binding::use(Param& p) {
    Tensor t = tape_->leaf(p.shape, p.value);
    bound_.emplace_back(&p, t);
    return t;
}

void Binding::accumulate() {
    for (auto& [p, t] : bound_) {
        auto g = t.grad();
        if (g.empty()) continue;
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g[i];
    }
}

std::vector<std::pair<Param*, std::vector<double>>> Binding::take_grads() {
    std::vector<std::pair<Param*, std::vector<double>>> out;
    out.reserve(bound_.size());
    for (auto& [p, t] : bound_) {
        auto& node = tape_->node(t.id());
        if (node.grad.empty()) continue;
        out.emplace_back(p, std::move(node.grad));
    }
    return out;
}

void Optimizer::step(ParamStore& store, const std::function<bool(const Param&)>& filter) {
    ++t;
    for (auto& p : store.all()) {
        if (!p.trainable) continue;
        if (filter && !filter(p)) continue;
        if (kind == OptKind::Sgd) {
            for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr * p.grad[i];
            continue;
        }
        if (p.m.size() != p.value.size()) p.m.assign(p.value.size(), 0.0);
        if (p.v.size() != p.value.size()) p.v.assign(p.value.size(), 0.0);
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g;
            p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g * g;
            const double mh = p.m[i] / bc1;
            const double vh = p.v[i] / bc2;
            p.value[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

}  // namespace mome
