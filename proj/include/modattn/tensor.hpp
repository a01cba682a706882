#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "modattn/util.hpp"

namespace modattn {

// Reverse-mode autodiff over dense row-major matrices. All tensors are
// rank-2 (vectors are 1xN, scalars 1x1). The tape is rebuilt every forward
// pass; node buffers are recycled through a high-water mark so steady-state
// training does no allocation. Single-threaded by contract; independent
// engines may run on parallel workers.

using NodeId = int32_t;

struct Shape {
    int rows = 0;
    int cols = 0;
    int size() const { return rows * cols; }
    bool operator==(const Shape&) const = default;
    std::string str() const {
        return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
    }
};

enum class OpKind : uint8_t {
    Matmul,      // a(MxK) * b(KxN)
    MatmulNT,    // a(MxK) * b(NxK)^T
    Add,
    Sub,
    Mul,
    AddRowVec,   // a(MxN) + broadcast b(1xN)
    Relu,
    Square,
    Log,
    Affine,      // c0 * a + c1, elementwise
    SoftmaxRows,
    LogSoftmaxRows,
    MeanAll,     // -> 1x1
    SumAll,      // -> 1x1
    MeanRows,    // column means -> 1xN
    ConcatRows,
    ConcatCols,
    SliceRows,   // rows [i0, i1)
    SliceCols,   // cols [i0, i1)
    GatherRows,  // rows by index list
    GatherElems, // flat (r,c) pairs -> 1xP
    LayerNorm,   // per-row normalize, inputs: x, gamma(1xN), beta(1xN)
};

template <typename S>
class Engine {
public:
    Engine() = default;

    // ---- node construction -------------------------------------------------

    // Persistent leaf; must be created before commit_params(). Survives reset().
    NodeId param(int rows, int cols) {
        if (committed_) throw ContractError("param() after commit_params()");
        return alloc({rows, cols});
    }

    // Marks the end of parameter registration; reset() keeps nodes below this mark.
    void commit_params() {
        committed_ = true;
        param_count_ = live_;
    }

    // Per-frame input leaf (no gradient propagated further).
    NodeId leaf(int rows, int cols) { return alloc({rows, cols}); }
    NodeId leaf(int rows, int cols, std::span<const S> values) {
        const NodeId id = alloc({rows, cols});
        if (static_cast<int>(values.size()) != rows * cols)
            throw DimensionError("leaf: data size " + std::to_string(values.size()) +
                                 " does not match " + Shape{rows, cols}.str());
        std::copy(values.begin(), values.end(), data_[static_cast<size_t>(id)].begin());
        return id;
    }

    // Drops everything recorded since commit_params(); keeps buffer capacity.
    void reset() {
        live_ = param_count_;
        ops_.clear();
    }

    // ---- access --------------------------------------------------------------

    Shape shape(NodeId id) const { return shape_[static_cast<size_t>(id)]; }
    std::span<S> data(NodeId id) { return data_[static_cast<size_t>(id)]; }
    std::span<const S> data(NodeId id) const { return data_[static_cast<size_t>(id)]; }
    std::span<S> grad(NodeId id) { return grad_[static_cast<size_t>(id)]; }
    std::span<const S> grad(NodeId id) const { return grad_[static_cast<size_t>(id)]; }
    S value(NodeId id) const { return data_[static_cast<size_t>(id)][0]; }
    size_t param_count() const { return param_count_; }
    size_t live_nodes() const { return live_; }

    void zero_grad(NodeId id) {
        auto& g = grad_[static_cast<size_t>(id)];
        std::fill(g.begin(), g.end(), S(0));
    }
    void zero_param_grads() {
        for (size_t i = 0; i < param_count_; ++i) std::fill(grad_[i].begin(), grad_[i].end(), S(0));
    }

    // ---- ops -----------------------------------------------------------------

    NodeId matmul(NodeId a, NodeId b) {
        const Shape sa = shape(a), sb = shape(b);
        if (sa.cols != sb.rows)
            throw DimensionError("matmul: inner dimensions disagree, " + sa.str() + " * " + sb.str());
        const NodeId o = record(OpKind::Matmul, {a, b}, {sa.rows, sb.cols});
        kernel_matmul(data(a).data(), data(b).data(), data(o).data(), sa.rows, sa.cols, sb.cols);
        return o;
    }

    // a(MxK) * b(NxK)^T -> MxN; the attention-score shape.
    NodeId matmul_nt(NodeId a, NodeId b) {
        const Shape sa = shape(a), sb = shape(b);
        if (sa.cols != sb.cols)
            throw DimensionError("matmul_nt: inner dimensions disagree, " + sa.str() + " * " +
                                 sb.str() + "^T");
        const NodeId o = record(OpKind::MatmulNT, {a, b}, {sa.rows, sb.rows});
        transpose_into(data(b).data(), sb.rows, sb.cols, scratch_);
        kernel_matmul(data(a).data(), scratch_.data(), data(o).data(), sa.rows, sa.cols, sb.rows);
        return o;
    }

    NodeId add(NodeId a, NodeId b) { return ew2(OpKind::Add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return ew2(OpKind::Sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return ew2(OpKind::Mul, a, b); }

    NodeId add_rowvec(NodeId a, NodeId b) {
        const Shape sa = shape(a), sb = shape(b);
        if (sb.rows != 1 || sb.cols != sa.cols)
            throw DimensionError("add_rowvec: " + sa.str() + " + " + sb.str());
        const NodeId o = record(OpKind::AddRowVec, {a, b}, sa);
        const S* pa = data(a).data();
        const S* pb = data(b).data();
        S* po = data(o).data();
        for (int i = 0; i < sa.rows; ++i)
            for (int j = 0; j < sa.cols; ++j) po[i * sa.cols + j] = pa[i * sa.cols + j] + pb[j];
        return o;
    }

    NodeId relu(NodeId a) {
        const NodeId o = record(OpKind::Relu, {a}, shape(a));
        const S* pa = data(a).data();
        S* po = data(o).data();
        const int n = shape(a).size();
        for (int i = 0; i < n; ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
        return o;
    }

    NodeId square(NodeId a) {
        const NodeId o = record(OpKind::Square, {a}, shape(a));
        const S* pa = data(a).data();
        S* po = data(o).data();
        const int n = shape(a).size();
        for (int i = 0; i < n; ++i) po[i] = pa[i] * pa[i];
        return o;
    }

    NodeId log(NodeId a) {
        const S* pa = data(a).data();
        const int n = shape(a).size();
        for (int i = 0; i < n; ++i)
            if (!(pa[i] > S(0)))
                throw NumericError("log: non-positive input at index " + std::to_string(i));
        const NodeId o = record(OpKind::Log, {a}, shape(a));
        pa = data(a).data();
        S* po = data(o).data();
        for (int i = 0; i < n; ++i) po[i] = std::log(pa[i]);
        return o;
    }

    NodeId affine(NodeId a, S k, S c) {
        const NodeId o = record(OpKind::Affine, {a}, shape(a));
        ops_.back().c0 = k;
        ops_.back().c1 = c;
        const S* pa = data(a).data();
        S* po = data(o).data();
        const int n = shape(a).size();
        for (int i = 0; i < n; ++i) po[i] = k * pa[i] + c;
        return o;
    }
    NodeId scale(NodeId a, S k) { return affine(a, k, S(0)); }

    NodeId softmax_rows(NodeId a) {
        const Shape s = shape(a);
        if (s.cols < 1) throw DimensionError("softmax_rows: empty rows");
        const S* pa = data(a).data();
        const int n = s.size();
        for (int i = 0; i < n; ++i)
            if (!std::isfinite(static_cast<double>(pa[i])))
                throw NumericError("softmax_rows: non-finite input at index " + std::to_string(i));
        const NodeId o = record(OpKind::SoftmaxRows, {a}, s);
        pa = data(a).data();
        S* po = data(o).data();
        for (int i = 0; i < s.rows; ++i) {
            const S* x = pa + i * s.cols;
            S* y = po + i * s.cols;
            S m = x[0];
            for (int j = 1; j < s.cols; ++j) m = std::max(m, x[j]);
            double sum = 0.0;  // double accumulation keeps row sums within 1e-6 of 1 at f32
            for (int j = 0; j < s.cols; ++j) {
                y[j] = std::exp(x[j] - m);
                sum += static_cast<double>(y[j]);
            }
            const S inv = static_cast<S>(1.0 / sum);
            for (int j = 0; j < s.cols; ++j) y[j] *= inv;
        }
        return o;
    }

    NodeId log_softmax_rows(NodeId a) {
        const Shape s = shape(a);
        const NodeId o = record(OpKind::LogSoftmaxRows, {a}, s);
        const S* pa = data(a).data();
        S* po = data(o).data();
        for (int i = 0; i < s.rows; ++i) {
            const S* x = pa + i * s.cols;
            S* y = po + i * s.cols;
            S m = x[0];
            for (int j = 1; j < s.cols; ++j) m = std::max(m, x[j]);
            double sum = 0.0;
            for (int j = 0; j < s.cols; ++j) sum += std::exp(static_cast<double>(x[j] - m));
            const S lse = m + static_cast<S>(std::log(sum));
            for (int j = 0; j < s.cols; ++j) y[j] = x[j] - lse;
        }
        return o;
    }

    NodeId mean_all(NodeId a) {
        const NodeId o = record(OpKind::MeanAll, {a}, {1, 1});
        double sum = 0.0;
        for (S v : data(a)) sum += static_cast<double>(v);
        data(o)[0] = static_cast<S>(sum / shape(a).size());
        return o;
    }

    NodeId sum_all(NodeId a) {
        const NodeId o = record(OpKind::SumAll, {a}, {1, 1});
        double sum = 0.0;
        for (S v : data(a)) sum += static_cast<double>(v);
        data(o)[0] = static_cast<S>(sum);
        return o;
    }

    NodeId mean_rows(NodeId a) {
        const Shape s = shape(a);
        const NodeId o = record(OpKind::MeanRows, {a}, {1, s.cols});
        const S* pa = data(a).data();
        S* po = data(o).data();
        for (int j = 0; j < s.cols; ++j) {
            double sum = 0.0;
            for (int i = 0; i < s.rows; ++i) sum += static_cast<double>(pa[i * s.cols + j]);
            po[j] = static_cast<S>(sum / s.rows);
        }
        return o;
    }

    NodeId concat_rows(std::span<const NodeId> parts) {
        if (parts.empty()) throw ContractError("concat_rows: no inputs");
        const int cols = shape(parts[0]).cols;
        int rows = 0;
        for (NodeId p : parts) {
            if (shape(p).cols != cols)
                throw DimensionError("concat_rows: column mismatch " + shape(p).str() + " vs " +
                                     std::to_string(cols) + " cols");
            rows += shape(p).rows;
        }
        const NodeId o = record(OpKind::ConcatRows, parts, {rows, cols});
        S* po = data(o).data();
        for (NodeId p : parts) {
            const auto d = data(p);
            std::copy(d.begin(), d.end(), po);
            po += d.size();
        }
        return o;
    }

    NodeId concat_cols(std::span<const NodeId> parts) {
        if (parts.empty()) throw ContractError("concat_cols: no inputs");
        const int rows = shape(parts[0]).rows;
        int cols = 0;
        for (NodeId p : parts) {
            if (shape(p).rows != rows)
                throw DimensionError("concat_cols: row mismatch " + shape(p).str());
            cols += shape(p).cols;
        }
        const NodeId o = record(OpKind::ConcatCols, parts, {rows, cols});
        S* po = data(o).data();
        int at = 0;
        for (NodeId p : parts) {
            const Shape sp = shape(p);
            const S* pp = data(p).data();
            for (int i = 0; i < rows; ++i)
                std::copy(pp + i * sp.cols, pp + (i + 1) * sp.cols, po + i * cols + at);
            at += sp.cols;
        }
        return o;
    }

    NodeId slice_rows(NodeId a, int r0, int r1) {
        const Shape s = shape(a);
        if (r0 < 0 || r1 > s.rows || r0 >= r1)
            throw DimensionError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                                 ") of " + s.str());
        const NodeId o = record(OpKind::SliceRows, {a}, {r1 - r0, s.cols});
        ops_.back().i0 = r0;
        ops_.back().i1 = r1;
        const S* pa = data(a).data();
        std::copy(pa + r0 * s.cols, pa + r1 * s.cols, data(o).begin());
        return o;
    }

    NodeId slice_cols(NodeId a, int c0, int c1) {
        const Shape s = shape(a);
        if (c0 < 0 || c1 > s.cols || c0 >= c1)
            throw DimensionError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                                 ") of " + s.str());
        const NodeId o = record(OpKind::SliceCols, {a}, {s.rows, c1 - c0});
        ops_.back().i0 = c0;
        ops_.back().i1 = c1;
        const S* pa = data(a).data();
        S* po = data(o).data();
        const int w = c1 - c0;
        for (int i = 0; i < s.rows; ++i)
            std::copy(pa + i * s.cols + c0, pa + i * s.cols + c1, po + i * w);
        return o;
    }

    NodeId gather_rows(NodeId a, std::span<const int32_t> rows) {
        const Shape s = shape(a);
        for (int32_t r : rows)
            if (r < 0 || r >= s.rows)
                throw DimensionError("gather_rows: row " + std::to_string(r) + " out of " + s.str());
        const NodeId o = record(OpKind::GatherRows, {a}, {static_cast<int>(rows.size()), s.cols});
        ops_.back().aux.assign(rows.begin(), rows.end());
        const S* pa = data(a).data();
        S* po = data(o).data();
        for (size_t i = 0; i < rows.size(); ++i)
            std::copy(pa + rows[i] * s.cols, pa + (rows[i] + 1) * s.cols, po + i * s.cols);
        return o;
    }

    // Selects entries (r,c) into a 1xP row.
    NodeId gather_elems(NodeId a, std::span<const std::array<int32_t, 2>> at) {
        const Shape s = shape(a);
        const NodeId o = record(OpKind::GatherElems, {a}, {1, static_cast<int>(at.size())});
        auto& aux = ops_.back().aux;
        aux.reserve(at.size());
        const S* pa = data(a).data();
        S* po = data(o).data();
        for (size_t i = 0; i < at.size(); ++i) {
            const auto [r, c] = at[i];
            if (r < 0 || r >= s.rows || c < 0 || c >= s.cols)
                throw DimensionError("gather_elems: (" + std::to_string(r) + "," +
                                     std::to_string(c) + ") out of " + s.str());
            aux.push_back(r * s.cols + c);
            po[i] = pa[r * s.cols + c];
        }
        return o;
    }
    NodeId pick(NodeId a, int r, int c) {
        const std::array<int32_t, 2> p{static_cast<int32_t>(r), static_cast<int32_t>(c)};
        return gather_elems(a, std::span<const std::array<int32_t, 2>>(&p, 1));
    }

    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, S eps = S(1e-5)) {
        const Shape s = shape(x);
        if (shape(gamma) != Shape{1, s.cols} || shape(beta) != Shape{1, s.cols})
            throw DimensionError("layer_norm: scale/shift must be 1x" + std::to_string(s.cols));
        const NodeId o = record(OpKind::LayerNorm, {x, gamma, beta}, s);
        ops_.back().c0 = eps;
        // cache per-row (mean, inv_std) for backward
        auto& aux = ops_.back().auxs;
        aux.resize(static_cast<size_t>(2 * s.rows));
        const S* px = data(x).data();
        const S* pg = data(gamma).data();
        const S* pb = data(beta).data();
        S* po = data(o).data();
        for (int i = 0; i < s.rows; ++i) {
            const S* xr = px + i * s.cols;
            double mean = 0.0;
            for (int j = 0; j < s.cols; ++j) mean += static_cast<double>(xr[j]);
            mean /= s.cols;
            double var = 0.0;
            for (int j = 0; j < s.cols; ++j) {
                const double dcj = static_cast<double>(xr[j]) - mean;
                var += dcj * dcj;
            }
            var /= s.cols;
            const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
            aux[static_cast<size_t>(2 * i)] = static_cast<S>(mean);
            aux[static_cast<size_t>(2 * i + 1)] = static_cast<S>(inv);
            S* yr = po + i * s.cols;
            for (int j = 0; j < s.cols; ++j)
                yr[j] = static_cast<S>((static_cast<double>(xr[j]) - mean) * inv) * pg[j] + pb[j];
        }
        return o;
    }

    // Sums a list of scalars (returns a 1x1 zero leaf for an empty list).
    NodeId sum_scalars(std::span<const NodeId> xs) {
        if (xs.empty()) {
            const NodeId z = leaf(1, 1);
            data(z)[0] = S(0);
            return z;
        }
        if (xs.size() == 1) return xs[0];
        return sum_all(concat_cols(xs));
    }

    // ---- reverse pass ---------------------------------------------------------

    void backward(NodeId loss) {
        if (shape(loss) != Shape{1, 1})
            throw ContractError("backward: loss must be scalar, got " + shape(loss).str());
        grad(loss)[0] += S(1);
        for (size_t i = ops_.size(); i-- > 0;) backward_op(ops_[i]);
    }

private:
    struct OpRec {
        OpKind kind;
        NodeId out;
        std::vector<NodeId> in;
        int i0 = 0, i1 = 0;
        S c0 = S(0), c1 = S(0);
        std::vector<int32_t> aux;  // indices (gather ops)
        std::vector<S> auxs;       // cached statistics (layer norm)
    };

    NodeId alloc(Shape s) {
        const size_t idx = live_;
        if (idx == data_.size()) {
            shape_.push_back(s);
            data_.emplace_back(static_cast<size_t>(s.size()), S(0));
            grad_.emplace_back(static_cast<size_t>(s.size()), S(0));
        } else {
            shape_[idx] = s;
            data_[idx].assign(static_cast<size_t>(s.size()), S(0));
            grad_[idx].assign(static_cast<size_t>(s.size()), S(0));
        }
        ++live_;
        return static_cast<NodeId>(idx);
    }

    NodeId record(OpKind kind, std::span<const NodeId> in, Shape out_shape) {
        const NodeId out = alloc(out_shape);
        OpRec rec;
        rec.kind = kind;
        rec.out = out;
        rec.in.assign(in.begin(), in.end());
        ops_.push_back(std::move(rec));
        return out;
    }
    NodeId record(OpKind kind, std::initializer_list<NodeId> in, Shape out_shape) {
        return record(kind, std::span<const NodeId>(in.begin(), in.size()), out_shape);
    }

    NodeId ew2(OpKind kind, NodeId a, NodeId b) {
        const Shape sa = shape(a), sb = shape(b);
        if (sa != sb)
            throw DimensionError("elementwise: shape mismatch " + sa.str() + " vs " + sb.str());
        const NodeId o = record(kind, {a, b}, sa);
        const S* pa = data(a).data();
        const S* pb = data(b).data();
        S* po = data(o).data();
        const int n = sa.size();
        switch (kind) {
            case OpKind::Add:
                for (int i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
                break;
            case OpKind::Sub:
                for (int i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
                break;
            case OpKind::Mul:
                for (int i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
                break;
            default:
                throw ContractError("ew2: bad kind");
        }
        return o;
    }

    // c(MxN) += a(MxK) * b(KxN), vectorizer-friendly axpy form.
    static void kernel_matmul(const S* a, const S* b, S* c, int m, int k, int n) {
        for (int i = 0; i < m; ++i) {
            S* ci = c + i * n;
            for (int p = 0; p < k; ++p) {
                const S aip = a[i * k + p];
                const S* bp = b + p * n;
                for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
            }
        }
    }

    static void transpose_into(const S* a, int rows, int cols, std::vector<S>& out) {
        out.resize(static_cast<size_t>(rows) * static_cast<size_t>(cols));
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) out[static_cast<size_t>(j) * rows + i] = a[i * cols + j];
    }

    void backward_op(const OpRec& op) {
        const S* g = grad(op.out).data();
        const Shape so = shape(op.out);
        switch (op.kind) {
            case OpKind::Matmul: {
                const NodeId a = op.in[0], b = op.in[1];
                const Shape sa = shape(a), sb = shape(b);
                // dA += dO * B^T
                transpose_into(data(b).data(), sb.rows, sb.cols, scratch_);
                kernel_matmul(g, scratch_.data(), grad(a).data(), sa.rows, sb.cols, sa.cols);
                // dB += A^T * dO : dB[p][:] += a[i][p] * g[i][:]
                const S* pa = data(a).data();
                S* gb = grad(b).data();
                for (int i = 0; i < sa.rows; ++i)
                    for (int p = 0; p < sa.cols; ++p) {
                        const S aip = pa[i * sa.cols + p];
                        const S* gi = g + i * sb.cols;
                        S* gbp = gb + p * sb.cols;
                        for (int j = 0; j < sb.cols; ++j) gbp[j] += aip * gi[j];
                    }
                break;
            }
            case OpKind::MatmulNT: {
                // o = a * b^T with a(MxK), b(NxK): dA += dO*B ; dB += dO^T*A
                const NodeId a = op.in[0], b = op.in[1];
                const Shape sa = shape(a), sb = shape(b);
                kernel_matmul(g, data(b).data(), grad(a).data(), sa.rows, sb.rows, sa.cols);
                const S* pa = data(a).data();
                S* gb = grad(b).data();
                for (int i = 0; i < sa.rows; ++i)
                    for (int j = 0; j < sb.rows; ++j) {
                        const S gij = g[i * sb.rows + j];
                        const S* ai = pa + i * sa.cols;
                        S* gbj = gb + j * sb.cols;
                        for (int p = 0; p < sa.cols; ++p) gbj[p] += gij * ai[p];
                    }
                break;
            }
            case OpKind::Add: {
                axpy(grad(op.in[0]), g, S(1));
                axpy(grad(op.in[1]), g, S(1));
                break;
            }
            case OpKind::Sub: {
                axpy(grad(op.in[0]), g, S(1));
                axpy(grad(op.in[1]), g, S(-1));
                break;
            }
            case OpKind::Mul: {
                const S* pa = data(op.in[0]).data();
                const S* pb = data(op.in[1]).data();
                S* ga = grad(op.in[0]).data();
                S* gb = grad(op.in[1]).data();
                const int n = so.size();
                for (int i = 0; i < n; ++i) {
                    ga[i] += g[i] * pb[i];
                    gb[i] += g[i] * pa[i];
                }
                break;
            }
            case OpKind::AddRowVec: {
                axpy(grad(op.in[0]), g, S(1));
                S* gb = grad(op.in[1]).data();
                for (int i = 0; i < so.rows; ++i)
                    for (int j = 0; j < so.cols; ++j) gb[j] += g[i * so.cols + j];
                break;
            }
            case OpKind::Relu: {
                const S* pa = data(op.in[0]).data();
                S* ga = grad(op.in[0]).data();
                const int n = so.size();
                for (int i = 0; i < n; ++i)
                    if (pa[i] > S(0)) ga[i] += g[i];
                break;
            }
            case OpKind::Square: {
                const S* pa = data(op.in[0]).data();
                S* ga = grad(op.in[0]).data();
                const int n = so.size();
                for (int i = 0; i < n; ++i) ga[i] += S(2) * pa[i] * g[i];
                break;
            }
            case OpKind::Log: {
                const S* pa = data(op.in[0]).data();
                S* ga = grad(op.in[0]).data();
                const int n = so.size();
                for (int i = 0; i < n; ++i) ga[i] += g[i] / pa[i];
                break;
            }
            case OpKind::Affine: {
                axpy(grad(op.in[0]), g, op.c0);
                break;
            }
            case OpKind::SoftmaxRows: {
                const S* y = data(op.out).data();
                S* ga = grad(op.in[0]).data();
                for (int i = 0; i < so.rows; ++i) {
                    const S* yi = y + i * so.cols;
                    const S* gi = g + i * so.cols;
                    double dot = 0.0;
                    for (int j = 0; j < so.cols; ++j)
                        dot += static_cast<double>(gi[j]) * static_cast<double>(yi[j]);
                    S* gai = ga + i * so.cols;
                    for (int j = 0; j < so.cols; ++j)
                        gai[j] += yi[j] * (gi[j] - static_cast<S>(dot));
                }
                break;
            }
            case OpKind::LogSoftmaxRows: {
                const S* y = data(op.out).data();
                S* ga = grad(op.in[0]).data();
                for (int i = 0; i < so.rows; ++i) {
                    const S* yi = y + i * so.cols;
                    const S* gi = g + i * so.cols;
                    double gsum = 0.0;
                    for (int j = 0; j < so.cols; ++j) gsum += static_cast<double>(gi[j]);
                    S* gai = ga + i * so.cols;
                    for (int j = 0; j < so.cols; ++j)
                        gai[j] += gi[j] - static_cast<S>(gsum * std::exp(static_cast<double>(yi[j])));
                }
                break;
            }
            case OpKind::MeanAll: {
                const S k = g[0] / static_cast<S>(shape(op.in[0]).size());
                for (S& v : grad(op.in[0])) v += k;
                break;
            }
            case OpKind::SumAll: {
                const S k = g[0];
                for (S& v : grad(op.in[0])) v += k;
                break;
            }
            case OpKind::MeanRows: {
                const Shape sa = shape(op.in[0]);
                S* ga = grad(op.in[0]).data();
                const S inv = S(1) / static_cast<S>(sa.rows);
                for (int i = 0; i < sa.rows; ++i)
                    for (int j = 0; j < sa.cols; ++j) ga[i * sa.cols + j] += g[j] * inv;
                break;
            }
            case OpKind::ConcatRows: {
                const S* gp = g;
                for (NodeId p : op.in) {
                    auto gin = grad(p);
                    for (size_t i = 0; i < gin.size(); ++i) gin[i] += gp[i];
                    gp += gin.size();
                }
                break;
            }
            case OpKind::ConcatCols: {
                int at = 0;
                for (NodeId p : op.in) {
                    const Shape sp = shape(p);
                    S* gp = grad(p).data();
                    for (int i = 0; i < sp.rows; ++i)
                        for (int j = 0; j < sp.cols; ++j)
                            gp[i * sp.cols + j] += g[i * so.cols + at + j];
                    at += sp.cols;
                }
                break;
            }
            case OpKind::SliceRows: {
                const Shape sa = shape(op.in[0]);
                S* ga = grad(op.in[0]).data() + op.i0 * sa.cols;
                const int n = so.size();
                for (int i = 0; i < n; ++i) ga[i] += g[i];
                break;
            }
            case OpKind::SliceCols: {
                const Shape sa = shape(op.in[0]);
                S* ga = grad(op.in[0]).data();
                for (int i = 0; i < so.rows; ++i)
                    for (int j = 0; j < so.cols; ++j)
                        ga[i * sa.cols + op.i0 + j] += g[i * so.cols + j];
                break;
            }
            case OpKind::GatherRows: {
                const Shape sa = shape(op.in[0]);
                S* ga = grad(op.in[0]).data();
                for (size_t i = 0; i < op.aux.size(); ++i)
                    for (int j = 0; j < sa.cols; ++j)
                        ga[op.aux[i] * sa.cols + j] += g[static_cast<int>(i) * sa.cols + j];
                break;
            }
            case OpKind::GatherElems: {
                S* ga = grad(op.in[0]).data();
                for (size_t i = 0; i < op.aux.size(); ++i) ga[op.aux[i]] += g[i];
                break;
            }
            case OpKind::LayerNorm: {
                const NodeId x = op.in[0], gamma = op.in[1], beta = op.in[2];
                const S* px = data(x).data();
                const S* pg = data(gamma).data();
                S* gx = grad(x).data();
                S* gg = grad(gamma).data();
                S* gb = grad(beta).data();
                const int n = so.cols;
                for (int i = 0; i < so.rows; ++i) {
                    const double mean = static_cast<double>(op.auxs[static_cast<size_t>(2 * i)]);
                    const double inv = static_cast<double>(op.auxs[static_cast<size_t>(2 * i + 1)]);
                    const S* xr = px + i * n;
                    const S* gr = g + i * n;
                    double sum_gd = 0.0, sum_gdx = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (static_cast<double>(xr[j]) - mean) * inv;
                        const double gd = static_cast<double>(gr[j]) * static_cast<double>(pg[j]);
                        sum_gd += gd;
                        sum_gdx += gd * xhat;
                        gg[j] += gr[j] * static_cast<S>(xhat);
                        gb[j] += gr[j];
                    }
                    S* gxr = gx + i * n;
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (static_cast<double>(xr[j]) - mean) * inv;
                        const double gd = static_cast<double>(gr[j]) * static_cast<double>(pg[j]);
                        gxr[j] += static_cast<S>(inv * (gd - sum_gd / n - xhat * sum_gdx / n));
                    }
                }
                break;
            }
        }
    }

    static void axpy(std::span<S> y, const S* x, S k) {
        for (size_t i = 0; i < y.size(); ++i) y[i] += k * x[i];
    }

    std::vector<Shape> shape_;
    std::vector<std::vector<S>> data_;
    std::vector<std::vector<S>> grad_;
    size_t live_ = 0;
    size_t param_count_ = 0;
    bool committed_ = false;
    std::vector<OpRec> ops_;
    std::vector<S> scratch_;
};

// ----------------------------------------------------------------------
// Named parameter table with seeded init. Registration order is the
// canonical (deterministic) iteration order everywhere.
// ----------------------------------------------------------------------
template <typename S>
class ParamStore {
public:
    explicit ParamStore(Engine<S>& eng, uint64_t init_seed) : eng_(&eng), rng_(init_seed) {}

    // Uniform in +-1/sqrt(fan_in).
    NodeId add(const std::string& name, int rows, int cols, int fan_in) {
        const NodeId id = eng_->param(rows, cols);
        const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
        for (S& v : eng_->data(id)) v = static_cast<S>(rng_.uniform(-bound, bound));
        names_.push_back(name);
        ids_.push_back(id);
        return id;
    }
    NodeId add_zeros(const std::string& name, int rows, int cols) {
        const NodeId id = eng_->param(rows, cols);
        names_.push_back(name);
        ids_.push_back(id);
        return id;
    }
    NodeId add_const(const std::string& name, int rows, int cols, S value) {
        const NodeId id = add_zeros(name, rows, cols);
        for (S& v : eng_->data(id)) v = value;
        return id;
    }

    size_t size() const { return ids_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    NodeId id(size_t i) const { return ids_[i]; }
    Engine<S>& engine() { return *eng_; }

    NodeId find(const std::string& name) const {
        for (size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return ids_[i];
        return -1;
    }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (NodeId id : ids_) n += eng_->shape(id).size();
        return n;
    }

private:
    Engine<S>* eng_;
    Rng rng_;
    std::vector<std::string> names_;
    std::vector<NodeId> ids_;
};

// ----------------------------------------------------------------------
// Bias-corrected Adam; zeroes gradients after each applied step.
// ----------------------------------------------------------------------
template <typename S>
class Adam {
public:
    Adam(S lr = S(1e-4), S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(ParamStore<S>& params) {
        auto& eng = params.engine();
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                const size_t n = static_cast<size_t>(eng.shape(params.id(i)).size());
                m_[i].assign(n, S(0));
                v_[i].assign(n, S(0));
            }
        }
        if (m_.size() != params.size()) throw ContractError("adam: parameter count changed");
        ++t_;
        const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(b1_), t_));
        const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(b2_), t_));
        for (size_t i = 0; i < params.size(); ++i) {
            auto d = eng.data(params.id(i));
            auto g = eng.grad(params.id(i));
            if (m_[i].size() != d.size()) throw ContractError("adam: shape changed for " + params.name(i));
            for (size_t j = 0; j < d.size(); ++j) {
                m_[i][j] = b1_ * m_[i][j] + (S(1) - b1_) * g[j];
                v_[i][j] = b2_ * v_[i][j] + (S(1) - b2_) * g[j] * g[j];
                const S mhat = m_[i][j] / bc1;
                const S vhat = v_[i][j] / bc2;
                d[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                g[j] = S(0);
            }
        }
    }

    int64_t steps() const { return t_; }
    S lr() const { return lr_; }

private:
    S lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<S>> m_, v_;
};

// ----------------------------------------------------------------------
// Central finite-difference gradient checks (64-bit only). Returns max over
// the checked coordinates of |analytic - central| / max(1, |central|).
// ----------------------------------------------------------------------

// Checks d(loss)/d(input) where `input` is a persistent node of `eng` and
// `build` reconstructs the scalar loss from current data. The tape is reset
// around every evaluation. When `coords` is non-empty only those flat
// coordinates are checked (sampled checks for large parameter tensors).
inline double grad_check(Engine<double>& eng, NodeId input,
                         const std::function<NodeId()>& build, double eps = 1e-5,
                         std::span<const int> coords = {}) {
    eng.reset();
    eng.zero_param_grads();
    const NodeId loss = build();
    if (eng.shape(loss) != Shape{1, 1})
        throw ContractError("grad_check: function under test must be scalar-valued");
    eng.backward(loss);
    std::vector<double> analytic(eng.grad(input).begin(), eng.grad(input).end());

    auto eval = [&](int i, double delta) {
        const double saved = eng.data(input)[static_cast<size_t>(i)];
        eng.data(input)[static_cast<size_t>(i)] = saved + delta;
        eng.reset();
        const double v = eng.value(build());
        eng.data(input)[static_cast<size_t>(i)] = saved;
        return v;
    };

    std::vector<int> all;
    if (coords.empty()) {
        all.resize(static_cast<size_t>(eng.shape(input).size()));
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        coords = all;
    }
    double worst = 0.0;
    for (int i : coords) {
        const double hi = eval(i, eps);
        const double lo = eval(i, -eps);
        const double numeric = (hi - lo) / (2.0 * eps);
        const double err = std::abs(analytic[static_cast<size_t>(i)] - numeric) /
                           std::max(1.0, std::abs(numeric));
        worst = std::max(worst, err);
    }
    eng.reset();
    return worst;
}

// Convenience form for free functions of one input tensor.
inline double grad_check(const std::function<NodeId(Engine<double>&, NodeId)>& f,
                         const std::vector<double>& input, int rows, int cols,
                         double eps = 1e-5) {
    if (static_cast<int>(input.size()) != rows * cols)
        throw ContractError("grad_check: input size mismatch");
    Engine<double> eng;
    const NodeId x = eng.param(rows, cols);
    std::copy(input.begin(), input.end(), eng.data(x).begin());
    eng.commit_params();
    return grad_check(eng, x, [&]() { return f(eng, x); }, eps);
}

}  // namespace modattn
