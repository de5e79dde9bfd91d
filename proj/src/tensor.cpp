#include "dtfixup/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "dtfixup/errors.hpp"

namespace dtfixup {

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor --------------------------------------------------------------

Tensor::Tensor() : shape_{1}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (auto d : shape_)
        if (d == 0) throw DimensionError(fmt::format("zero-sized axis in shape {}", shape_str(shape_)));
    if (shape_size(shape_) != data.size())
        throw DimensionError(
            fmt::format("shape {} needs {} values, got {}", shape_str(shape_), shape_size(shape_), data.size()));
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    auto n = shape_size(shape);
    return {std::move(shape), std::vector<double>(n, value)};
}

std::size_t Tensor::rows() const { return size() / cols(); }
std::size_t Tensor::cols() const { return shape_.back(); }

double Tensor::item() const {
    if (size() != 1) throw DimensionError(fmt::format("item() on non-scalar shape {}", shape_str(shape_)));
    return (*data_)[0];
}

Tensor Tensor::detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
}

double Tensor::norm() const {
    double s = 0.0;
    for (double v : *data_) s += v * v;
    return std::sqrt(s);
}

double Tensor::sum() const { return std::accumulate(data_->begin(), data_->end(), 0.0); }

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : *data_) m = std::max(m, std::abs(v));
    return m;
}

bool Tensor::all_finite() const {
    return std::all_of(data_->begin(), data_->end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> Tensor::row_norms() const {
    std::vector<double> out(rows());
    const auto c = cols();
    for (std::size_t r = 0; r < out.size(); ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += (*data_)[r * c + j] * (*data_)[r * c + j];
        out[r] = std::sqrt(s);
    }
    return out;
}

Tensor Tensor::scaled(double c) const {
    std::vector<double> d(*data_);
    for (double& v : d) v *= c;
    return {shape_, std::move(d)};
}

Tensor Tensor::with_data(std::vector<double> data) const { return {shape_, std::move(data)}; }

const char* op_name(Op op) {
    switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::LayerNorm: return "layer_norm";
    case Op::Relu: return "relu";
    case Op::Add: return "add";
    case Op::AddRow: return "add_row";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::SumAll: return "sum_all";
    case Op::ConcatLast: return "concat_last";
    case Op::RelationGather: return "relation_gather";
    case Op::RelationScatter: return "relation_scatter";
    }
    return "?";
}

// ---- forward kernels -----------------------------------------------------
//
// Kernels work on detached values only, so the same code path serves both
// eager evaluation and Tape::replay().

namespace {

using Vec = std::vector<double>;

// c[m x p] += a[m x k] * b[k x p]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            const double av = a[i * k + t];
            if (av == 0.0) continue;
            const double* brow = b + t * p;
            double* crow = c + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
}

// c[m x p] += a^T * b where a is [k x m], b is [k x p]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t t = 0; t < k; ++t)
        for (std::size_t i = 0; i < m; ++i) {
            const double av = a[t * m + i];
            if (av == 0.0) continue;
            const double* brow = b + t * p;
            double* crow = c + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
}

// c[m x k] += a[m x p] * b^T where b is [k x p]
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t p, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            double s = 0.0;
            for (std::size_t j = 0; j < p; ++j) s += a[i * p + j] * b[t * p + j];
            c[i * k + t] += s;
        }
}

struct MatDims {
    std::size_t batch, m, k, p;
};

MatDims matmul_dims(const Shape& a, const Shape& b) {
    if (a.size() == 2 && b.size() == 2) {
        if (a[1] != b[0])
            throw DimensionError(fmt::format("matmul: inner dimensions differ, {} x {}", shape_str(a), shape_str(b)));
        return {1, a[0], a[1], b[1]};
    }
    if (a.size() == 3 && b.size() == 3) {
        if (a[0] != b[0] || a[2] != b[1])
            throw DimensionError(fmt::format("matmul: batched shapes incompatible, {} x {}", shape_str(a), shape_str(b)));
        return {a[0], a[1], a[2], b[2]};
    }
    throw DimensionError(fmt::format("matmul: unsupported ranks {} x {}", shape_str(a), shape_str(b)));
}

Tensor matmul_kernel(const Tensor& a, const Tensor& b) {
    const auto d = matmul_dims(a.shape(), b.shape());
    Vec out(d.batch * d.m * d.p, 0.0);
    for (std::size_t s = 0; s < d.batch; ++s)
        gemm_acc(a.data().data() + s * d.m * d.k, b.data().data() + s * d.k * d.p, out.data() + s * d.m * d.p, d.m,
                 d.k, d.p);
    Shape shape = d.batch == 1 && a.rank() == 2 ? Shape{d.m, d.p} : Shape{d.batch, d.m, d.p};
    return {shape, std::move(out)};
}

Tensor transpose_kernel(const Tensor& a) {
    const auto r = a.shape()[0], c = a.shape()[1];
    Vec out(a.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    return {{c, r}, std::move(out)};
}

Tensor softmax_kernel(const Tensor& a) {
    const auto c = a.cols(), rows = a.rows();
    Vec out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = a.data().data() + r * c;
        double* o = out.data() + r * c;
        const double mx = *std::max_element(in, in + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < c; ++j) o[j] /= z;
    }
    return {a.shape(), std::move(out)};
}

Tensor layer_norm_kernel(const Tensor& a, const Tensor& gain, const Tensor& bias) {
    const auto c = a.cols(), rows = a.rows();
    Vec out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = a.data().data() + r * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += in[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (in[j] - mean) * inv * gain[j] + bias[j];
    }
    return {a.shape(), std::move(out)};
}

Tensor relu_kernel(const Tensor& a) {
    Vec out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return {a.shape(), std::move(out)};
}

Tensor add_kernel(const Tensor& a, const Tensor& b) {
    Vec out(a.data().begin(), a.data().end());
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    } else {
        const auto c = a.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
    }
    return {a.shape(), std::move(out)};
}

Tensor mul_kernel(const Tensor& a, const Tensor& b) {
    Vec out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return {a.shape(), std::move(out)};
}

Tensor scale_kernel(const Tensor& a, double c) { return a.scaled(c); }

Tensor sum_kernel(const Tensor& a) { return Tensor::scalar(a.sum()); }

Tensor concat_kernel(std::span<const Tensor> parts) {
    const auto rows = parts.front().rows();
    std::size_t width = 0;
    for (const auto& p : parts) width += p.cols();
    Vec out(rows * width);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto c = p.cols();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.data().data() + r * c, c, out.data() + r * width + off);
        off += c;
    }
    Shape shape = parts.front().shape();
    shape.back() = width;
    return {shape, std::move(out)};
}

Tensor gather_kernel(const Tensor& table, std::span<const std::size_t> labels) {
    const auto n = table.shape()[0], extent = table.shape()[1];
    Vec out(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = table[i * extent + labels[i * n + j]];
    return {{n, n}, std::move(out)};
}

Tensor scatter_kernel(const Tensor& a, std::span<const std::size_t> labels, std::size_t extent) {
    const auto n = a.shape()[0];
    Vec out(n * extent, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * extent + labels[i * n + j]] += a[i * n + j];
    return {{n, extent}, std::move(out)};
}

Tensor evaluate(const Tape::Node& node, std::span<const Tensor> in) {
    switch (node.op) {
    case Op::Leaf: return node.value;
    case Op::MatMul: return matmul_kernel(in[0], in[1]);
    case Op::Transpose: return transpose_kernel(in[0]);
    case Op::SoftmaxRows: return softmax_kernel(in[0]);
    case Op::LayerNorm: return layer_norm_kernel(in[0], in[1], in[2]);
    case Op::Relu: return relu_kernel(in[0]);
    case Op::Add:
    case Op::AddRow: return add_kernel(in[0], in[1]);
    case Op::Mul: return mul_kernel(in[0], in[1]);
    case Op::Scale: return scale_kernel(in[0], node.constant);
    case Op::SumAll: return sum_kernel(in[0]);
    case Op::ConcatLast: return concat_kernel(in);
    case Op::RelationGather: return gather_kernel(in[0], node.index);
    case Op::RelationScatter: return scatter_kernel(in[0], node.index, node.extent);
    }
    throw UsageError("unknown op");
}

// Find the tape shared by the inputs; nullptr if all are constants.
Tape* common_tape(std::span<const Tensor> inputs) {
    Tape* tape = nullptr;
    for (const Tensor& t : inputs) {
        if (!t.on_tape()) continue;
        if (tape && tape != t.tape()) throw UsageError("operands are recorded on different tapes");
        tape = t.tape();
    }
    return tape;
}

// Evaluate and, when any input is tracked, record. Constant inputs are
// recorded as leaves so the node's inputs always reference earlier nodes.
Tensor apply(Tape::Node node, std::span<const Tensor> inputs, Tape* tape) {
    Tensor value = evaluate(node, inputs);
    if (!tape) return value;
    for (const Tensor& t : inputs) node.inputs.push_back(t.on_tape() ? t.node() : tape->leaf(t).node());
    node.value = std::move(value);
    return tape->record(std::move(node));
}

Tensor apply(Tape::Node node, std::initializer_list<Tensor> inputs) {
    std::vector<Tensor> in(inputs);
    Tape* tape = common_tape(std::span<const Tensor>(in));
    return apply(std::move(node), in, tape);
}

Tape::Node make(Op op) {
    Tape::Node n;
    n.op = op;
    return n;
}

void check_labels(const Tensor& a, std::span<const std::size_t> labels, std::size_t extent, const char* what) {
    if (a.rank() != 2) throw DimensionError(fmt::format("{}: expected rank-2 input, got {}", what, shape_str(a.shape())));
    const auto n = a.shape()[0];
    if (labels.size() != n * n)
        throw DimensionError(fmt::format("{}: label grid has {} entries, expected {}x{}", what, labels.size(), n, n));
    for (auto l : labels)
        if (l >= extent) throw DimensionError(fmt::format("{}: label {} outside vocabulary of {}", what, l, extent));
}

} // namespace

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    matmul_dims(a.shape(), b.shape());
    return apply(make(Op::MatMul), {a, b});
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError(fmt::format("transpose: expected rank 2, got {}", shape_str(a.shape())));
    return apply(make(Op::Transpose), {a});
}

Tensor softmax_rows(const Tensor& a) { return apply(make(Op::SoftmaxRows), {a}); }

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
    const auto c = a.cols();
    if (gain.size() != c || bias.size() != c)
        throw DimensionError(fmt::format("layer_norm: gain {} / bias {} must match last axis of {}",
                                         shape_str(gain.shape()), shape_str(bias.shape()), shape_str(a.shape())));
    return apply(make(Op::LayerNorm), {a, gain, bias});
}

Tensor relu(const Tensor& a) { return apply(make(Op::Relu), {a}); }

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return apply(make(Op::Add), {a, b});
    if (b.rank() == 1 && b.size() == a.cols()) return apply(make(Op::AddRow), {a, b});
    throw DimensionError(fmt::format("add: incompatible shapes {} and {}", shape_str(a.shape()), shape_str(b.shape())));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError(fmt::format("mul: shapes differ, {} and {}", shape_str(a.shape()), shape_str(b.shape())));
    return apply(make(Op::Mul), {a, b});
}

Tensor scale(const Tensor& a, double c) {
    auto n = make(Op::Scale);
    n.constant = c;
    return apply(std::move(n), {a});
}

Tensor sum_all(const Tensor& a) { return apply(make(Op::SumAll), {a}); }

Tensor concat_last(const Tensor& a, const Tensor& b) {
    const Tensor parts[] = {a, b};
    return concat_last(parts);
}

Tensor concat_last(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_last: no inputs");
    const auto& first = parts.front().shape();
    for (const auto& p : parts) {
        const auto& s = p.shape();
        if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin()))
            throw DimensionError(
                fmt::format("concat_last: leading axes differ, {} vs {}", shape_str(first), shape_str(s)));
    }
    return apply(make(Op::ConcatLast), parts, common_tape(parts));
}

Tensor relation_gather(const Tensor& table, std::span<const std::size_t> labels) {
    check_labels(table, labels, table.rank() == 2 ? table.shape()[1] : 0, "relation_gather");
    auto n = make(Op::RelationGather);
    n.index.assign(labels.begin(), labels.end());
    n.extent = table.shape()[1];
    return apply(std::move(n), {table});
}

Tensor relation_scatter(const Tensor& a, std::span<const std::size_t> labels, std::size_t extent) {
    check_labels(a, labels, extent, "relation_scatter");
    if (a.shape()[0] != a.shape()[1])
        throw DimensionError(fmt::format("relation_scatter: expected square input, got {}", shape_str(a.shape())));
    auto n = make(Op::RelationScatter);
    n.index.assign(labels.begin(), labels.end());
    n.extent = extent;
    return apply(std::move(n), {a});
}

// ---- Tape ----------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
    Node n;
    n.op = Op::Leaf;
    n.value = value.detach();
    return record(std::move(n));
}

Tensor Tape::record(Node node) {
    for (auto in : node.inputs)
        if (in >= nodes_.size()) throw UsageError("tape node references a later node");
    Tensor out = node.value;
    out.tape_ = this;
    out.node_ = nodes_.size();
    nodes_.push_back(std::move(node));
    return out;
}

const Tape::Node& Tape::node_of(const Tensor& t) const {
    if (t.tape() != this || t.node() >= nodes_.size()) throw UsageError("tensor is not recorded on this tape");
    return nodes_[t.node()];
}

void Tape::clear_grads() { grads_.clear(); }

bool Tape::has_grad(const Tensor& t) const {
    node_of(t);
    return t.node() < grads_.size() && !grads_[t.node()].empty();
}

Tensor Tape::grad(const Tensor& t) const {
    const auto& n = node_of(t);
    if (t.node() < grads_.size() && !grads_[t.node()].empty()) return n.value.with_data(grads_[t.node()]);
    return Tensor::zeros(n.value.shape());
}

namespace {

void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

} // namespace

void Tape::backward(const Tensor& root) {
    const auto& rn = node_of(root);
    if (rn.value.size() != 1)
        throw DimensionError(fmt::format("backward: root must be scalar, got {}", shape_str(rn.value.shape())));
    grads_.resize(nodes_.size());
    accumulate(grads_[root.node()], std::vector<double>{1.0});

    for (std::size_t id = root.node() + 1; id-- > 0;) {
        if (grads_[id].empty()) continue;
        const Node& n = nodes_[id];
        const std::vector<double> g = grads_[id];
        auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
        auto push = [&](std::size_t k, const std::vector<double>& d) { accumulate(grads_[n.inputs[k]], d); };

        switch (n.op) {
        case Op::Leaf: break;
        case Op::MatMul: {
            const auto d = matmul_dims(in(0).shape(), in(1).shape());
            Vec da(in(0).size(), 0.0), db(in(1).size(), 0.0);
            for (std::size_t s = 0; s < d.batch; ++s) {
                const double* gs = g.data() + s * d.m * d.p;
                gemm_nt_acc(gs, in(1).data().data() + s * d.k * d.p, da.data() + s * d.m * d.k, d.m, d.p, d.k);
                gemm_tn_acc(in(0).data().data() + s * d.m * d.k, gs, db.data() + s * d.k * d.p, d.k, d.m, d.p);
            }
            push(0, da);
            push(1, db);
            break;
        }
        case Op::Transpose: {
            const auto r = in(0).shape()[0], c = in(0).shape()[1];
            Vec da(g.size());
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) da[i * c + j] = g[j * r + i];
            push(0, da);
            break;
        }
        case Op::SoftmaxRows: {
            const auto& y = n.value;
            const auto c = y.cols(), rows = y.rows();
            Vec da(g.size());
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
                for (std::size_t j = 0; j < c; ++j) da[r * c + j] = y[r * c + j] * (g[r * c + j] - dot);
            }
            push(0, da);
            break;
        }
        case Op::LayerNorm: {
            const auto& x = in(0);
            const auto& gain = in(1);
            const auto c = x.cols(), rows = x.rows();
            const double inv_c = 1.0 / static_cast<double>(c);
            Vec dx(x.size()), dgain(c, 0.0), dbias(c, 0.0), xhat(c), dxhat(c);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = x.data().data() + r * c;
                double mean = 0.0;
                for (std::size_t j = 0; j < c; ++j) mean += xr[j];
                mean *= inv_c;
                double var = 0.0;
                for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
                var *= inv_c;
                const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    xhat[j] = (xr[j] - mean) * inv;
                    const double gy = g[r * c + j];
                    dgain[j] += gy * xhat[j];
                    dbias[j] += gy;
                    dxhat[j] = gy * gain[j];
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat[j];
                }
                m1 *= inv_c;
                m2 *= inv_c;
                for (std::size_t j = 0; j < c; ++j) dx[r * c + j] = inv * (dxhat[j] - m1 - xhat[j] * m2);
            }
            push(0, dx);
            push(1, dgain);
            push(2, dbias);
            break;
        }
        case Op::Relu: {
            Vec da(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) da[i] = in(0)[i] > 0.0 ? g[i] : 0.0;
            push(0, da);
            break;
        }
        case Op::Add:
            push(0, g);
            push(1, g);
            break;
        case Op::AddRow: {
            const auto c = in(1).size();
            Vec db(c, 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) db[i % c] += g[i];
            push(0, g);
            push(1, db);
            break;
        }
        case Op::Mul: {
            Vec da(g.size()), db(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] = g[i] * in(1)[i];
                db[i] = g[i] * in(0)[i];
            }
            push(0, da);
            push(1, db);
            break;
        }
        case Op::Scale: {
            Vec da(g);
            for (double& v : da) v *= n.constant;
            push(0, da);
            break;
        }
        case Op::SumAll: push(0, Vec(in(0).size(), g[0])); break;
        case Op::ConcatLast: {
            const auto width = n.value.cols(), rows = n.value.rows();
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                const auto c = in(k).cols();
                Vec d(rows * c);
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy_n(g.data() + r * width + off, c, d.data() + r * c);
                push(k, d);
                off += c;
            }
            break;
        }
        case Op::RelationGather: {
            // adjoint of gather is scatter
            push(0, scatter_kernel(n.value.with_data(g), n.index, n.extent).to_vector());
            break;
        }
        case Op::RelationScatter: {
            const auto rows = in(0).shape()[0];
            push(0, gather_kernel(Tensor({rows, n.extent}, g), n.index).to_vector());
            break;
        }
        }
    }
}

std::vector<Tensor> Tape::replay() const {
    std::vector<Tensor> values;
    values.reserve(nodes_.size());
    for (const auto& n : nodes_) {
        std::vector<Tensor> in;
        in.reserve(n.inputs.size());
        for (auto id : n.inputs) in.push_back(values[id]);
        values.push_back(evaluate(n, in));
    }
    return values;
}

} // namespace dtfixup
