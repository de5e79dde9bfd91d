#pragma once

// Dense f64 tensors and a recorded-tape reverse-mode autodiff engine.
//
// A Tensor is an immutable value (shape + shared row-major data). When it was
// produced by an op whose inputs live on a Tape, it also carries a handle to
// the node that produced it. Ops on constant inputs return constants and
// record nothing.
//
//   Tape tape;
//   Tensor a = tape.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
//   Tensor loss = sum_all(matmul(a, b));
//   tape.backward(loss);
//   Tensor da = tape.grad(a);
//
// The tape must outlive every tensor recorded on it.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dtfixup {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

class Tape;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data);

    static Tensor from(Shape shape, std::vector<double> data) { return {std::move(shape), std::move(data)}; }
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return full({1}, value); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_->size(); }
    std::size_t rows() const;   // product of all but the last axis
    std::size_t cols() const;   // last axis
    std::span<const double> data() const { return *data_; }
    std::vector<double> to_vector() const { return *data_; }

    double operator[](std::size_t i) const { return (*data_)[i]; }
    double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
    double item() const;

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    NodeId node() const { return node_; }
    // Same values, no tape handle.
    Tensor detach() const;

    double norm() const;      // Frobenius
    double sum() const;
    double max_abs() const;
    bool all_finite() const;
    // Euclidean norm of each row (last axis).
    std::vector<double> row_norms() const;

    // Elementwise transforms returning detached copies.
    Tensor scaled(double c) const;
    Tensor with_data(std::vector<double> data) const;

    bool same_values(const Tensor& other) const { return shape_ == other.shape_ && *data_ == *other.data_; }

private:
    friend class Tape;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    NodeId node_ = 0;
};

enum class Op {
    Leaf,
    MatMul,
    Transpose,
    SoftmaxRows,
    LayerNorm,
    Relu,
    Add,
    AddRow,
    Mul,
    Scale,
    SumAll,
    ConcatLast,
    RelationGather,
    RelationScatter,
};

const char* op_name(Op op);

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Register a trainable input. Returns a copy that is tracked on this tape.
    Tensor leaf(const Tensor& value);

    // Reverse sweep from a scalar root. Gradients accumulate across calls
    // until clear_grads().
    void backward(const Tensor& root);

    // d(root)/d(t). Zeros if t is unreachable from the last root.
    Tensor grad(const Tensor& t) const;
    bool has_grad(const Tensor& t) const;
    void clear_grads();

    std::size_t size() const { return nodes_.size(); }
    Op op(NodeId id) const { return nodes_.at(id).op; }
    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }

    // Recompute every node from the recorded leaf values and op list.
    std::vector<Tensor> replay() const;

    struct Node {
        Op op = Op::Leaf;
        std::vector<NodeId> inputs;
        Tensor value;                   // detached forward result
        double constant = 0.0;          // Scale factor
        std::vector<std::size_t> index; // relation labels, concat widths
        std::size_t extent = 0;         // relation vocabulary size
    };

    // Used by the op functions; records a node and returns its tracked output.
    Tensor record(Node node);

private:
    const Node& node_of(const Tensor& t) const;

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

// ---- primitive ops -------------------------------------------------------

// Rank-2 x rank-2, or rank-3 x rank-3 batched with equal leading extent.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Softmax over the last axis, max-subtracted.
Tensor softmax_rows(const Tensor& a);
inline constexpr double kLayerNormEps = 1e-5;
// Normalizes over the last axis then applies gain/bias (each of last-axis length).
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);
Tensor relu(const Tensor& a);
// Elementwise sum of equal shapes, or a trailing vector broadcast over rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }
Tensor sum_all(const Tensor& a);
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor concat_last(std::span<const Tensor> parts);

// out[i][j] = table[i][labels[i*n + j]] for table of shape n x extent.
Tensor relation_gather(const Tensor& table, std::span<const std::size_t> labels);
// out[i][r] = sum_j [labels[i*n + j] == r] a[i][j]; a is n x n, out is n x extent.
Tensor relation_scatter(const Tensor& a, std::span<const std::size_t> labels, std::size_t extent);

} // namespace dtfixup
