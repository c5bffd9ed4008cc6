#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "unialign/tensor.hpp"

namespace unialign {

// Gradients of one backward pass, indexed by node id.
class Gradients {
  public:
    explicit Gradients(std::vector<Tensor> by_node) : by_node_(std::move(by_node)) {}
    const Tensor& at(int id) const;
    std::size_t size() const { return by_node_.size(); }

  private:
    std::vector<Tensor> by_node_;
};

// Define-by-run computation graph over an append-only record of nodes.
// Node ids are indices into the record; every parent id must already exist
// when a node is pushed, so the record is topologically ordered by
// construction and cycles are rejected at the door. One Tape per forward
// pass; backward() is const and may be called repeatedly.
class Tape {
  public:
    // Registers an input or parameter value. No parents.
    int leaf(Tensor value);

    // out[b,o] = sum_i x[b,i] * weights[i,o] + bias[o]
    int affine(int x, int weights, int bias);

    // Valid cross-correlation, stride 1, kernel length 3.
    // x: [B, C_in, L], kernels: [C_out, C_in, 3], bias: [C_out] -> [B, C_out, L-2]
    int conv1d(int x, int kernels, int bias);

    // Elementwise 1 / (1 + exp(-x)), stable for the full double range.
    int sigmoid(int x);

    // Train mode: zero each element with probability `rate`, scale survivors
    // by 1/(1-rate). Eval mode: identity (rng untouched).
    int dropout(int x, double rate, bool train, std::mt19937_64& rng);

    // Reinterprets the row-major data with a new shape of equal element count.
    int reshape(int x, std::vector<std::size_t> shape);

    // [B, C, L] -> [B, C*L]; row-major data is unchanged.
    int flatten2d(int x);

    // Stacks rows: [A, K] and [B, K] -> [A+B, K].
    int concat_rows(int a, int b);

    // Elementwise sum of two same-shape tensors.
    int add(int a, int b);

    // Elementwise x * factor.
    int scale(int x, double factor);

    // Forward identity; backward multiplies the upstream gradient by -lambda.
    int grad_reverse(int x, double lambda);

    // Mean over the batch of -log softmax(logits)[label]; max-subtracted.
    int softmax_cross_entropy(int logits, std::vector<int> labels);

    // (1/numel) * sum |a - b|; subgradient at 0 is 0.
    int mean_abs_distance(int a, int b);

    // (1/numel) * sum (a - b)^2
    int mean_sq_distance(int a, int b);

    const Tensor& value(int id) const;
    int size() const { return static_cast<int>(nodes_.size()); }

    // Exact reverse-mode gradients of a scalar loss w.r.t. every node,
    // seeded with 1.0. Deterministic: same graph, same values, same bits.
    Gradients backward(int loss) const;

  private:
    enum class Op {
        kLeaf,
        kAffine,
        kConv1d,
        kSigmoid,
        kDropout,
        kReshape,
        kConcatRows,
        kAdd,
        kScale,
        kGradReverse,
        kSoftmaxCrossEntropy,
        kMeanAbsDistance,
        kMeanSqDistance,
    };

    struct Node {
        Op op = Op::kLeaf;
        Tensor value;
        std::vector<int> parents;
        Tensor saved;             // op-specific: dropout mask, softmax probs
        std::vector<int> labels;  // softmax_cross_entropy targets
        double coeff = 0.0;       // grad_reverse lambda / scale factor
    };

    int push(Node node);
    const Node& node(int id) const;
    void check_id(int id) const;

    std::vector<Node> nodes_;
};

}  // namespace unialign
