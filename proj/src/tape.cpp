#include "unialign/tape.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

#include "unialign/rng.hpp"

namespace unialign {

namespace {

using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstMatrixMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
    return ConstMatrixMap(t.data.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
}

MatrixMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
    return MatrixMap(t.data.data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() +
                                " and " + b.shape_str());
}

}  // namespace

const Tensor& Gradients::at(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= by_node_.size()) {
        throw std::out_of_range("gradient lookup for unknown node id " + std::to_string(id));
    }
    return by_node_[static_cast<std::size_t>(id)];
}

void Tape::check_id(int id) const {
    if (id < 0 || id >= size()) {
        throw std::invalid_argument("node id " + std::to_string(id) +
                                    " does not exist on this tape (cycles are impossible: "
                                    "parents must precede children)");
    }
}

int Tape::push(Node node) {
    for (int p : node.parents) check_id(p);
    nodes_.push_back(std::move(node));
    return size() - 1;
}

const Tape::Node& Tape::node(int id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)];
}

const Tensor& Tape::value(int id) const {
    return node(id).value;
}

int Tape::leaf(Tensor value) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    return push(std::move(n));
}

int Tape::affine(int x, int weights, int bias) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(weights);
    const Tensor& bv = value(bias);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0)) shape_error("affine", xv, wv);
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) shape_error("affine bias", bv, wv);

    const std::size_t batch = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
    Node n;
    n.op = Op::kAffine;
    n.parents = {x, weights, bias};
    n.value = Tensor::zeros({batch, out});
    as_matrix(n.value, batch, out).noalias() = as_matrix(xv, batch, in) * as_matrix(wv, in, out);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out; ++o) n.value(b, o) += bv(o);
    return push(std::move(n));
}

int Tape::conv1d(int x, int kernels, int bias) {
    const Tensor& xv = value(x);
    const Tensor& kv = value(kernels);
    const Tensor& bv = value(bias);
    if (xv.rank() != 3 || kv.rank() != 3 || kv.dim(2) != 3) shape_error("conv1d", xv, kv);
    if (xv.dim(1) != kv.dim(1)) shape_error("conv1d channels", xv, kv);
    if (bv.rank() != 1 || bv.dim(0) != kv.dim(0)) shape_error("conv1d bias", bv, kv);
    const std::size_t length = xv.dim(2);
    if (length < 3) {
        throw std::invalid_argument("conv1d: input length " + std::to_string(length) +
                                    " is shorter than the kernel length 3");
    }

    const std::size_t batch = xv.dim(0), c_in = xv.dim(1), c_out = kv.dim(0);
    const std::size_t out_len = length - 2;
    Node n;
    n.op = Op::kConv1d;
    n.parents = {x, kernels, bias};
    n.value = Tensor::zeros({batch, c_out, out_len});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < c_out; ++co) {
            double* out_row = &n.value(b, co, 0);
            for (std::size_t i = 0; i < out_len; ++i) out_row[i] = bv(co);
            for (std::size_t ci = 0; ci < c_in; ++ci) {
                const double* in_row = &xv(b, ci, 0);
                const double k0 = kv(co, ci, 0), k1 = kv(co, ci, 1), k2 = kv(co, ci, 2);
                for (std::size_t i = 0; i < out_len; ++i) {
                    out_row[i] += k0 * in_row[i] + k1 * in_row[i + 1] + k2 * in_row[i + 2];
                }
            }
        }
    }
    return push(std::move(n));
}

int Tape::sigmoid(int x) {
    Node n;
    n.op = Op::kSigmoid;
    n.parents = {x};
    n.value = value(x);
    for (double& v : n.value.data) v = stable_sigmoid(v);
    return push(std::move(n));
}

int Tape::dropout(int x, double rate, bool train, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout: rate must lie in [0, 1), got " +
                                    std::to_string(rate));
    }
    Node n;
    n.op = Op::kDropout;
    n.parents = {x};
    n.value = value(x);
    if (train && rate > 0.0) {
        const double keep_scale = 1.0 / (1.0 - rate);
        n.saved = Tensor::zeros(n.value.shape);
        for (std::size_t i = 0; i < n.value.numel(); ++i) {
            double mask = uniform_unit(rng) < rate ? 0.0 : keep_scale;
            n.saved.data[i] = mask;
            n.value.data[i] *= mask;
        }
    }
    return push(std::move(n));
}

int Tape::reshape(int x, std::vector<std::size_t> shape) {
    const Tensor& xv = value(x);
    if (shape_numel(shape) != xv.numel()) {
        throw std::invalid_argument("reshape: element count mismatch between " + xv.shape_str() +
                                    " and requested shape");
    }
    Node n;
    n.op = Op::kReshape;
    n.parents = {x};
    n.value = Tensor::from(std::move(shape), xv.data);
    return push(std::move(n));
}

int Tape::flatten2d(int x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 3) {
        throw std::invalid_argument("flatten2d expects a rank-3 input, got " + xv.shape_str());
    }
    return reshape(x, {xv.dim(0), xv.dim(1) * xv.dim(2)});
}

int Tape::concat_rows(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
        shape_error("concat_rows", av, bv);
    }
    Node n;
    n.op = Op::kConcatRows;
    n.parents = {a, b};
    n.value = Tensor::zeros({av.dim(0) + bv.dim(0), av.dim(1)});
    std::copy(av.data.begin(), av.data.end(), n.value.data.begin());
    std::copy(bv.data.begin(), bv.data.end(),
              n.value.data.begin() + static_cast<std::ptrdiff_t>(av.numel()));
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) shape_error("add", av, bv);
    Node n;
    n.op = Op::kAdd;
    n.parents = {a, b};
    n.value = av;
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value.data[i] += bv.data[i];
    return push(std::move(n));
}

int Tape::scale(int x, double factor) {
    Node n;
    n.op = Op::kScale;
    n.parents = {x};
    n.coeff = factor;
    n.value = value(x);
    for (double& v : n.value.data) v *= factor;
    return push(std::move(n));
}

int Tape::grad_reverse(int x, double lambda) {
    if (lambda < 0.0) {
        throw std::invalid_argument("grad_reverse: lambda must be non-negative, got " +
                                    std::to_string(lambda));
    }
    Node n;
    n.op = Op::kGradReverse;
    n.parents = {x};
    n.coeff = lambda;
    n.value = value(x);  // forward is the exact identity
    return push(std::move(n));
}

int Tape::softmax_cross_entropy(int logits, std::vector<int> labels) {
    const Tensor& lv = value(logits);
    if (lv.rank() != 2) {
        throw std::invalid_argument("softmax_cross_entropy expects [BxC] logits, got " +
                                    lv.shape_str());
    }
    const std::size_t batch = lv.dim(0), classes = lv.dim(1);
    if (labels.size() != batch) {
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for a batch of " + std::to_string(batch));
    }
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                        " outside [0, " + std::to_string(classes) + ")");
        }
    }

    Node n;
    n.op = Op::kSoftmaxCrossEntropy;
    n.parents = {logits};
    n.labels = std::move(labels);
    n.saved = Tensor::zeros({batch, classes});  // softmax probabilities
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        double max_logit = lv(b, 0);
        for (std::size_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, lv(b, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            double e = std::exp(lv(b, c) - max_logit);
            n.saved(b, c) = e;
            sum += e;
        }
        for (std::size_t c = 0; c < classes; ++c) n.saved(b, c) /= sum;
        const std::size_t label = static_cast<std::size_t>(n.labels[b]);
        loss += std::log(sum) - (lv(b, label) - max_logit);
    }
    n.value = Tensor::scalar(loss / static_cast<double>(batch));
    return push(std::move(n));
}

int Tape::mean_abs_distance(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) shape_error("mean_abs_distance", av, bv);
    Node n;
    n.op = Op::kMeanAbsDistance;
    n.parents = {a, b};
    double sum = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) sum += std::abs(av.data[i] - bv.data[i]);
    n.value = Tensor::scalar(sum / static_cast<double>(av.numel()));
    return push(std::move(n));
}

int Tape::mean_sq_distance(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) shape_error("mean_sq_distance", av, bv);
    Node n;
    n.op = Op::kMeanSqDistance;
    n.parents = {a, b};
    double sum = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) {
        double d = av.data[i] - bv.data[i];
        sum += d * d;
    }
    n.value = Tensor::scalar(sum / static_cast<double>(av.numel()));
    return push(std::move(n));
}

Gradients Tape::backward(int loss) const {
    const Node& loss_node = node(loss);
    if (loss_node.value.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    loss_node.value.shape_str());
    }

    std::vector<Tensor> grads(nodes_.size());
    for (std::size_t i = 0; i <= static_cast<std::size_t>(loss); ++i) {
        grads[i] = Tensor::zeros(nodes_[i].value.shape);
    }
    for (std::size_t i = static_cast<std::size_t>(loss) + 1; i < nodes_.size(); ++i) {
        grads[i] = Tensor::zeros(nodes_[i].value.shape);
    }
    grads[static_cast<std::size_t>(loss)].data[0] = 1.0;

    // Reverse topological sweep: ids descend, so every node is visited once
    // and only after all of its consumers.
    for (int id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const Tensor& up = grads[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::kLeaf:
                break;
            case Op::kAffine: {
                const Tensor& xv = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                const Tensor& wv = nodes_[static_cast<std::size_t>(n.parents[1])].value;
                Tensor& gx = grads[static_cast<std::size_t>(n.parents[0])];
                Tensor& gw = grads[static_cast<std::size_t>(n.parents[1])];
                Tensor& gb = grads[static_cast<std::size_t>(n.parents[2])];
                const std::size_t batch = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
                as_matrix(gx, batch, in).noalias() +=
                    as_matrix(up, batch, out) * as_matrix(wv, in, out).transpose();
                as_matrix(gw, in, out).noalias() +=
                    as_matrix(xv, batch, in).transpose() * as_matrix(up, batch, out);
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t o = 0; o < out; ++o) gb(o) += up(b, o);
                break;
            }
            case Op::kConv1d: {
                const Tensor& xv = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                const Tensor& kv = nodes_[static_cast<std::size_t>(n.parents[1])].value;
                Tensor& gx = grads[static_cast<std::size_t>(n.parents[0])];
                Tensor& gk = grads[static_cast<std::size_t>(n.parents[1])];
                Tensor& gb = grads[static_cast<std::size_t>(n.parents[2])];
                const std::size_t batch = xv.dim(0), c_in = xv.dim(1), c_out = kv.dim(0);
                const std::size_t out_len = xv.dim(2) - 2;
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t co = 0; co < c_out; ++co) {
                        const double* up_row = &up(b, co, 0);
                        for (std::size_t i = 0; i < out_len; ++i) gb(co) += up_row[i];
                        for (std::size_t ci = 0; ci < c_in; ++ci) {
                            const double* in_row = &xv(b, ci, 0);
                            double* gx_row = &gx(b, ci, 0);
                            const double k0 = kv(co, ci, 0), k1 = kv(co, ci, 1),
                                         k2 = kv(co, ci, 2);
                            double gk0 = 0.0, gk1 = 0.0, gk2 = 0.0;
                            for (std::size_t i = 0; i < out_len; ++i) {
                                const double g = up_row[i];
                                gk0 += g * in_row[i];
                                gk1 += g * in_row[i + 1];
                                gk2 += g * in_row[i + 2];
                                gx_row[i] += g * k0;
                                gx_row[i + 1] += g * k1;
                                gx_row[i + 2] += g * k2;
                            }
                            gk(co, ci, 0) += gk0;
                            gk(co, ci, 1) += gk1;
                            gk(co, ci, 2) += gk2;
                        }
                    }
                }
                break;
            }
            case Op::kSigmoid: {
                Tensor& gx = grads[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t i = 0; i < n.value.numel(); ++i) {
                    const double s = n.value.data[i];
                    gx.data[i] += up.data[i] * s * (1.0 - s);
                }
                break;
            }
            case Op::kDropout: {
                Tensor& gx = grads[static_cast<std::size_t>(n.parents[0])];
                if (n.saved.numel() == 0) {  // eval mode or rate 0: identity
                    for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] += up.data[i];
                } else {
                    for (std::size_t i = 0; i < gx.numel(); ++i)
                        gx.data[i] += up.data[i] * n.saved.data[i];
                }
                break;
            }
            case Op::kReshape: {
                Tensor& gx = grads[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t i = 0; i < gx.numel(); ++i) gx.data[i] += up.data[i];
                break;
            }
            case Op::kConcatRows: {
                Tensor& ga = grads[static_cast<std::size_t>(n.parents[0])];
                Tensor& gb = grads[static_cast<std::size_t>(n.parents[1])];
                for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] += up.data[i];
                for (std::size_t i = 0; i < gb.numel(); ++i)
                    gb.data[i] += up.data[ga.numel() + i];
                break;
            }
            case Op::kAdd: {
                Tensor& ga = grads[static_cast<std::size_t>(n.parents[0])];
                Tensor& gb = grads[static_cast<std::size_t>(n.parents[1])];
                for (std::size_t i = 0; i < up.numel(); ++i) {
                    ga.data[i] += up.data[i];
                    gb.data[i] += up.data[i];
                }
                break;
            }
            case Op::kScale: {
                Tensor& gx = grads[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t i = 0; i < up.numel(); ++i)
                    gx.data[i] += n.coeff * up.data[i];
                break;
            }
            case Op::kGradReverse: {
                Tensor& gx = grads[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t i = 0; i < up.numel(); ++i)
                    gx.data[i] += -n.coeff * up.data[i];
                break;
            }
            case Op::kSoftmaxCrossEntropy: {
                Tensor& gl = grads[static_cast<std::size_t>(n.parents[0])];
                const std::size_t batch = n.saved.dim(0), classes = n.saved.dim(1);
                const double g = up.data[0] / static_cast<double>(batch);
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t c = 0; c < classes; ++c) {
                        double indicator = (static_cast<std::size_t>(n.labels[b]) == c) ? 1.0 : 0.0;
                        gl(b, c) += g * (n.saved(b, c) - indicator);
                    }
                }
                break;
            }
            case Op::kMeanAbsDistance: {
                const Tensor& av = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                const Tensor& bv = nodes_[static_cast<std::size_t>(n.parents[1])].value;
                Tensor& ga = grads[static_cast<std::size_t>(n.parents[0])];
                Tensor& gb = grads[static_cast<std::size_t>(n.parents[1])];
                const double g = up.data[0] / static_cast<double>(av.numel());
                for (std::size_t i = 0; i < av.numel(); ++i) {
                    const double d = av.data[i] - bv.data[i];
                    const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    ga.data[i] += g * s;
                    gb.data[i] -= g * s;
                }
                break;
            }
            case Op::kMeanSqDistance: {
                const Tensor& av = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                const Tensor& bv = nodes_[static_cast<std::size_t>(n.parents[1])].value;
                Tensor& ga = grads[static_cast<std::size_t>(n.parents[0])];
                Tensor& gb = grads[static_cast<std::size_t>(n.parents[1])];
                const double g = 2.0 * up.data[0] / static_cast<double>(av.numel());
                for (std::size_t i = 0; i < av.numel(); ++i) {
                    const double d = av.data[i] - bv.data[i];
                    ga.data[i] += g * d;
                    gb.data[i] -= g * d;
                }
                break;
            }
        }
    }
    return Gradients(std::move(grads));
}

}  // namespace unialign
