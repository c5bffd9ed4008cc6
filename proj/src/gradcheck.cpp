#include "unialign/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace unialign {

namespace {

double eval_scalar(const LossBuilder& f, const Tensor& x) {
    Tape tape;
    int loss = f(tape, tape.leaf(x));
    const Tensor& v = tape.value(loss);
    if (v.numel() != 1) {
        throw std::invalid_argument("finite_diff_check: builder must produce a scalar, got " +
                                    v.shape_str());
    }
    return v.data[0];
}

}  // namespace

double finite_diff_check(const LossBuilder& f, const Tensor& x, double eps) {
    if (eps <= 0.0) {
        throw std::invalid_argument("finite_diff_check: eps must be positive");
    }

    Tape tape;
    const int x_id = tape.leaf(x);
    const int loss = f(tape, x_id);
    if (tape.value(loss).numel() != 1) {
        throw std::invalid_argument("finite_diff_check: builder must produce a scalar, got " +
                                    tape.value(loss).shape_str());
    }
    const Tensor analytic = tape.backward(loss).at(x_id);

    double max_rel_err = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double original = probe.data[i];
        probe.data[i] = original + eps;
        const double plus = eval_scalar(f, probe);
        probe.data[i] = original - eps;
        const double minus = eval_scalar(f, probe);
        probe.data[i] = original;

        const double numeric = (plus - minus) / (2.0 * eps);
        const double a = analytic.data[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel_err = std::max(max_rel_err, std::abs(a - numeric) / denom);
    }
    return max_rel_err;
}

}  // namespace unialign
