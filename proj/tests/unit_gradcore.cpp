#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "unialign/gradcheck.hpp"
#include "unialign/rng.hpp"
#include "unialign/tape.hpp"
#include "unialign/tensor.hpp"

using namespace unialign;

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -2.0,
                     double hi = 2.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = uniform_range(rng, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("affine matches hand arithmetic") {
    Tape tape;
    SUBCASE("identity weights") {
        int x = tape.leaf(Tensor::from({1, 2}, {1, 2}));
        int w = tape.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}));
        int b = tape.leaf(Tensor::zeros({2}));
        int y = tape.affine(x, w, b);
        CHECK(tape.value(y).data == std::vector<double>{1, 2});
    }
    SUBCASE("zero weights pass the bias") {
        int x = tape.leaf(Tensor::from({1, 2}, {1, 2}));
        int w = tape.leaf(Tensor::zeros({2, 2}));
        int b = tape.leaf(Tensor::from({2}, {3, 4}));
        int y = tape.affine(x, w, b);
        CHECK(tape.value(y).data == std::vector<double>{3, 4});
    }
    SUBCASE("direct arithmetic") {
        int x = tape.leaf(Tensor::from({1, 2}, {1, 1}));
        int w = tape.leaf(Tensor::from({2, 2}, {2, 3, 4, 5}));
        int b = tape.leaf(Tensor::from({2}, {1, 1}));
        int y = tape.affine(x, w, b);
        CHECK(tape.value(y).data == std::vector<double>{7, 9});
    }
    SUBCASE("inner dimension mismatch is rejected with both shapes") {
        int x = tape.leaf(Tensor::from({1, 3}, {1, 2, 3}));
        int w = tape.leaf(Tensor::zeros({2, 2}));
        int b = tape.leaf(Tensor::zeros({2}));
        CHECK_THROWS_WITH_AS(tape.affine(x, w, b),
                             doctest::Contains("[1x3]"), std::invalid_argument);
    }
}

TEST_CASE("conv1d is a valid cross-correlation with kernel length 3") {
    Tape tape;
    SUBCASE("direct cross-correlation") {
        int x = tape.leaf(Tensor::from({1, 1, 4}, {1, 2, 3, 4}));
        int k = tape.leaf(Tensor::from({1, 1, 3}, {1, 0, -1}));
        int b = tape.leaf(Tensor::zeros({1}));
        int y = tape.conv1d(x, k, b);
        CHECK(tape.value(y).shape == std::vector<std::size_t>{1, 1, 2});
        CHECK(tape.value(y).data == std::vector<double>{-2, -2});
    }
    SUBCASE("shifted identity kernel drops the edges") {
        int x = tape.leaf(Tensor::from({1, 1, 5}, {5, 6, 7, 8, 9}));
        int k = tape.leaf(Tensor::from({1, 1, 3}, {0, 1, 0}));
        int b = tape.leaf(Tensor::zeros({1}));
        int y = tape.conv1d(x, k, b);
        CHECK(tape.value(y).data == std::vector<double>{6, 7, 8});
    }
    SUBCASE("zero input passes the bias") {
        int x = tape.leaf(Tensor::zeros({1, 1, 6}));
        int k = tape.leaf(Tensor::zeros({1, 1, 3}));
        int b = tape.leaf(Tensor::from({1}, {0.5}));
        int y = tape.conv1d(x, k, b);
        CHECK(tape.value(y).data == std::vector<double>{0.5, 0.5, 0.5, 0.5});
    }
    SUBCASE("input shorter than the kernel is rejected") {
        int x = tape.leaf(Tensor::from({1, 1, 2}, {1, 2}));
        int k = tape.leaf(Tensor::zeros({1, 1, 3}));
        int b = tape.leaf(Tensor::zeros({1}));
        CHECK_THROWS_AS(tape.conv1d(x, k, b), std::invalid_argument);
    }
}

TEST_CASE("sigmoid values and derivative") {
    Tape tape;
    int x = tape.leaf(Tensor::from({1, 3}, {0.0, 800.0, -800.0}));
    int y = tape.sigmoid(x);
    CHECK(tape.value(y)(0, 0) == 0.5);
    CHECK(tape.value(y)(0, 1) == 1.0);  // saturates without overflow
    CHECK(tape.value(y)(0, 2) == doctest::Approx(0.0));

    // derivative at 0 is 0.25
    Tape t2;
    int x0 = t2.leaf(Tensor::scalar(0.0));
    int s = t2.sigmoid(x0);
    CHECK(t2.backward(s).at(x0).data[0] == 0.25);
}

TEST_CASE("dropout") {
    std::mt19937_64 rng(7);
    Tape tape;
    int x = tape.leaf(Tensor::from({1, 4}, {1, 1, 1, 1}));

    SUBCASE("eval mode is the identity") {
        int y = tape.dropout(x, 0.5, false, rng);
        CHECK(bits_equal(tape.value(y), tape.value(x)));
    }
    SUBCASE("rate 0 in train mode is the identity") {
        int y = tape.dropout(x, 0.0, true, rng);
        CHECK(bits_equal(tape.value(y), tape.value(x)));
    }
    SUBCASE("seeded mask is reproducible and scales survivors to 2") {
        std::mt19937_64 train_rng(123);
        int y = tape.dropout(x, 0.5, true, train_rng);
        // replay the generator: same draws, same mask
        std::mt19937_64 replay(123);
        for (std::size_t i = 0; i < 4; ++i) {
            const double expected = uniform_unit(replay) < 0.5 ? 0.0 : 2.0;
            CHECK(tape.value(y).data[i] == expected);
        }
    }
    SUBCASE("rate 1 is rejected") {
        CHECK_THROWS_AS(tape.dropout(x, 1.0, true, rng), std::invalid_argument);
    }
}

TEST_CASE("softmax cross entropy values") {
    Tape tape;
    SUBCASE("uniform logits give ln C") {
        int logits = tape.leaf(Tensor::from({1, 2}, {0, 0}));
        int loss = tape.softmax_cross_entropy(logits, {0});
        CHECK(tape.value(loss).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("confident correct prediction is near zero") {
        int logits = tape.leaf(Tensor::from({1, 2}, {100, 0}));
        int loss = tape.softmax_cross_entropy(logits, {0});
        CHECK(tape.value(loss).data[0] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(tape.value(loss).data[0] >= 0.0);
    }
    SUBCASE("direct evaluation of the softmax formula") {
        int logits = tape.leaf(Tensor::from({1, 3}, {1, 2, 3}));
        int loss = tape.softmax_cross_entropy(logits, {2});
        const double expected = std::log(1.0 + std::exp(-1.0) + std::exp(-2.0));
        CHECK(tape.value(loss).data[0] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(tape.value(loss).data[0] == doctest::Approx(0.407606).epsilon(1e-5));
    }
    SUBCASE("huge logits stay finite") {
        int logits = tape.leaf(Tensor::from({1, 2}, {5000, -5000}));
        int loss = tape.softmax_cross_entropy(logits, {1});
        CHECK(std::isfinite(tape.value(loss).data[0]));
        CHECK(tape.value(loss).data[0] >= 0.0);
    }
    SUBCASE("out-of-range label is rejected") {
        int logits = tape.leaf(Tensor::from({1, 2}, {0, 0}));
        CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, {2}), std::invalid_argument);
        CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, {-1}), std::invalid_argument);
    }
}

TEST_CASE("mean absolute distance") {
    Tape tape;
    int a = tape.leaf(Tensor::from({1, 4}, {1, 2, 3, 4}));
    int b = tape.leaf(Tensor::from({1, 4}, {1, 1, 3, 5}));
    SUBCASE("identical inputs give zero") {
        int d = tape.mean_abs_distance(a, a);
        CHECK(tape.value(d).data[0] == 0.0);
    }
    SUBCASE("direct arithmetic") {
        int d = tape.mean_abs_distance(a, b);
        CHECK(tape.value(d).data[0] == 0.5);
    }
    SUBCASE("symmetric") {
        int d1 = tape.mean_abs_distance(a, b);
        int d2 = tape.mean_abs_distance(b, a);
        CHECK(tape.value(d1).data[0] == tape.value(d2).data[0]);
    }
    SUBCASE("shape mismatch is rejected") {
        int c = tape.leaf(Tensor::from({1, 2}, {0, 0}));
        CHECK_THROWS_AS(tape.mean_abs_distance(a, c), std::invalid_argument);
    }
}

TEST_CASE("mean absolute distance properties over random inputs") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor ta = random_tensor({2, 5}, rng);
        Tensor tb = random_tensor({2, 5}, rng);
        Tape tape;
        int a = tape.leaf(ta), b = tape.leaf(tb);
        const double ab = tape.value(tape.mean_abs_distance(a, b)).data[0];
        const double ba = tape.value(tape.mean_abs_distance(b, a)).data[0];
        CHECK(ab >= 0.0);
        CHECK(ab == ba);
        CHECK(tape.value(tape.mean_abs_distance(a, a)).data[0] == 0.0);
    }
}

TEST_CASE("grad_reverse forward identity and exact backward reversal") {
    SUBCASE("forward is bitwise identical") {
        Tape tape;
        int x = tape.leaf(Tensor::from({1, 2}, {3.1, -2.0}));
        int y = tape.grad_reverse(x, 1.0);
        CHECK(bits_equal(tape.value(y), tape.value(x)));
    }
    SUBCASE("upstream 0.3 at lambda 1 becomes -0.3") {
        Tape tape;
        int x = tape.leaf(Tensor::scalar(2.0));
        int y = tape.grad_reverse(x, 1.0);
        int loss = tape.scale(y, 0.3);
        CHECK(tape.backward(loss).at(x).data[0] == -0.3);
    }
    SUBCASE("lambda 0 blocks the gradient") {
        Tape tape;
        int x = tape.leaf(Tensor::scalar(2.0));
        int loss = tape.scale(tape.grad_reverse(x, 0.0), 0.3);
        CHECK(tape.backward(loss).at(x).data[0] == 0.0);
    }
    SUBCASE("downstream gradient equals -lambda times upstream, exactly") {
        for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
            std::mt19937_64 rng(2024);
            const Tensor xv = random_tensor({3, 4}, rng);
            const Tensor wv = random_tensor({4, 2}, rng);
            const Tensor bv = random_tensor({2}, rng);
            const auto build = [&](bool with_grl) {
                Tape tape;
                int x = tape.leaf(xv);
                int h = with_grl ? tape.grad_reverse(x, lambda) : x;
                int y = tape.sigmoid(tape.affine(h, tape.leaf(wv), tape.leaf(bv)));
                int loss = tape.softmax_cross_entropy(y, {0, 1, 0});
                return tape.backward(loss).at(x);
            };
            const Tensor with = build(true);
            const Tensor without = build(false);
            for (std::size_t i = 0; i < with.numel(); ++i) {
                CHECK(with.data[i] == -lambda * without.data[i]);
            }
        }
    }
}

TEST_CASE("backward basics") {
    SUBCASE("grad of sum-like loss w.r.t. W replicates x") {
        Tape tape;
        int x = tape.leaf(Tensor::from({1, 3}, {1, 2, 3}));
        int w = tape.leaf(Tensor::from({3, 2}, {1, 1, 1, 1, 1, 1}));
        int b = tape.leaf(Tensor::zeros({2}));
        int y = tape.affine(x, w, b);  // all outputs positive
        int zeros = tape.leaf(Tensor::zeros({1, 2}));
        int loss = tape.mean_abs_distance(y, zeros);  // sum(y)/2
        const Tensor gw = tape.backward(loss).at(w);
        // d loss / d W[i][o] = x[i] / 2
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t o = 0; o < 2; ++o)
                CHECK(gw(i, o) == doctest::Approx(tape.value(x)(0, i) / 2.0).epsilon(1e-15));
    }
    SUBCASE("repeated backward over one graph is deterministic") {
        std::mt19937_64 rng(5);
        Tape tape;
        int x = tape.leaf(random_tensor({2, 3}, rng));
        int w = tape.leaf(random_tensor({3, 3}, rng));
        int b = tape.leaf(random_tensor({3}, rng));
        int loss = tape.softmax_cross_entropy(tape.sigmoid(tape.affine(x, w, b)), {0, 2});
        const Gradients g1 = tape.backward(loss);
        const Gradients g2 = tape.backward(loss);
        for (int id = 0; id < tape.size(); ++id) CHECK(bits_equal(g1.at(id), g2.at(id)));
    }
    SUBCASE("non-scalar loss is rejected") {
        Tape tape;
        int x = tape.leaf(Tensor::from({1, 2}, {1, 2}));
        CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
    }
    SUBCASE("unknown parent ids are rejected") {
        Tape tape;
        CHECK_THROWS_AS(tape.sigmoid(3), std::invalid_argument);
    }
}

TEST_CASE("finite_diff_check on closed-form cases") {
    SUBCASE("sum of squares") {
        const Tensor x = Tensor::from({1, 2}, {1, 2});
        const double err = finite_diff_check(
            [](Tape& t, int xid) {
                int zeros = t.leaf(Tensor::zeros({1, 2}));
                return t.scale(t.mean_sq_distance(xid, zeros), 2.0);  // = sum(x^2)
            },
            x);
        CHECK(err <= 1e-8);
    }
    SUBCASE("softmax cross entropy over random logits") {
        std::mt19937_64 rng(17);
        for (int trial = 0; trial < 5; ++trial) {
            const Tensor logits = random_tensor({4, 6}, rng);
            const double err = finite_diff_check(
                [](Tape& t, int xid) { return t.softmax_cross_entropy(xid, {0, 5, 3, 2}); },
                logits);
            CHECK(err <= 1e-6);
        }
    }
    SUBCASE("composed sigmoid(affine) against central differences") {
        std::mt19937_64 rng(31);
        const Tensor x = random_tensor({2, 4}, rng);
        const Tensor w = random_tensor({4, 3}, rng);
        const Tensor b = random_tensor({3}, rng);
        const double err = finite_diff_check(
            [&](Tape& t, int xid) {
                int y = t.sigmoid(t.affine(xid, t.leaf(w), t.leaf(b)));
                return t.softmax_cross_entropy(y, {0, 2});
            },
            x);
        CHECK(err <= 1e-6);
    }
    SUBCASE("graph containing grad_reverse checks against the sign-flipped analytic value") {
        std::mt19937_64 rng(47);
        const double lambda = 1.5;
        const Tensor x = random_tensor({2, 3}, rng);
        const Tensor w = random_tensor({3, 2}, rng);
        const Tensor b = random_tensor({2}, rng);

        // forward is identical with and without the reversal node
        Tape with_grl;
        int xg = with_grl.leaf(x);
        int yg = with_grl.sigmoid(
            with_grl.affine(with_grl.grad_reverse(xg, lambda), with_grl.leaf(w),
                            with_grl.leaf(b)));
        int lg = with_grl.softmax_cross_entropy(yg, {0, 1});
        const Tensor analytic = with_grl.backward(lg).at(xg);

        // numeric differentiation never sees the reversal; the plain graph
        // must pass, and the reversed analytic value must be its -lambda
        // multiple.
        const LossBuilder plain = [&](Tape& t, int xid) {
            int y = t.sigmoid(t.affine(xid, t.leaf(w), t.leaf(b)));
            return t.softmax_cross_entropy(y, {0, 1});
        };
        CHECK(finite_diff_check(plain, x) <= 1e-6);

        Tape plain_tape;
        int xp = plain_tape.leaf(x);
        const Tensor plain_grad = plain_tape.backward(plain(plain_tape, xp)).at(xp);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            CHECK(analytic.data[i] == -lambda * plain_grad.data[i]);
        }
    }
}

TEST_CASE("finite_diff_check over every differentiable op, random instances") {
    std::mt19937_64 rng(1234);
    int cases = 0;
    for (int trial = 0; trial < 25; ++trial) {
        // affine + sigmoid + softmax CE stack (checks x, W and b routes)
        {
            const Tensor x = random_tensor({3, 5}, rng);
            const Tensor w = random_tensor({5, 4}, rng);
            const Tensor b = random_tensor({4}, rng);
            const std::vector<int> labels{0, 3, 1};
            CHECK(finite_diff_check(
                      [&](Tape& t, int xid) {
                          int y = t.sigmoid(t.affine(xid, t.leaf(w), t.leaf(b)));
                          return t.softmax_cross_entropy(y, labels);
                      },
                      x) <= 1e-4);
            CHECK(finite_diff_check(
                      [&](Tape& t, int wid) {
                          int y = t.sigmoid(t.affine(t.leaf(x), wid, t.leaf(b)));
                          return t.softmax_cross_entropy(y, labels);
                      },
                      w) <= 1e-4);
            cases += 2;
        }
        // conv1d route (x and kernels)
        {
            const Tensor x = random_tensor({2, 2, 8}, rng);
            const Tensor k = random_tensor({3, 2, 3}, rng);
            const Tensor b = random_tensor({3}, rng);
            const auto head = [&](Tape& t, int conv_out) {
                int flat = t.flatten2d(t.sigmoid(conv_out));
                int zeros = t.leaf(Tensor::zeros({2, 18}));
                return t.mean_sq_distance(flat, zeros);
            };
            CHECK(finite_diff_check(
                      [&](Tape& t, int xid) {
                          return head(t, t.conv1d(xid, t.leaf(k), t.leaf(b)));
                      },
                      x) <= 1e-4);
            CHECK(finite_diff_check(
                      [&](Tape& t, int kid) {
                          return head(t, t.conv1d(t.leaf(x), kid, t.leaf(b)));
                      },
                      k) <= 1e-4);
            cases += 2;
        }
        // dropout with a frozen (re-seeded) mask
        {
            const Tensor x = random_tensor({2, 6}, rng, 0.5, 2.0);
            const std::uint64_t mask_seed = rng();
            CHECK(finite_diff_check(
                      [&](Tape& t, int xid) {
                          std::mt19937_64 mask_rng(mask_seed);
                          int y = t.dropout(xid, 0.5, true, mask_rng);
                          int zeros = t.leaf(Tensor::zeros({2, 6}));
                          return t.mean_sq_distance(y, zeros);
                      },
                      x) <= 1e-4);
            ++cases;
        }
        // mean distances with operands kept away from the |.| kink
        {
            Tensor a = random_tensor({3, 4}, rng);
            Tensor b = a;
            for (double& v : b.data) v += 0.05 + 0.5 * uniform_unit(rng);
            CHECK(finite_diff_check(
                      [&](Tape& t, int aid) { return t.mean_abs_distance(aid, t.leaf(b)); },
                      a) <= 1e-4);
            CHECK(finite_diff_check(
                      [&](Tape& t, int aid) { return t.mean_sq_distance(aid, t.leaf(b)); },
                      a) <= 1e-4);
            cases += 2;
        }
        // concat + add + scale composition
        {
            const Tensor a = random_tensor({2, 3}, rng);
            const Tensor b = random_tensor({3, 3}, rng);
            CHECK(finite_diff_check(
                      [&](Tape& t, int aid) {
                          int cat = t.concat_rows(aid, t.leaf(b));
                          int doubled = t.add(cat, cat);
                          return t.softmax_cross_entropy(t.scale(doubled, 0.7), {0, 1, 2, 0, 1});
                      },
                      a) <= 1e-4);
            ++cases;
        }
    }
    CHECK(cases >= 100);
}
