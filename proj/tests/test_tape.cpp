#include <doctest.h>

#include <Eigen/Dense>

#include "test_util.hpp"
#include "tha/rng.hpp"
#include "tha/tape.hpp"

using namespace tha;
using Mat = Eigen::MatrixXd;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.gauss();
    }
    return m;
}

// Loss = sum(weight .* f(params...)) exercises the full Jacobian of f.
double check_op(const std::function<int(Tape&, std::vector<int>&)>& build,
                std::vector<Tensor*> params, const Mat& weight) {
    auto loss = [&]() {
        Tape t;
        std::vector<int> leaves;
        for (Tensor* p : params) leaves.push_back(t.leaf(*p));
        int out = build(t, leaves);
        return t.value(t.sum(t.hadamard(out, t.constant(weight))))(0, 0);
    };
    auto grads = [&]() {
        for (Tensor* p : params) p->zero_grad();
        Tape t;
        std::vector<int> leaves;
        for (Tensor* p : params) leaves.push_back(t.leaf(*p));
        int out = build(t, leaves);
        t.backward(t.sum(t.hadamard(out, t.constant(weight))));
    };
    return test::fd_max_rel_error(params, loss, grads, 1e-6);
}

}  // namespace

TEST_CASE("elementwise and matmul gradients match finite differences") {
    Rng rng(7);
    Tensor a("a", 4, 3);
    a.value = random_mat(rng, 4, 3);
    Tensor b("b", 4, 3);
    b.value = random_mat(rng, 4, 3);
    Tensor c("c", 3, 5);
    c.value = random_mat(rng, 3, 5);

    Mat w43 = random_mat(rng, 4, 3);
    Mat w45 = random_mat(rng, 4, 5);

    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.add(l[0], l[1]); }, {&a, &b}, w43) <
          1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.sub(l[0], l[1]); }, {&a, &b}, w43) <
          1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.hadamard(l[0], l[1]); }, {&a, &b},
                   w43) < 1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.matmul(l[0], l[1]); }, {&a, &c},
                   w45) < 1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.scale(l[0], -2.5); }, {&a}, w43) <
          1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.add_scalar(l[0], 0.7); }, {&a},
                   w43) < 1e-6);
}

TEST_CASE("activation gradients match finite differences") {
    Rng rng(8);
    Tensor a("a", 5, 4);
    a.value = random_mat(rng, 5, 4);
    Mat w = random_mat(rng, 5, 4);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.sigmoid(l[0]); }, {&a}, w) < 1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.tanh_(l[0]); }, {&a}, w) < 1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.relu(l[0]); }, {&a}, w) < 1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.abs_(l[0]); }, {&a}, w) < 1e-6);
}

TEST_CASE("softmax columns sum to one and gradients check out") {
    Rng rng(9);
    Tensor a("a", 6, 3);
    a.value = random_mat(rng, 6, 3, 2.0);
    Tape t;
    int s = t.softmax_cols(t.leaf(a));
    for (int c = 0; c < 3; ++c) {
        CHECK(t.value(s).col(c).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(t.value(s).col(c).minCoeff() > 0.0);
    }
    Mat w = random_mat(rng, 6, 3);
    CHECK(check_op([](Tape& tt, std::vector<int>& l) { return tt.softmax_cols(l[0]); }, {&a}, w) <
          1e-5);
}

TEST_CASE("layernorm normalizes each column and gradients check out") {
    Rng rng(10);
    Tensor a("a", 8, 3);
    a.value = random_mat(rng, 8, 3, 3.0);
    Tensor g("g", 8, 1);
    g.value = random_mat(rng, 8, 1).array() + 1.5;
    Tensor b("b", 8, 1);
    b.value = random_mat(rng, 8, 1);

    {
        Tensor ones("ones", 8, 1);
        ones.value.setOnes();
        Tensor zeros("zeros", 8, 1);
        Tape t;
        int y = t.layernorm_cols(t.leaf(a), t.leaf(ones), t.leaf(zeros));
        for (int c = 0; c < 3; ++c) {
            CHECK(t.value(y).col(c).mean() == doctest::Approx(0.0).epsilon(1e-10));
            double var = t.value(y).col(c).squaredNorm() / 8.0;
            CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
        }
    }

    Mat w = random_mat(rng, 8, 3);
    CHECK(check_op(
              [](Tape& t, std::vector<int>& l) { return t.layernorm_cols(l[0], l[1], l[2]); },
              {&a, &g, &b}, w) < 1e-5);
}

TEST_CASE("structure ops gradients match finite differences") {
    Rng rng(11);
    Tensor a("a", 3, 4);
    a.value = random_mat(rng, 3, 4);
    Tensor b("b", 2, 4);
    b.value = random_mat(rng, 2, 4);
    Tensor v("v", 3, 1);
    v.value = random_mat(rng, 3, 1);

    Mat w54 = random_mat(rng, 5, 4);
    Mat w24 = random_mat(rng, 2, 4);
    Mat w34 = random_mat(rng, 3, 4);
    Mat w43 = random_mat(rng, 4, 3);

    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.concat_rows({l[0], l[1]}); },
                   {&a, &b}, w54) < 1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.slice_rows(l[0], 1, 2); }, {&a},
                   w24) < 1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.add_colvec(l[0], l[1]); }, {&a, &v},
                   w34) < 1e-6);
    CHECK(check_op([](Tape& t, std::vector<int>& l) { return t.transpose(l[0]); }, {&a}, w43) <
          1e-6);
}

TEST_CASE("gradients accumulate across shared subexpressions") {
    Rng rng(12);
    Tensor a("a", 3, 3);
    a.value = random_mat(rng, 3, 3);
    Mat w = random_mat(rng, 3, 3);
    // f = a*a + a used twice; FD is the final authority.
    CHECK(check_op(
              [](Tape& t, std::vector<int>& l) { return t.add(t.matmul(l[0], l[0]), l[0]); }, {&a},
              w) < 1e-6);
}

TEST_CASE("detach blocks gradient flow") {
    Rng rng(13);
    Tensor a("a", 2, 2);
    a.value = random_mat(rng, 2, 2);
    a.zero_grad();
    Tape t;
    int leaf = t.leaf(a);
    int loss = t.sum(t.hadamard(t.detach(leaf), leaf));
    t.backward(loss);
    // d/da sum(const .* a) = const, not 2a.
    CHECK((a.grad - a.value).cwiseAbs().maxCoeff() < 1e-12);
}

namespace {

// Direct convolution: zero pad 1, 3x3 kernel, arbitrary stride.
Mat conv_oracle(const Mat& x, const Mat& w, const Mat& b, int cin, int h, int wid, int stride) {
    const int cout = static_cast<int>(w.rows());
    const int ho = (h - 1) / stride + 1;
    const int wo = (wid - 1) / stride + 1;
    Mat y = Mat::Zero(cout, static_cast<Eigen::Index>(ho) * wo);
    for (int oc = 0; oc < cout; ++oc) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = b(oc, 0);
                for (int ic = 0; ic < cin; ++ic) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            int iy = oy * stride + ky - 1;
                            int ix = ox * stride + kx - 1;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                            acc += w(oc, ic * 9 + ky * 3 + kx) * x(ic, iy * wid + ix);
                        }
                    }
                }
                y(oc, oy * wo + ox) = acc;
            }
        }
    }
    return y;
}

}  // namespace

TEST_CASE("conv3x3 matches the direct convolution oracle") {
    Rng rng(14);
    const int cin = 3;
    const int cout = 4;
    const int h = 5;
    const int wid = 6;
    Tensor x("x", cin, h * wid);
    x.value = random_mat(rng, cin, h * wid);
    Tensor w("w", cout, cin * 9);
    w.value = random_mat(rng, cout, cin * 9, 0.3);
    Tensor b("b", cout, 1);
    b.value = random_mat(rng, cout, 1, 0.3);

    for (int stride : {1, 2}) {
        Tape t;
        int y = t.conv3x3(t.leaf(x), t.leaf(w), t.leaf(b), cin, h, wid, stride);
        Mat oracle = conv_oracle(x.value, w.value, b.value, cin, h, wid, stride);
        REQUIRE(t.value(y).rows() == oracle.rows());
        REQUIRE(t.value(y).cols() == oracle.cols());
        CHECK((t.value(y) - oracle).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("conv3x3 gradients match finite differences") {
    Rng rng(15);
    const int cin = 2;
    const int cout = 3;
    const int h = 4;
    const int wid = 4;
    Tensor x("x", cin, h * wid);
    x.value = random_mat(rng, cin, h * wid);
    Tensor w("w", cout, cin * 9);
    w.value = random_mat(rng, cout, cin * 9, 0.5);
    Tensor b("b", cout, 1);
    b.value = random_mat(rng, cout, 1, 0.5);
    for (int stride : {1, 2}) {
        const int ho = (h - 1) / stride + 1;
        Mat wt = random_mat(rng, cout, static_cast<Eigen::Index>(ho) * ho);
        CHECK(check_op(
                  [&](Tape& t, std::vector<int>& l) {
                      return t.conv3x3(l[0], l[1], l[2], cin, h, wid, stride);
                  },
                  {&x, &w, &b}, wt) < 1e-6);
    }
}

TEST_CASE("upsample2 repeats pixels and backpropagates by summing") {
    Rng rng(16);
    Tensor x("x", 2, 6);  // 2 channels, 2x3
    x.value = random_mat(rng, 2, 6);
    Tape t;
    int y = t.upsample2(t.leaf(x), 2, 3);
    REQUIRE(t.value(y).cols() == 24);
    CHECK(t.value(y)(0, 0) == x.value(0, 0));
    CHECK(t.value(y)(0, 1) == x.value(0, 0));
    CHECK(t.value(y)(0, 6) == x.value(0, 0));
    CHECK(t.value(y)(1, 7) == x.value(1, 0));
    CHECK(t.value(y)(0, 23) == x.value(0, 5));

    Mat w = random_mat(rng, 2, 24);
    CHECK(check_op([](Tape& tt, std::vector<int>& l) { return tt.upsample2(l[0], 2, 3); }, {&x},
                   w) < 1e-6);
}

TEST_CASE("backward requires a scalar loss") {
    Tensor a("a", 2, 2);
    Tape t;
    int leaf = t.leaf(a);
    CHECK_THROWS_AS(t.backward(leaf), std::logic_error);
}
