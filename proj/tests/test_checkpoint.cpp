#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tha/checkpoint.hpp"
#include "tha/errors.hpp"
#include "test_util.hpp"

using namespace tha;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(-3.0, 3.0);
    return m;
}

}  // namespace

TEST_CASE("put, get and overwrite by name") {
    Rng rng(51);
    Checkpoint ckpt;
    const Eigen::MatrixXd a = random_matrix(rng, 3, 4);
    ckpt.put("x/w", a);
    CHECK(ckpt.has("x/w"));
    CHECK_FALSE(ckpt.has("x/b"));
    CHECK((ckpt.get("x/w") - a).cwiseAbs().maxCoeff() == 0.0);

    const Eigen::MatrixXd b = random_matrix(rng, 3, 4);
    ckpt.put("x/w", b);
    CHECK(ckpt.arrays.size() == 1);
    CHECK((ckpt.get("x/w") - b).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(ckpt.get("missing"), ParseError);
    CHECK_THROWS_AS(ckpt.put("bad name", a), ValidationError);
}

TEST_CASE("save, load and byte-identical re-save") {
    Rng rng(52);
    Checkpoint ckpt;
    ckpt.manifest = {{"kind", "content"}, {"step", 42L}, {"best_val", 0.125},
                     {"corpus_fingerprint", "abc123"}};
    ckpt.put("layer0/w", random_matrix(rng, 7, 5));
    ckpt.put("layer0/b", random_matrix(rng, 7, 1));
    ckpt.put("adam/m1/layer0/w", random_matrix(rng, 7, 5));

    const std::string p1 = "/tmp/tha_ckpt_a.bin";
    const std::string p2 = "/tmp/tha_ckpt_b.bin";
    save_checkpoint(p1, ckpt);
    const Checkpoint loaded = load_checkpoint(p1);
    CHECK(loaded.manifest == ckpt.manifest);
    REQUIRE(loaded.arrays.size() == ckpt.arrays.size());
    for (std::size_t i = 0; i < ckpt.arrays.size(); ++i) {
        CHECK(loaded.arrays[i].first == ckpt.arrays[i].first);
        CHECK((loaded.arrays[i].second - ckpt.arrays[i].second).cwiseAbs().maxCoeff() == 0.0);
    }
    save_checkpoint(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("corrupt or missing files are rejected with context") {
    CHECK_THROWS_AS(load_checkpoint("/tmp/tha_no_such_ckpt.bin"), IoError);
    const std::string path = "/tmp/tha_ckpt_bad.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "nope 1 0\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    std::remove(path.c_str());
}

TEST_CASE("parameter groups round-trip through tensors") {
    Rng rng(53);
    Tensor w("g/w", 4, 6);
    Tensor b("g/b", 4, 1);
    w.value = random_matrix(rng, 4, 6);
    b.value = random_matrix(rng, 4, 1);

    Checkpoint ckpt;
    store_params(ckpt, {&w, &b});

    Tensor w2("g/w", 4, 6);
    Tensor b2("g/b", 4, 1);
    load_params(ckpt, {&w2, &b2});
    CHECK((w2.value - w.value).cwiseAbs().maxCoeff() == 0.0);
    CHECK((b2.value - b.value).cwiseAbs().maxCoeff() == 0.0);

    Tensor wrong("g/w", 4, 7);
    CHECK_THROWS_AS(load_params(ckpt, {&wrong}), ParseError);
    Tensor unknown("g/unknown", 4, 6);
    CHECK_THROWS_AS(load_params(ckpt, {&unknown}), ParseError);
}

TEST_CASE("optimizer state restores to a bit-identical trajectory") {
    Rng rng(54);
    auto make = [&](std::uint64_t seed) {
        Rng r(seed);
        Tensor t("p", 3, 3);
        t.value = random_matrix(r, 3, 3);
        return t;
    };
    auto fake_grad = [](Tensor& t, int step) {
        t.grad = Eigen::MatrixXd::Constant(3, 3, 0.1 * (step + 1));
        t.grad(0, 0) = -0.2 * (step + 1);
    };

    AdamConfig acfg;
    acfg.lr = 1e-2;

    Tensor a = make(99);
    Adam opt_a({&a}, acfg);
    for (int step = 0; step < 3; ++step) {
        fake_grad(a, step);
        opt_a.step();
    }
    Checkpoint ckpt;
    store_params(ckpt, {&a});
    store_adam(ckpt, opt_a, "adam");

    Tensor b("p", 3, 3);
    Adam opt_b({&b}, acfg);
    load_params(ckpt, {&b});
    restore_adam(ckpt, opt_b, "adam");
    CHECK(opt_b.step_count() == 3);

    for (int step = 3; step < 6; ++step) {
        fake_grad(a, step);
        opt_a.step();
        fake_grad(b, step);
        opt_b.step();
    }
    CHECK((a.value - b.value).cwiseAbs().maxCoeff() == 0.0);

    Checkpoint empty;
    Adam opt_c({&b}, acfg);
    CHECK_THROWS_AS(restore_adam(empty, opt_c, "adam"), ParseError);
}
