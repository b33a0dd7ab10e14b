#include <cmath>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <numeric>

#include "doctest.h"

#include "../support/gradcheck.hpp"
#include "../support/messages.hpp"
#include "dub3d/checkpoint.hpp"
#include "dub3d/error.hpp"
#include "dub3d/nn.hpp"
#include "dub3d/ops.hpp"
#include "dub3d/optim.hpp"

using namespace dub3d;
using dub3d::testing::grad_check;
using dub3d::testing::random_tensor;

namespace fs = std::filesystem;

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

// 20 random draws per op; returns the worst relative error.
double worst_error(const std::vector<Shape>& shapes, const Fn& f, std::uint64_t seed, double lo = -1.0,
                   double hi = 1.0) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Tensor> xs;
        for (const auto& s : shapes) xs.push_back(random_tensor(s, rng, lo, hi));
        worst = std::max(worst, grad_check(f, xs, rng).rel_error);
    }
    return worst;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("dub3d_unit_" + name); }

}  // namespace

TEST_SUITE("tensor") {
    TEST_CASE("matmul by identity returns the other operand") {
        Rng rng(1);
        Tensor a = random_tensor({3, 3}, rng);
        Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        Tensor y = matmul(eye, a);
        for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == a.data()[i]);
    }

    TEST_CASE("softmax of equal logits is uniform") {
        Tensor y = softmax(Tensor::zeros({4}), 0);
        for (double v : y.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    }

    TEST_CASE("gelu gradient at fixed points matches finite differences") {
        Rng rng(2);
        Tensor x = Tensor::from_data({2}, {0.5, -1.2}, true);
        auto r = grad_check([](const std::vector<Tensor>& v) { return gelu(v[0]); }, {x}, rng);
        CHECK(r.rel_error < 1e-4);
    }

    TEST_CASE("every differentiable op passes the finite-difference check") {
        const double tol = 1e-4;
        CHECK(worst_error({{3, 4}, {4, 2}}, [](auto& v) { return matmul(v[0], v[1]); }, 10) < tol);
        CHECK(worst_error({{2, 3, 4}, {2, 4, 2}}, [](auto& v) { return matmul(v[0], v[1]); }, 11) < tol);
        CHECK(worst_error({{2, 3, 4}, {4, 5}}, [](auto& v) { return matmul(v[0], v[1]); }, 12) < tol);
        CHECK(worst_error({{2, 3}, {3}}, [](auto& v) { return add(v[0], v[1]); }, 13) < tol);
        CHECK(worst_error({{2, 1, 3}, {4, 1}}, [](auto& v) { return sub(v[0], v[1]); }, 14) < tol);
        CHECK(worst_error({{2, 3}, {2, 3}}, [](auto& v) { return mul(v[0], v[1]); }, 15) < tol);
        CHECK(worst_error({{3, 1}, {1, 4}}, [](auto& v) { return mul(v[0], v[1]); }, 16) < tol);
        CHECK(worst_error({{5}}, [](auto& v) { return scale(v[0], -2.5); }, 17) < tol);
        CHECK(worst_error({{3, 5}}, [](auto& v) { return softmax(v[0], -1); }, 18, -3, 3) < tol);
        CHECK(worst_error({{3, 5}}, [](auto& v) { return softmax(v[0], 0); }, 19, -3, 3) < tol);
        CHECK(worst_error({{4, 6}, {6}, {6}}, [](auto& v) { return layer_norm(v[0], v[1], v[2]); }, 20, -2, 2) < tol);
        CHECK(worst_error({{7}}, [](auto& v) { return gelu(v[0]); }, 21, -3, 3) < tol);
        CHECK(worst_error({{4, 3}},
                          [](auto& v) {
                              Rng r(5);
                              return dropout(v[0], 0.3, r, true);
                          },
                          22) < tol);
        CHECK(worst_error({{2, 6}}, [](auto& v) { return reshape(v[0], {3, -1}); }, 23) < tol);
        CHECK(worst_error({{2, 3, 4}}, [](auto& v) { return permute(v[0], {2, 0, 1}); }, 24) < tol);
        CHECK(worst_error({{2, 3, 4}}, [](auto& v) { return transpose(v[0], 0, 2); }, 25) < tol);
        CHECK(worst_error({{2, 3}, {2, 2}}, [](auto& v) { return concat({v[0], v[1]}, 1); }, 26) < tol);
        CHECK(worst_error({{2, 3, 4}}, [](auto& v) { return mean(v[0], 1); }, 27) < tol);
        CHECK(worst_error({{2, 3}}, [](auto& v) { return sum(v[0]); }, 28) < tol);
        CHECK(worst_error({{5, 2}}, [](auto& v) { return index_select(v[0], 0, {4, 0, 0, 2}); }, 29) < tol);
        CHECK(worst_error({{3, 6}}, [](auto& v) { return slice(v[0], 1, 2, 3); }, 30) < tol);
        CHECK(worst_error({{3, 5}}, [](auto& v) { return roll(v[0], 1, -2); }, 31) < tol);
        CHECK(worst_error({{3, 2}}, [](auto& v) { return pad_replicate(v[0], 0, 5); }, 32) < tol);
        CHECK(worst_error({{2, 3, 4}, {4, 5}, {5}}, [](auto& v) { return linear(v[0], v[1], v[2]); }, 33) < tol);
    }

    TEST_CASE("cross entropy values and gradient") {
        Tensor uniform = Tensor::from_data({1, 2}, {0.0, 0.0});
        const int one = 1, zero = 0;
        CHECK(cross_entropy(uniform, std::span<const int>(&one, 1)).item() == doctest::Approx(std::log(2.0)));
        Tensor confident = Tensor::from_data({1, 2}, {10.0, -10.0});
        const double expected = std::log1p(std::exp(-20.0));
        CHECK(cross_entropy(confident, std::span<const int>(&zero, 1)).item() ==
              doctest::Approx(expected).epsilon(1e-9));
        CHECK(expected == doctest::Approx(2.06e-9).epsilon(1e-3));

        const std::vector<int> labels{0, 1, 1};
        Rng rng(3);
        auto r = grad_check(
            [&](const std::vector<Tensor>& v) { return cross_entropy(v[0], labels); },
            {random_tensor({3, 2}, rng, -2, 2)}, rng);
        CHECK(r.rel_error < 1e-4);

        const std::vector<int> bad{2};
        CHECK_THROWS(cross_entropy(uniform, bad));
    }

    TEST_CASE("softmax rows are a distribution") {
        Rng rng(4);
        Tensor y = softmax(random_tensor({6, 9}, rng, -20, 20), -1);
        for (int r = 0; r < 6; ++r) {
            double s = 0.0;
            for (int c = 0; c < 9; ++c) {
                CHECK(y.at({r, c}) >= 0.0);
                s += y.at({r, c});
            }
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
    }

    TEST_CASE("layer norm standardises each slice") {
        Rng rng(5);
        Tensor x = random_tensor({8, 32}, rng, -5, 5);
        Tensor y = layer_norm(x, Tensor::full({32}, 1.0), Tensor::zeros({32}));
        for (int r = 0; r < 8; ++r) {
            double m = 0.0, v = 0.0;
            for (int c = 0; c < 32; ++c) m += y.at({r, c});
            m /= 32;
            for (int c = 0; c < 32; ++c) v += (y.at({r, c}) - m) * (y.at({r, c}) - m);
            v /= 32;
            CHECK(std::abs(m) < 1e-7);
            CHECK(std::abs(v - 1.0) < 1e-5);
        }
    }

    TEST_CASE("dropout identity at p=0 and reproducible mask") {
        Rng rng(6);
        Tensor x = random_tensor({50}, rng);
        Rng a(9), b(9);
        Tensor same = dropout(x, 0.0, a, true);
        for (int i = 0; i < 50; ++i) CHECK(same.data()[i] == x.data()[i]);
        Tensor m1 = dropout(x, 0.5, a, true);
        Tensor m2 = dropout(x, 0.5, b, true);
        for (int i = 0; i < 50; ++i) CHECK(m1.data()[i] == m2.data()[i]);
        Tensor eval = dropout(x, 0.5, a, false);
        for (int i = 0; i < 50; ++i) CHECK(eval.data()[i] == x.data()[i]);
    }

    TEST_CASE("shape mismatch names the op and both shapes") {
        Tensor a = Tensor::zeros({2, 3});
        Tensor b = Tensor::zeros({4, 5});
        try {
            (void)matmul(a, b);
            FAIL("expected a shape error");
        } catch (const std::invalid_argument& e) {
            const std::string msg = e.what();
            CHECK(msg.find("matmul") != std::string::npos);
            CHECK(msg.find("[2,3]") != std::string::npos);
            CHECK(msg.find("[4,5]") != std::string::npos);
        }
    }

    TEST_CASE("strict mode rejects NaN inputs") {
        Tensor x = Tensor::from_data({2}, {1.0, std::nan("")});
        CHECK_NOTHROW(gelu(x));
        set_strict_nan(true);
        CHECK_THROWS(gelu(x));
        set_strict_nan(false);
    }

    TEST_CASE("graph is freed after backward and leaf grads accumulate") {
        Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
        sum(mul(x, x)).backward();
        sum(mul(x, x)).backward();
        CHECK(x.grad()[0] == doctest::Approx(4.0));
        CHECK(x.grad()[1] == doctest::Approx(8.0));
    }

    TEST_CASE("no-grad guard records no graph") {
        Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
        NoGradGuard guard;
        Tensor y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
}

TEST_SUITE("optim") {
    TEST_CASE("zero grads and zero decay leave params unchanged") {
        Tensor p = Tensor::from_data({3}, {1.0, -2.0, 3.0}, true);
        p.grad_mut();
        OptimizerState st;
        st.slots.push_back(make_slot("p", p, 0.0));
        adamw_step(st, 0.1);
        CHECK(p.data()[0] == 1.0);
        CHECK(p.data()[1] == -2.0);
        CHECK(st.step == 1);
    }

    TEST_CASE("one scalar step moves by about lr") {
        Tensor p = Tensor::from_data({1}, {1.0}, true);
        p.grad_mut()[0] = 1.0;
        OptimizerState st;
        st.slots.push_back(make_slot("p", p, 0.0));
        adamw_step(st, 0.1);
        CHECK(p.item() == doctest::Approx(0.9).epsilon(1e-6));
    }

    TEST_CASE("skip-connection parameters decay at their own rate") {
        ParamStore store(1);
        store.add("a", {2}, Init::Ones);
        store.add("skip.norm", {2}, Init::Ones, DecayGroup::SkipConnection);
        for (auto& p : store.params()) p.value.grad_mut();
        OptimizerState st = make_optimizer_state(store.params(), 5e-4, 1e-2);
        CHECK(st.slots[0].weight_decay == 5e-4);
        CHECK(st.slots[1].weight_decay == 1e-2);
        adamw_step(st, 0.1);
        CHECK(store.params()[1].value.data()[0] == doctest::Approx(1.0 - 0.1 * 1e-2).epsilon(1e-15));
        CHECK(store.params()[0].value.data()[0] == doctest::Approx(1.0 - 0.1 * 5e-4).epsilon(1e-15));
    }

    TEST_CASE("missing grad and non-positive lr are rejected") {
        Tensor p = Tensor::from_data({1}, {1.0}, true);
        OptimizerState st;
        st.slots.push_back(make_slot("head.fc1.weight", p, 0.0));
        CHECK_THROWS_WITH_AS(adamw_step(st, 0.1), doctest::Contains("head.fc1.weight"), std::invalid_argument);
        p.grad_mut();
        CHECK_THROWS(adamw_step(st, 0.0));
    }

    TEST_CASE("learning-rate schedule") {
        CHECK(lr_schedule(0, 100, 1e-4) == 1e-4);
        CHECK(lr_schedule(10, 100, 1e-4) == doctest::Approx(9.25e-5).epsilon(1e-12));
        CHECK(lr_schedule(9, 100, 1e-4) == 1e-4);
        // ceil(0.1 * 35) = 4
        CHECK(lr_schedule(3, 35, 1.0) == 1.0);
        CHECK(lr_schedule(4, 35, 1.0) == doctest::Approx(0.925));
        // decay keeps going across epochs
        CHECK(lr_schedule(250, 100, 1.0) == doctest::Approx(std::pow(0.925, 25)));
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("round trip is bit exact in float32") {
        ParamStore store(7);
        store.add("w", {3, 5}, Init::TruncNormal);
        store.add("b", {5}, Init::Ones);
        const auto path = temp_file("ckpt_roundtrip.dub3d");
        save_checkpoint(path, {"ff_fi8", "abc", 42, {{"k", 1}}}, named_tensors(store.params()));
        Checkpoint ck = read_checkpoint(path);
        CHECK(ck.header.variant == "ff_fi8");
        CHECK(ck.header.step == 42);
        CHECK(ck.header.config_hash == "abc");
        REQUIRE(ck.tensors.size() == 2);
        const auto w = store.params()[0].value.data();
        const auto r = ck.tensors[0].tensor.data();
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(static_cast<float>(w[i]) == static_cast<float>(r[i]));

        ParamStore other(99);
        other.add("w", {3, 5}, Init::Zeros);
        other.add("b", {5}, Init::Zeros);
        load_checkpoint_into(ck, other.params(), "ff_fi8");
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK(other.params()[0].value.data()[i] == static_cast<double>(static_cast<float>(w[i])));
        }
        fs::remove(path);
    }

    TEST_CASE("variant mismatch names both variants") {
        const auto path = temp_file("ckpt_variant.dub3d");
        save_checkpoint(path, {"single_st", "", 0, {}}, {});
        Checkpoint ck = read_checkpoint(path);
        std::vector<Param> none;
        const auto msg = dub3d::testing::thrown_message([&] { load_checkpoint_into(ck, none, "ff_fi8"); });
        CHECK(dub3d::testing::contains(msg, "single_st"));
        CHECK(dub3d::testing::contains(msg, "ff_fi8"));
        fs::remove(path);
    }

    TEST_CASE("empty parameter set gives a header-only file") {
        const auto path = temp_file("ckpt_empty.dub3d");
        save_checkpoint(path, {"ff_fi1", "", 0, {}}, {});
        Checkpoint ck = read_checkpoint(path);
        CHECK(ck.tensors.empty());
        CHECK(ck.header.variant == "ff_fi1");
        fs::remove(path);
    }

    TEST_CASE("payload is 64-byte aligned") {
        const auto path = temp_file("ckpt_align.dub3d");
        save_checkpoint(path, {"x", "", 0, {}},
                        {{"a", Tensor::full({3}, 1.5)}, {"b", Tensor::full({2}, -2.0)}});
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto nl = bytes.find('\n');
        const std::size_t start = (nl + 1 + 63) / 64 * 64;
        float b0 = 0.0f;
        std::memcpy(&b0, bytes.data() + start + 64, sizeof(float));
        CHECK(b0 == -2.0f);
        fs::remove(path);
    }

    TEST_CASE("shape mismatch on load names the tensor") {
        const auto path = temp_file("ckpt_shape.dub3d");
        save_checkpoint(path, {"v", "", 0, {}}, {{"head.fc3.bias", Tensor::zeros({3})}});
        Checkpoint ck = read_checkpoint(path);
        ParamStore store(1);
        store.add("head.fc3.bias", {2}, Init::Zeros);
        CHECK_THROWS_WITH_AS(load_checkpoint_into(ck, store.params(), "v"), doctest::Contains("head.fc3.bias"),
                             DataError);
        fs::remove(path);
    }

    TEST_CASE("corrupt header is rejected") {
        const auto path = temp_file("ckpt_corrupt.dub3d");
        {
            std::ofstream out(path, std::ios::binary);
            out.write("DUB3D\0", 6);
            out << "{not json\n";
        }
        CHECK_THROWS_AS(read_checkpoint(path), DataError);
        {
            std::ofstream out(path, std::ios::binary);
            out << "NOTDUB";
        }
        CHECK_THROWS_AS(read_checkpoint(path), DataError);
        fs::remove(path);
    }
}
