#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ithroat/tinynet.hpp"
#include "oracles.hpp"

using namespace ithroat;
using namespace ithroat::tinynet;

namespace {

ArchConfig tiny_arch(std::size_t input_len = 72, std::size_t classes = 4) {
    ArchConfig c;
    c.input_len = input_len;
    c.stem_width = 6;
    c.blocks = {{6, 1}, {10, 2}};
    c.classes = classes;
    c.role = "tiny";
    return c;
}

Batch random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Batch b;
    b.rows = rows;
    b.cols = cols;
    b.x.resize(rows * cols);
    Rng rng(seed);
    for (auto& v : b.x) v = rng.normal(0.0, 1.0);
    return b;
}

std::vector<int> random_labels(std::size_t rows, std::size_t classes, std::uint64_t seed) {
    std::vector<int> labels(rows);
    Rng rng(seed);
    for (auto& l : labels) l = static_cast<int>(rng.below(classes));
    return labels;
}

}  // namespace

TEST_SUITE("tinynet") {

TEST_CASE("build_model is deterministic and validates its config") {
    auto a = build_model(tiny_arch(), 5);
    auto b = build_model(tiny_arch(), 5);
    REQUIRE(a.tensors.size() == b.tensors.size());
    for (std::size_t i = 0; i < a.tensors.size(); ++i)
        CHECK(a.tensors[i].second.data == b.tensors[i].second.data);

    auto bad = tiny_arch();
    bad.blocks.clear();
    try {
        build_model(bad, 1);
        FAIL("expected config-error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::config_error);
    }
}

TEST_CASE("reference student is smaller than the reference teacher") {
    const std::size_t input_len = 540, classes = 21;
    CHECK(count_params(student_arch(input_len, classes)) <
          count_params(teacher_arch(input_len, classes)));
    const double ratio =
        static_cast<double>(count_flops(student_arch(input_len, classes))) /
        static_cast<double>(count_flops(teacher_arch(input_len, classes)));
    CHECK(ratio <= 0.30);
}

TEST_CASE("conv layers match the naive oracle over shapes and strides") {
    Rng rng(17);
    for (int trial = 0; trial < 40; ++trial) {
        ArchConfig arch;
        arch.input_len = 8 + rng.below(50);
        arch.stem_width = 1 + rng.below(6);
        arch.classes = 2 + rng.below(4);
        arch.role = "probe";
        const std::size_t blocks = 1 + rng.below(3);
        for (std::size_t i = 0; i < blocks; ++i)
            arch.blocks.push_back({1 + rng.below(8), 1 + rng.below(2)});
        if (count_flops(arch) == 0) continue;  // validates shape chain

        auto model = build_model(arch, 100 + trial);
        auto batch = random_batch(3, arch.input_len, 200 + trial);

        // replicate the forward pass with the naive conv: stem -> blocks -> GAP -> dense
        std::vector<double> cur = batch.x;
        std::size_t cin = 1, lin = arch.input_len;
        auto relu = [](std::vector<double>& v) {
            for (auto& x : v) x = x > 0.0 ? x : 0.0;
        };
        auto run_conv = [&](const Tensor& w, const Tensor& bias, std::size_t stride,
                            std::size_t pad, std::vector<double>& out, std::size_t& lout) {
            const std::size_t cout = w.shape[0];
            const std::size_t k = w.shape[2];
            lout = (lin + 2 * pad - k) / stride + 1;
            oracles::naive_conv(cur, 3, cin, lin, w.data, bias.data, cout, k, stride, pad, out,
                                lout);
        };
        {
            std::vector<double> out;
            std::size_t lout;
            run_conv(model.tensor("stem.w"), model.tensor("stem.b"), 1, 3, out, lout);
            relu(out);
            cur = out;
            cin = arch.stem_width;
            lin = lout;
        }
        for (std::size_t i = 0; i < arch.blocks.size(); ++i) {
            const auto prefix = "block" + std::to_string(i);
            const auto& spec = arch.blocks[i];
            std::vector<double> c1, c2, sc;
            std::size_t l1, l2, lsc;
            auto saved_cin = cin;
            auto saved_lin = lin;
            run_conv(model.tensor(prefix + ".conv1.w"), model.tensor(prefix + ".conv1.b"),
                     spec.stride, 1, c1, l1);
            relu(c1);
            std::vector<double> keep = cur;
            cur = c1;
            cin = spec.width;
            lin = l1;
            run_conv(model.tensor(prefix + ".conv2.w"), model.tensor(prefix + ".conv2.b"), 1, 1,
                     c2, l2);
            const bool has_proj = spec.stride != 1 || spec.width != saved_cin;
            if (has_proj) {
                cur = keep;
                cin = saved_cin;
                lin = saved_lin;
                run_conv(model.tensor(prefix + ".proj.w"), model.tensor(prefix + ".proj.b"),
                         spec.stride, 0, sc, lsc);
            } else {
                sc = keep;
            }
            for (std::size_t j = 0; j < c2.size(); ++j)
                c2[j] = (c2[j] + sc[j]) * 0.70710678118654752440;
            relu(c2);
            cur = c2;
            cin = spec.width;
            lin = l2;
        }
        std::vector<double> expect(3 * arch.classes, 0.0);
        const auto& hw = model.tensor("head.w");
        const auto& hb = model.tensor("head.b");
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t k = 0; k < arch.classes; ++k) {
                double acc = hb.data[k];
                for (std::size_t c = 0; c < cin; ++c) {
                    double mean = 0.0;
                    for (std::size_t l = 0; l < lin; ++l) mean += cur[(b * cin + c) * lin + l];
                    acc += hw.data[k * cin + c] * mean / static_cast<double>(lin);
                }
                expect[b * arch.classes + k] = acc;
            }

        auto logits = forward(model, batch);
        REQUIRE(logits.size() == expect.size());
        for (std::size_t i = 0; i < logits.size(); ++i)
            CHECK(logits[i] == doctest::Approx(expect[i]).epsilon(1e-10));
    }
}

TEST_CASE("forward is batch-independent and permutation-consistent") {
    auto model = build_model(tiny_arch(), 9);
    auto batch = random_batch(9, 72, 31);  // crosses the micro-batch boundary
    auto logits = forward(model, batch);
    for (std::size_t row = 0; row < batch.rows; ++row) {
        Batch one;
        one.rows = 1;
        one.cols = 72;
        one.x.assign(batch.x.begin() + static_cast<std::ptrdiff_t>(row * 72),
                     batch.x.begin() + static_cast<std::ptrdiff_t>((row + 1) * 72));
        auto single = forward(model, one);
        for (std::size_t k = 0; k < 4; ++k) CHECK(single[k] == logits[row * 4 + k]);
    }

    Batch zeros;
    zeros.rows = 3;
    zeros.cols = 72;
    zeros.x.assign(3 * 72, 0.0);
    auto zl = forward(model, zeros);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(zl[k] == zl[4 + k]);
        CHECK(zl[k] == zl[8 + k]);
    }
}

TEST_CASE("adding a constant to a head bias shifts only that logit") {
    auto model = build_model(tiny_arch(), 13);
    auto batch = random_batch(2, 72, 77);
    auto before = forward(model, batch);
    model.tensor("head.b").data[2] += 0.75;
    auto after = forward(model, batch);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t k = 0; k < 4; ++k) {
            const double delta = after[b * 4 + k] - before[b * 4 + k];
            CHECK(delta == doctest::Approx(k == 2 ? 0.75 : 0.0).epsilon(1e-12));
        }
}

TEST_CASE("cross-entropy loss and gradient") {
    SUBCASE("uniform logits cost ln C") {
        std::vector<double> logits(2 * 5, 0.3);
        auto lg = loss_ce(logits, 2, 5, {1, 4});
        CHECK(lg.loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    }
    SUBCASE("a confident correct logit drives the loss to zero") {
        std::vector<double> logits{30.0, 0.0, 0.0};
        auto lg = loss_ce(logits, 1, 3, {0});
        CHECK(lg.loss < 1e-9);
    }
    SUBCASE("gradient matches central finite differences") {
        Rng rng(3);
        std::vector<double> logits(3 * 6);
        for (auto& v : logits) v = rng.normal(0.0, 2.0);
        std::vector<int> labels{2, 0, 5};
        auto lg = loss_ce(logits, 3, 6, labels);
        const double eps = 1e-6;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            auto plus = logits, minus = logits;
            plus[i] += eps;
            minus[i] -= eps;
            const double numeric =
                (loss_ce(plus, 3, 6, labels).loss - loss_ce(minus, 3, 6, labels).loss) /
                (2 * eps);
            CHECK(std::abs(lg.grad[i] - numeric) /
                      std::max(1e-4, std::abs(lg.grad[i]) + std::abs(numeric)) <
                  1e-4);
        }
    }
    SUBCASE("labels out of range are rejected") {
        std::vector<double> logits(4, 0.0);
        try {
            loss_ce(logits, 1, 4, {7});
            FAIL("expected invalid-label");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::invalid_label);
        }
    }
}

TEST_CASE("distillation loss") {
    Rng rng(5);
    std::vector<double> s(2 * 5), t(2 * 5);
    for (auto& v : s) v = rng.normal(0.0, 1.5);
    for (auto& v : t) v = rng.normal(0.0, 1.5);
    std::vector<int> labels{1, 3};

    SUBCASE("alpha = 1 reduces exactly to cross-entropy") {
        auto d = loss_distill(s, t, 2, 5, labels, 4.0, 1.0);
        auto c = loss_ce(s, 2, 5, labels);
        CHECK(d.loss == c.loss);
        CHECK(d.grad == c.grad);
    }
    SUBCASE("matching teacher and student zero the KL term") {
        auto d = loss_distill(s, s, 2, 5, labels, 4.0, 0.3);
        auto c = loss_ce(s, 2, 5, labels);
        CHECK(d.loss == doctest::Approx(0.3 * c.loss).epsilon(1e-12));
    }
    SUBCASE("gradient matches central finite differences at T = 4") {
        auto lg = loss_distill(s, t, 2, 5, labels, 4.0, 0.3);
        const double eps = 1e-6;
        for (std::size_t i = 0; i < s.size(); ++i) {
            auto plus = s, minus = s;
            plus[i] += eps;
            minus[i] -= eps;
            const double numeric = (loss_distill(plus, t, 2, 5, labels, 4.0, 0.3).loss -
                                    loss_distill(minus, t, 2, 5, labels, 4.0, 0.3).loss) /
                                   (2 * eps);
            CHECK(std::abs(lg.grad[i] - numeric) /
                      std::max(1e-4, std::abs(lg.grad[i]) + std::abs(numeric)) <
                  1e-4);
        }
    }
    SUBCASE("temperature must be positive") {
        try {
            loss_distill(s, t, 2, 5, labels, 0.0, 0.5);
            FAIL("expected invalid-argument");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::invalid_argument);
        }
    }
}

TEST_CASE("softmax/CE/KL are invariant to constant logit shifts") {
    Rng rng(7);
    std::vector<double> logits(2 * 4);
    for (auto& v : logits) v = rng.normal(0.0, 1.0);
    std::vector<int> labels{0, 3};
    auto soft = softmax(logits, 2, 4);
    for (std::size_t b = 0; b < 2; ++b) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 4; ++k) sum += soft[b * 4 + k];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    auto shifted = logits;
    for (auto& v : shifted) v += 13.5;
    auto soft2 = softmax(shifted, 2, 4);
    for (std::size_t i = 0; i < soft.size(); ++i)
        CHECK(soft[i] == doctest::Approx(soft2[i]).epsilon(1e-9));
    CHECK(loss_ce(logits, 2, 4, labels).loss ==
          doctest::Approx(loss_ce(shifted, 2, 4, labels).loss).epsilon(1e-9));
    CHECK(loss_distill(logits, logits, 2, 4, labels, 3.0, 0.4).loss ==
          doctest::Approx(loss_distill(shifted, shifted, 2, 4, labels, 3.0, 0.4).loss)
              .epsilon(1e-9));
}

TEST_CASE("train_step honours lr = 0, reproduces itself, and overfits one batch") {
    auto arch = tiny_arch(72, 4);
    auto batch = random_batch(8, 72, 55);
    auto labels = random_labels(8, 4, 56);

    SUBCASE("lr = 0 leaves parameters untouched") {
        auto model = build_model(arch, 1);
        auto before = model;
        TrainConfig cfg;
        cfg.lr = 0.0;
        auto state = make_adam_state(model);
        train_step(model, batch, labels, cfg, state);
        for (std::size_t i = 0; i < model.tensors.size(); ++i)
            CHECK(model.tensors[i].second.data == before.tensors[i].second.data);
    }
    SUBCASE("200 steps on one batch drive CE below 0.01") {
        auto model = build_model(arch, 1);
        TrainConfig cfg;
        cfg.lr = 3e-3;
        auto state = make_adam_state(model);
        double loss = 1e9;
        for (int i = 0; i < 200; ++i) loss = train_step(model, batch, labels, cfg, state);
        CHECK(loss < 0.01);
    }
    SUBCASE("identical seeds give identical trajectories") {
        TrainConfig cfg;
        cfg.lr = 1e-3;
        auto m1 = build_model(arch, 2);
        auto m2 = build_model(arch, 2);
        auto s1 = make_adam_state(m1);
        auto s2 = make_adam_state(m2);
        for (int i = 0; i < 5; ++i) {
            const double l1 = train_step(m1, batch, labels, cfg, s1);
            const double l2 = train_step(m2, batch, labels, cfg, s2);
            CHECK(l1 == l2);
        }
        for (std::size_t i = 0; i < m1.tensors.size(); ++i)
            CHECK(m1.tensors[i].second.data == m2.tensors[i].second.data);
    }
}

TEST_CASE("grad_check stays under 1e-4 on a small conv net") {
    auto model = build_model(tiny_arch(48, 3), 21);
    auto batch = random_batch(4, 48, 91);
    auto labels = random_labels(4, 3, 92);
    const double err = grad_check(model, batch, labels, 1e-4, 60, 7);
    CHECK(err < 1e-4);
    // stability under a different epsilon
    const double err2 = grad_check(model, batch, labels, 2e-4, 60, 7);
    CHECK(err2 < 1e-4);
    try {
        grad_check(model, batch, labels, 0.5, 10, 1);
        FAIL("expected invalid-argument");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::invalid_argument);
    }
}

TEST_CASE("a linear model passes the finite-difference check to 1e-7") {
    MlpConfig cfg;
    cfg.input = 12;
    cfg.hidden = {};
    cfg.classes = 3;
    auto mlp = build_mlp(cfg, 3);
    Batch batch = random_batch(4, 12, 44);
    auto labels = random_labels(4, 3, 45);
    auto analytic = mlp_backprop(mlp, batch, labels, false);
    const double eps = 1e-5;
    double max_rel = 0.0;
    for (std::size_t ti = 0; ti < mlp.tensors.size(); ++ti) {
        for (std::size_t e = 0; e < mlp.tensors[ti].second.size(); ++e) {
            double& w = mlp.tensors[ti].second.data[e];
            const double old = w;
            w = old + eps;
            const double lp =
                loss_ce(mlp_forward(mlp, batch), 4, 3, labels).loss;
            w = old - eps;
            const double lm =
                loss_ce(mlp_forward(mlp, batch), 4, 3, labels).loss;
            w = old;
            const double numeric = (lp - lm) / (2 * eps);
            const double a = analytic.grads[ti].data[e];
            max_rel = std::max(max_rel,
                               std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6));
        }
    }
    CHECK(max_rel < 1e-7);
}

TEST_CASE("mlp with a hidden layer passes the finite-difference check") {
    MlpConfig cfg;
    cfg.input = 10;
    cfg.hidden = {8};
    cfg.classes = 3;
    auto mlp = build_mlp(cfg, 9);
    Batch batch = random_batch(5, 10, 64);
    for (auto& v : batch.x)
        if (std::abs(v) < 1e-3) v = 1e-3;
    auto labels = random_labels(5, 3, 65);
    auto analytic = mlp_backprop(mlp, batch, labels, false);
    const double eps = 1e-5;
    for (std::size_t ti = 0; ti < mlp.tensors.size(); ++ti)
        for (std::size_t e = 0; e < mlp.tensors[ti].second.size(); ++e) {
            double& w = mlp.tensors[ti].second.data[e];
            const double old = w;
            w = old + eps;
            const double lp = loss_ce(mlp_forward(mlp, batch), 5, 3, labels).loss;
            w = old - eps;
            const double lm = loss_ce(mlp_forward(mlp, batch), 5, 3, labels).loss;
            w = old;
            const double numeric = (lp - lm) / (2 * eps);
            const double a = analytic.grads[ti].data[e];
            CHECK(std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6) <
                  1e-4);
        }
}

TEST_CASE("count_flops follows the stated accounting") {
    CHECK(conv_flops(1, 4, 3, 10) == 240);

    auto arch = tiny_arch(100, 5);
    auto doubled = arch;
    doubled.stem_width *= 2;
    for (auto& b : doubled.blocks) b.width *= 2;
    const double ratio = static_cast<double>(count_flops(doubled)) -
                         2.0 * doubled.stem_width * 7 * 100 -  // stem is cin=1, scales linearly
                         2.0 * doubled.blocks.back().width * 5;
    const double base = static_cast<double>(count_flops(arch)) -
                        2.0 * arch.stem_width * 7 * 100 - 2.0 * arch.blocks.back().width * 5;
    CHECK(ratio / base == doctest::Approx(4.0).epsilon(0.01));

    // additive over blocks: removing a block removes exactly its cost
    auto shorter = arch;
    shorter.blocks.pop_back();
    CHECK(count_flops(arch) > count_flops(shorter));

    // strictly monotone in width
    auto wider = arch;
    wider.blocks[0].width += 1;
    CHECK(count_flops(wider) > count_flops(arch));
}

TEST_CASE("checkpoints round-trip and reject mismatches") {
    auto dir = std::filesystem::temp_directory_path() / "ithroat_tinynet_test";
    std::filesystem::create_directories(dir);
    auto path = dir / "model.itnn";

    auto model = build_model(tiny_arch(), 77);
    save_checkpoint(path, model);
    auto m1 = load_checkpoint(path);
    CHECK(m1.config == model.config);

    // loaded models are float32-quantized fixed points: saving again is identical
    auto path2 = dir / "model2.itnn";
    save_checkpoint(path2, m1);
    CHECK(read_file(path) == read_file(path2));
    auto m2 = load_checkpoint(path2);
    auto batch = random_batch(3, 72, 5);
    CHECK(forward(m1, batch) == forward(m2, batch));

    SUBCASE("truncated files are corrupt") {
        auto bytes = read_file(path);
        bytes.resize(bytes.size() - 11);
        write_file(path2, bytes);
        try {
            load_checkpoint(path2);
            FAIL("expected corrupt-file");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::corrupt_file);
        }
    }
    SUBCASE("a teacher checkpoint refuses to load as the student config") {
        auto teacher = build_model(teacher_arch(108, 5), 1);
        save_checkpoint(path2, teacher);
        try {
            load_checkpoint_as(path2, student_arch(108, 5));
            FAIL("expected config-error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::config_error);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("input_gradient is finite and nonzero for a random model") {
    auto model = build_model(tiny_arch(), 15);
    Rng rng(8);
    std::vector<double> row(72);
    for (auto& v : row) v = rng.normal(0.0, 1.0);
    auto g = input_gradient(model, row);
    REQUIRE(g.size() == row.size());
    double total = 0.0;
    for (double v : g) {
        CHECK(v >= 0.0);
        CHECK(std::isfinite(v));
        total += v;
    }
    CHECK(total > 0.0);
}

}  // TEST_SUITE
