#include <doctest.h>

#include <cmath>
#include <set>

#include "ithroat/tokendec.hpp"
#include "oracles.hpp"

using namespace ithroat;
using namespace ithroat::tokendec;
using synthdata::TokenDataset;

namespace {

// tiny 3-class dataset: constant-level tokens per class, trivially separable
TokenDataset toy_dataset(std::size_t per_class, std::uint64_t seed) {
    TokenDataset ds;
    ds.n = 1;
    ds.token_len = 36;
    ds.class_count = 3;
    Rng rng(seed);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            ds.labels.push_back(static_cast<std::uint16_t>(c));
            ds.group_ids.push_back(static_cast<std::uint32_t>(c * per_class + i));
            const double level = c == 0 ? -1.0 : (c == 1 ? 0.0 : 1.0);
            for (std::size_t k = 0; k < 36; ++k)
                ds.values.push_back(static_cast<float>(level + 0.05 * rng.normal(0.0, 1.0)));
        }
    return ds;
}

tinynet::ArchConfig toy_arch() {
    tinynet::ArchConfig c;
    c.input_len = 36;
    c.stem_width = 4;
    c.blocks = {{4, 1}, {8, 2}};
    c.classes = 3;
    c.role = "toy";
    return c;
}

tinynet::TrainConfig toy_train(std::uint64_t seed, std::size_t epochs = 12) {
    tinynet::TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.batch_size = 16;
    cfg.epochs = epochs;
    cfg.seed = seed;
    return cfg;
}

// always predicts class 0: zero weights, biased head
tinynet::Model blank_predictor() {
    auto model = tinynet::build_model(toy_arch(), 1);
    for (auto& [name, t] : model.tensors)
        for (auto& v : t.data) v = 0.0;
    model.tensor("head.b").data[0] = 1.0;
    return model;
}

}  // namespace

TEST_SUITE("tokendec") {

TEST_CASE("pretrain learns the toy task and reports per-epoch metrics") {
    auto ds = toy_dataset(40, 3);
    auto result = pretrain(ds, toy_arch(), toy_train(5));
    CHECK(result.best_val_accuracy >= 0.99);
    CHECK(result.log.size() == 12);
    for (const auto& e : result.log) CHECK(std::isfinite(e.train_loss));

    SUBCASE("same seed repeats the identical run") {
        auto again = pretrain(ds, toy_arch(), toy_train(5));
        CHECK(again.best_val_accuracy == result.best_val_accuracy);
        for (std::size_t i = 0; i < result.log.size(); ++i) {
            CHECK(again.log[i].train_loss == result.log[i].train_loss);
            CHECK(again.log[i].val_accuracy == result.log[i].val_accuracy);
        }
    }
    SUBCASE("empty datasets are rejected") {
        TokenDataset empty;
        empty.n = 1;
        empty.token_len = 36;
        empty.class_count = 3;
        try {
            pretrain(empty, toy_arch(), toy_train(1));
            FAIL("expected empty-input");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::empty_input);
        }
    }
}

TEST_CASE("split_dataset keeps utterance groups intact") {
    auto ds = toy_dataset(30, 9);
    // three samples per group
    for (std::size_t i = 0; i < ds.group_ids.size(); ++i)
        ds.group_ids[i] = static_cast<std::uint32_t>(i / 3);
    std::vector<std::size_t> train_idx, val_idx;
    split_dataset(ds, 0.1, 7, train_idx, val_idx);
    CHECK(train_idx.size() + val_idx.size() == ds.sample_count());
    std::set<std::uint32_t> train_groups, val_groups;
    for (auto i : train_idx) train_groups.insert(ds.group_ids[i]);
    for (auto i : val_idx) val_groups.insert(ds.group_ids[i]);
    for (auto g : val_groups) CHECK(train_groups.count(g) == 0);
}

TEST_CASE("evaluate produces a consistent confusion matrix") {
    auto ds = toy_dataset(30, 4);
    auto result = pretrain(ds, toy_arch(), toy_train(8));
    auto report = evaluate(result.model, ds);

    std::uint64_t trace = 0, total = 0;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t p = 0; p < 3; ++p) {
            total += report.confusion[t * 3 + p];
            if (t == p) trace += report.confusion[t * 3 + p];
        }
    CHECK(total == ds.sample_count());
    CHECK(report.token_accuracy ==
          doctest::Approx(static_cast<double>(trace) / total).epsilon(1e-12));
    CHECK(report.token_accuracy >= 0.95);

    SUBCASE("a perfect predictor gives an identity confusion at accuracy 1.0") {
        TokenDataset blanks;
        blanks.n = 1;
        blanks.token_len = 36;
        blanks.class_count = 3;
        for (int i = 0; i < 12; ++i) {
            blanks.labels.push_back(0);
            for (int k = 0; k < 36; ++k) blanks.values.push_back(0.0f);
        }
        auto perfect = evaluate(blank_predictor(), blanks);
        CHECK(perfect.token_accuracy == 1.0);
        CHECK(perfect.errors == 0);
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t p = 0; p < 3; ++p)
                if (t != p) CHECK(perfect.confusion[t * 3 + p] == 0);
    }
    SUBCASE("a majority-class predictor scores the class prior") {
        auto blank = blank_predictor();
        auto blank_report = evaluate(blank, ds);
        double prior = 0.0;
        for (auto l : ds.labels)
            if (l == 0) prior += 1.0;
        prior /= static_cast<double>(ds.sample_count());
        CHECK(blank_report.token_accuracy == doctest::Approx(prior).epsilon(1e-12));
        // all errors involve class 0 here
        CHECK(blank_report.blank_boundary_error_fraction == doctest::Approx(1.0));
    }
}

TEST_CASE("finetune with zero repetitions is the identity") {
    auto ds = toy_dataset(20, 5);
    auto base = tinynet::build_model(toy_arch(), 31);
    auto tuned = finetune(base, ds, 0, toy_train(1));
    for (std::size_t i = 0; i < base.tensors.size(); ++i)
        CHECK(tuned.tensors[i].second.data == base.tensors[i].second.data);
}

TEST_CASE("finetune demands enough repetitions per word") {
    auto ds = toy_dataset(4, 6);  // 4 utterances per class, classes 1..2 are "words"
    auto base = tinynet::build_model(toy_arch(), 2);
    try {
        finetune(base, ds, 10, toy_train(1));
        FAIL("expected insufficient-data");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::insufficient_data);
    }
}

TEST_CASE("distillation with alpha = 1 walks the plain training trajectory") {
    auto ds = toy_dataset(24, 12);
    auto teacher_result = pretrain(ds, toy_arch(), toy_train(3, 6));

    tinynet::ArchConfig student;
    student.input_len = 36;
    student.stem_width = 3;
    student.blocks = {{3, 1}, {6, 2}};
    student.classes = 3;
    student.role = "toystudent";

    auto cfg = toy_train(19, 4);
    cfg.distill = tinynet::DistillParams{4.0, 1.0};
    auto via_distill = distill(teacher_result.model, student, ds, cfg);

    // plain CE training over the same split/shuffles
    std::vector<std::size_t> train_idx, val_idx;
    split_dataset(ds, 0.10, cfg.seed, train_idx, val_idx);
    TokenDataset train_only;
    train_only.n = ds.n;
    train_only.token_len = ds.token_len;
    train_only.class_count = ds.class_count;
    // train_from_scratch runs over the whole set; replicate by passing the split subset
    for (auto i : train_idx) {
        train_only.labels.push_back(ds.labels[i]);
        for (std::size_t k = 0; k < ds.sample_len(); ++k)
            train_only.values.push_back(ds.sample(i)[k]);
    }
    auto plain = train_from_scratch(student, train_only, cfg);
    for (std::size_t i = 0; i < plain.tensors.size(); ++i)
        CHECK(plain.tensors[i].second.data == via_distill.student.tensors[i].second.data);

    SUBCASE("class-count mismatches are config errors") {
        auto wrong = student;
        wrong.classes = 5;
        try {
            distill(teacher_result.model, wrong, ds, cfg);
            FAIL("expected config-error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::config_error);
        }
    }
}

TEST_CASE("classify_stream is causal and consistent with batch argmax") {
    auto ds = toy_dataset(30, 14);
    auto result = pretrain(ds, toy_arch(), toy_train(4));

    std::vector<sigcore::Token> tokens(12);
    Rng rng(6);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        tokens[i].index = i;
        tokens[i].values.resize(36);
        const double level = static_cast<double>(rng.below(3)) - 1.0;
        for (auto& v : tokens[i].values) v = level + 0.05 * rng.normal(0.0, 1.0);
    }
    auto preds = classify_stream(result.model, tokens, 1);
    CHECK(preds.size() == tokens.size());

    SUBCASE("truncating the future never changes past predictions") {
        for (std::size_t cut = 1; cut < tokens.size(); ++cut) {
            std::vector<sigcore::Token> prefix(tokens.begin(),
                                               tokens.begin() + static_cast<std::ptrdiff_t>(cut));
            auto partial = classify_stream(result.model, prefix, 1);
            for (std::size_t i = 0; i < cut; ++i) CHECK(partial[i] == preds[i]);
        }
    }
    SUBCASE("all-zero tokens yield one constant prediction") {
        for (auto& t : tokens)
            std::fill(t.values.begin(), t.values.end(), 0.0);
        auto zero_preds = classify_stream(result.model, tokens, 1);
        for (int p : zero_preds) CHECK(p == zero_preds[0]);
    }
    SUBCASE("mismatched n is a shape error") {
        try {
            classify_stream(result.model, tokens, 2);
            FAIL("expected shape-error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::shape_error);
        }
    }
}

TEST_CASE("saliency weights form a distribution over token positions") {
    auto model = tinynet::build_model(toy_arch(), 44);
    sigcore::TokenSample sample;
    Rng rng(5);
    sample.tokens.resize(1);
    sample.tokens[0].values.resize(36);
    for (auto& v : sample.tokens[0].values) v = rng.normal(0.0, 1.0);
    auto weights = saliency(model, sample);
    REQUIRE(weights.size() == 1);
    CHECK(weights[0] == doctest::Approx(1.0).epsilon(1e-9));

    // multi-position sample against a wider model
    tinynet::ArchConfig wide = toy_arch();
    wide.input_len = 36 * 5;
    auto wide_model = tinynet::build_model(wide, 45);
    sigcore::TokenSample s5;
    s5.tokens.resize(5);
    for (auto& t : s5.tokens) {
        t.values.resize(36);
        for (auto& v : t.values) v = rng.normal(0.0, 1.0);
    }
    auto w5 = saliency(wide_model, s5);
    REQUIRE(w5.size() == 5);
    double sum = 0.0;
    for (double w : w5) {
        CHECK(w >= 0.0);
        sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("pca_features projects onto orthonormal components") {
    auto ds = toy_dataset(20, 21);
    auto result = pretrain(ds, toy_arch(), toy_train(2, 6));
    auto pca = pca_features(result.model, ds);
    REQUIRE(pca.coords.size() == 2 * ds.sample_count());

    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    CHECK(dot(pca.component1, pca.component1) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(dot(pca.component2, pca.component2) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(dot(pca.component1, pca.component2)) < 1e-9);
    CHECK(pca.variance1 >= pca.variance2);

    SUBCASE("identical samples collapse to one point") {
        TokenDataset flat;
        flat.n = 1;
        flat.token_len = 36;
        flat.class_count = 3;
        for (int i = 0; i < 5; ++i) {
            flat.labels.push_back(1);
            for (int k = 0; k < 36; ++k) flat.values.push_back(0.25f);
        }
        auto collapsed = pca_features(result.model, flat);
        for (std::size_t i = 0; i < collapsed.coords.size(); ++i)
            CHECK(collapsed.coords[i] == doctest::Approx(collapsed.coords[i % 2]).epsilon(1e-9));
    }
    SUBCASE("fewer than 3 samples is insufficient") {
        TokenDataset two;
        two.n = 1;
        two.token_len = 36;
        two.class_count = 3;
        for (int i = 0; i < 2; ++i) {
            two.labels.push_back(0);
            for (int k = 0; k < 36; ++k) two.values.push_back(0.0f);
        }
        try {
            pca_features(result.model, two);
            FAIL("expected insufficient-data");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::insufficient_data);
        }
    }
}

}  // TEST_SUITE
