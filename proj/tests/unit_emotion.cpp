#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ithroat/emotion.hpp"
#include "ithroat/synthdata.hpp"
#include "oracles.hpp"

using namespace ithroat;
using namespace ithroat::emotion;
using sigcore::Emotion;

namespace {

PulseWindow window_of(std::vector<double> values, std::optional<Emotion> label = {}) {
    PulseWindow w;
    w.values = std::move(values);
    w.emotion_label = label;
    return w;
}

// toy windows: class-specific carrier frequency, random phase, slight noise
std::vector<PulseWindow> toy_windows(std::size_t per_class, std::uint64_t seed) {
    std::vector<PulseWindow> windows;
    Rng rng(seed);
    const double freqs[3] = {1.0, 2.5, 5.0};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            std::vector<double> v(kWindowSamples);
            const double phase = rng.uniform(0.0, 2 * M_PI);
            for (std::size_t k = 0; k < v.size(); ++k)
                v[k] = std::sin(2 * M_PI * freqs[c] * k / kWorkingRateHz + phase) +
                       0.01 * rng.normal(0.0, 1.0);
            windows.push_back(window_of(std::move(v), static_cast<Emotion>(c)));
        }
    return windows;
}

EmotionModel scores_stub(std::array<double, 3> bias) {
    EmotionModel m;
    m.kind = ModelKind::lda;
    m.uses_dft = true;
    m.lda.dim = kSpectrumBins;
    m.lda.weights.assign(3 * kSpectrumBins, 0.0);
    m.lda.bias = {bias[0], bias[1], bias[2]};
    return m;
}

}  // namespace

TEST_SUITE("emotion") {

TEST_CASE("fft agrees with the direct DFT oracle") {
    SUBCASE("unit impulse spreads flat") {
        std::vector<double> x{1.0};
        auto bins = fft(x, 8);
        for (const auto& c : bins) {
            CHECK(c.real() == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(c.imag() == doctest::Approx(0.0).epsilon(1e-12));
        }
    }
    SUBCASE("a 1.171875 Hz sine at 50 Hz peaks at bin 6") {
        std::vector<double> x(256);
        for (std::size_t t = 0; t < x.size(); ++t)
            x[t] = std::sin(2 * M_PI * 1.171875 * t / 50.0);
        auto fast = fft(x, 256);
        auto slow = oracles::direct_dft(x, 256);
        std::size_t best = 0;
        for (std::size_t k = 1; k < 128; ++k)
            if (std::abs(fast[k]) > std::abs(fast[best])) best = k;
        CHECK(best == 6);
        for (std::size_t k = 0; k < 256; ++k)
            CHECK(std::abs(fast[k] - slow[k]) < 1e-9);
    }
    SUBCASE("random vectors match to 1e-9 up to N = 1024") {
        Rng rng(13);
        for (std::size_t nfft : {8u, 64u, 256u, 1024u}) {
            std::vector<double> x(nfft - rng.below(nfft / 2));
            for (auto& v : x) v = rng.normal(0.0, 1.0);
            auto fast = fft(x, nfft);
            auto slow = oracles::direct_dft(x, nfft);
            double err = 0.0;
            for (std::size_t k = 0; k < nfft; ++k)
                err = std::max(err, std::abs(fast[k] - slow[k]));
            CHECK(err < 1e-9);
        }
    }
    SUBCASE("Parseval holds with zero padding") {
        Rng rng(14);
        std::vector<double> x(100);
        for (auto& v : x) v = rng.normal(0.0, 1.0);
        auto bins = fft(x, 256);
        double time_e = 0.0, freq_e = 0.0;
        for (double v : x) time_e += v * v;
        for (const auto& c : bins) freq_e += std::norm(c);
        CHECK(std::abs(time_e - freq_e / 256.0) < 1e-9);
    }
    SUBCASE("non-power-of-two lengths are rejected") {
        try {
            fft({1, 2, 3}, 12);
            FAIL("expected invalid-argument");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::invalid_argument);
        }
    }
}

TEST_CASE("preprocess applies DC removal, Z-score and the DFT") {
    SUBCASE("constant windows are flagged degenerate") {
        auto s = preprocess(window_of(std::vector<double>(kWindowSamples, 3.7)));
        CHECK(s.degenerate);
        for (double m : s.magnitudes) CHECK(m == 0.0);
    }
    SUBCASE("scaling the input leaves the spectrum unchanged") {
        Rng rng(5);
        std::vector<double> v(kWindowSamples);
        for (auto& x : v) x = rng.normal(1.0, 2.0);
        auto a = preprocess(window_of(v));
        for (auto& x : v) x = 10.0 * x;
        auto b = preprocess(window_of(v));
        REQUIRE(a.magnitudes.size() == b.magnitudes.size());
        for (std::size_t k = 0; k < a.magnitudes.size(); ++k)
            CHECK(a.magnitudes[k] == doctest::Approx(b.magnitudes[k]).epsilon(1e-9));
    }
    SUBCASE("affine transforms a*x + b with a > 0 leave the spectrum unchanged") {
        Rng rng(6);
        std::vector<double> v(kWindowSamples);
        for (auto& x : v) x = rng.normal(0.0, 1.0);
        auto a = preprocess(window_of(v));
        for (auto& x : v) x = 2.5 * x - 7.0;
        auto b = preprocess(window_of(v));
        for (std::size_t k = 0; k < a.magnitudes.size(); ++k)
            CHECK(a.magnitudes[k] == doctest::Approx(b.magnitudes[k]).epsilon(1e-9));
    }
    SUBCASE("a synthetic neutral pulse peaks near its fundamental") {
        auto profile = synthdata::emotion_profile(Emotion::neutral);
        auto pulse = synthdata::synth_pulse(profile, 10.0, kWorkingRateHz, 77);
        auto s = preprocess(window_of(
            std::vector<double>(pulse.begin(), pulse.begin() + kWindowSamples)));
        std::size_t best = 1;
        for (std::size_t k = 1; k < s.magnitudes.size(); ++k)
            if (s.magnitudes[k] > s.magnitudes[best]) best = k;
        CHECK(std::abs(static_cast<double>(best) * s.bin_hz - profile.f0_mean_hz) <= 0.1);
    }
    SUBCASE("wrong lengths are shape errors") {
        try {
            preprocess(window_of(std::vector<double>(100, 0.0)));
            FAIL("expected shape-error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::shape_error);
        }
    }
}

TEST_CASE("classify_emotion breaks ties in class order") {
    auto model = scores_stub({0.2, 0.5, 0.3});
    auto w = window_of(toy_windows(1, 1)[0].values);
    CHECK(classify_emotion(model, w).label == Emotion::relieved);

    auto tie = scores_stub({0.5, 0.1, 0.5});
    CHECK(classify_emotion(tie, w).label == Emotion::neutral);
}

TEST_CASE("lda separates linearly separable toy spectra") {
    auto windows = toy_windows(12, 3);
    TrainReport report;
    auto model = train_emotion(windows, ModelKind::lda, true, 5, &report);
    auto eval = eval_emotion(model, windows);
    CHECK(eval.accuracy == doctest::Approx(1.0));
    // identity confusion
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t p = 0; p < 3; ++p)
            if (t != p) CHECK(eval.confusion[t * 3 + p] == 0);

    SUBCASE("batch and single classification agree") {
        for (const auto& w : windows) {
            auto c = classify_emotion(model, w);
            CHECK(c.label == *w.emotion_label);
        }
    }
    SUBCASE("missing classes are insufficient data") {
        std::vector<PulseWindow> partial(windows.begin(), windows.begin() + 12);
        try {
            train_emotion(partial, ModelKind::lda, true, 1);
            FAIL("expected insufficient-data");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::insufficient_data);
        }
    }
}

TEST_CASE("a constant predictor scores the class prior, near 1/3 on balanced data") {
    auto windows = toy_windows(100, 9);
    auto model = scores_stub({1.0, 0.0, 0.0});  // always neutral
    auto eval = eval_emotion(model, windows);
    CHECK(std::abs(eval.accuracy - 1.0 / 3.0) <= 0.1);
}

TEST_CASE("lda decisions survive a fixed rotation applied at train and test") {
    // 2D toy features rotated into a fixed basis
    Rng rng(11);
    std::vector<std::vector<double>> feats;
    std::vector<int> labels;
    const double centers[3][2] = {{0, 0}, {4, 0}, {0, 4}};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 30; ++i) {
            feats.push_back({centers[c][0] + rng.normal(0.0, 0.5),
                             centers[c][1] + rng.normal(0.0, 0.5)});
            labels.push_back(c);
        }
    const double theta = 0.7;
    auto rotate = [&](const std::vector<double>& v) {
        return std::vector<double>{v[0] * std::cos(theta) - v[1] * std::sin(theta),
                                   v[0] * std::sin(theta) + v[1] * std::cos(theta)};
    };
    std::vector<std::vector<double>> rotated;
    for (const auto& f : feats) rotated.push_back(rotate(f));

    auto plain = fit_lda_features(feats, labels);
    auto rot = fit_lda_features(rotated, labels);
    for (std::size_t i = 0; i < feats.size(); ++i) {
        auto sa = lda_scores(plain, feats[i]);
        auto sb = lda_scores(rot, rotated[i]);
        const auto pick = [](const std::array<double, 3>& s) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < 3; ++c)
                if (s[c] > s[best]) best = c;
            return best;
        };
        CHECK(pick(sa) == pick(sb));
    }
}

TEST_CASE("cnn and mlp learn the toy spectra with and without DFT") {
    auto windows = toy_windows(25, 17);
    for (auto kind : {ModelKind::cnn1d, ModelKind::mlp}) {
        TrainReport report;
        auto model = train_emotion(windows, kind, true, 3, &report);
        CHECK(report.val_accuracy >= 0.9);
        auto eval = eval_emotion(model, windows);
        CHECK(eval.accuracy >= 0.9);
    }
}

TEST_CASE("freq_saliency forms a distribution and needs a DFT model") {
    auto windows = toy_windows(12, 21);
    auto model = train_emotion(windows, ModelKind::cnn1d, true, 4);
    auto weights = freq_saliency(model, windows[0]);
    REQUIRE(weights.size() == kSpectrumBins);
    double sum = 0.0;
    for (double w : weights) {
        CHECK(w >= 0.0);
        sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    auto raw = train_emotion(windows, ModelKind::mlp, false, 4);
    try {
        freq_saliency(raw, windows[0]);
        FAIL("expected unsupported-model");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::unsupported_model);
    }
}

TEST_CASE("emotion models round-trip through checkpoints") {
    auto dir = std::filesystem::temp_directory_path() / "ithroat_emotion_test";
    std::filesystem::create_directories(dir);
    auto windows = toy_windows(12, 31);
    for (auto kind : {ModelKind::cnn1d, ModelKind::mlp, ModelKind::lda}) {
        auto model = train_emotion(windows, kind, true, 9);
        auto path = dir / (std::string(model_kind_name(kind)) + ".itnn");
        save_emotion_model(path, model);
        auto loaded = load_emotion_model(path);
        CHECK(loaded.kind == kind);
        CHECK(loaded.uses_dft == model.uses_dft);
        for (const auto& w : windows)
            CHECK(classify_emotion(loaded, w).label == classify_emotion(model, w).label);
    }
    std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
