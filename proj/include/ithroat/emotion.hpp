#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <vector>

#include "ithroat/sigcore.hpp"
#include "ithroat/tinynet.hpp"

namespace ithroat::emotion {

using sigcore::Emotion;
using sigcore::PulseWindow;

// Pulse working rate and DFT sizing: 5 s windows at 50 Hz (250 samples)
// zero-padded to 256, bin width 50/256 ~ 0.195 Hz.
inline constexpr std::uint32_t kWorkingRateHz = 50;
inline constexpr std::size_t kWindowSamples = 250;
inline constexpr std::size_t kFftLen = 256;
inline constexpr std::size_t kSpectrumBins = kFftLen / 2 + 1;

// Radix-2 decimation-in-time FFT; padded_len must be a power of two >= x.size().
std::vector<std::complex<double>> fft(const std::vector<double>& x, std::size_t padded_len);

struct SpectrumVector {
    std::vector<double> magnitudes;  // kSpectrumBins entries
    double bin_hz = 0.0;
    bool degenerate = false;  // constant input; zero spectrum, flagged
};

// DC removal -> Z-score -> zero-pad to 256 -> FFT magnitudes of bins 0..128.
SpectrumVector preprocess(const PulseWindow& window);

enum class ModelKind { cnn1d, mlp, lda };

const char* model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

struct LdaModel {
    std::size_t dim = 0;
    std::vector<double> weights;  // 3 x dim
    std::vector<double> bias;     // 3
};

struct EmotionModel {
    ModelKind kind = ModelKind::cnn1d;
    bool uses_dft = true;
    tinynet::Model cnn;  // kind == cnn1d
    tinynet::Mlp mlp;    // kind == mlp
    LdaModel lda;        // kind == lda

    std::size_t input_dim() const { return uses_dft ? kSpectrumBins : kWindowSamples; }
};

struct TrainReport {
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
};

// Closed-form LDA on raw feature vectors (3 classes, ridge-regularized pooled
// covariance); also used as a testbed for the linear-invariance property.
LdaModel fit_lda_features(const std::vector<std::vector<double>>& features,
                          const std::vector<int>& labels);
std::array<double, 3> lda_scores(const LdaModel& model, const std::vector<double>& x);

// 80/20 stratified split; cnn1d/mlp train via tinynet, lda is closed-form
// with a ridge-regularized pooled covariance.
EmotionModel train_emotion(const std::vector<PulseWindow>& windows, ModelKind kind,
                           bool uses_dft, std::uint64_t seed, TrainReport* report = nullptr);

struct Classification {
    Emotion label = Emotion::neutral;
    std::array<double, 3> scores{};
};

// Deterministic argmax; ties resolve in class order neutral < relieved < frustrated.
Classification classify_emotion(const EmotionModel& model, const PulseWindow& window);

struct EvalResult {
    double accuracy = 0.0;
    std::array<std::uint64_t, 9> confusion{};  // row = true label
    std::size_t total = 0;
};

EvalResult eval_emotion(const EmotionModel& model, const std::vector<PulseWindow>& windows);

// |d score_argmax / d magnitude_k| normalized to sum 1; DFT-input models only.
std::vector<double> freq_saliency(const EmotionModel& model, const PulseWindow& window);

void save_emotion_model(const std::filesystem::path& path, const EmotionModel& model);
EmotionModel load_emotion_model(const std::filesystem::path& path);

void write_confusion_csv(const std::filesystem::path& path, const EvalResult& result);

}  // namespace ithroat::emotion
