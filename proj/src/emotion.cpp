#include "ithroat/emotion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

namespace ithroat::emotion {

using tinynet::Batch;

std::vector<std::complex<double>> fft(const std::vector<double>& x, std::size_t padded_len) {
    require(padded_len >= x.size(), Errc::invalid_argument,
            "padded length shorter than the input");
    require(padded_len > 0 && (padded_len & (padded_len - 1)) == 0, Errc::invalid_argument,
            "padded length must be a power of two");
    std::vector<std::complex<double>> a(padded_len, {0.0, 0.0});
    for (std::size_t i = 0; i < x.size(); ++i) a[i] = {x[i], 0.0};

    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < padded_len; ++i) {
        std::size_t bit = padded_len >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= padded_len; len <<= 1) {
        const double angle = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(angle), std::sin(angle));
        for (std::size_t i = 0; i < padded_len; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    return a;
}

SpectrumVector preprocess(const PulseWindow& window) {
    require(window.values.size() == kWindowSamples, Errc::shape_error,
            "pulse window must hold " + std::to_string(kWindowSamples) +
                " samples (5 s at 50 Hz), got " + std::to_string(window.values.size()));
    SpectrumVector s;
    s.bin_hz = static_cast<double>(kWorkingRateHz) / static_cast<double>(kFftLen);

    double mean = 0.0;
    for (double v : window.values) mean += v;
    mean /= static_cast<double>(kWindowSamples);
    double var = 0.0;
    for (double v : window.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(kWindowSamples);
    const double sigma = std::sqrt(var);
    if (sigma < 1e-9) {
        s.degenerate = true;
        s.magnitudes.assign(kSpectrumBins, 0.0);
        return s;
    }
    std::vector<double> z(kWindowSamples);
    for (std::size_t i = 0; i < kWindowSamples; ++i) z[i] = (window.values[i] - mean) / sigma;
    auto bins = fft(z, kFftLen);
    s.magnitudes.resize(kSpectrumBins);
    for (std::size_t k = 0; k < kSpectrumBins; ++k) s.magnitudes[k] = std::abs(bins[k]);
    return s;
}

const char* model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::cnn1d: return "cnn1d";
        case ModelKind::mlp: return "mlp";
        case ModelKind::lda: return "lda";
    }
    return "cnn1d";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "cnn1d") return ModelKind::cnn1d;
    if (name == "mlp") return ModelKind::mlp;
    if (name == "lda") return ModelKind::lda;
    fail(Errc::invalid_argument, "unknown emotion model kind '" + name + "'");
}

namespace {

std::vector<double> model_features(const PulseWindow& window, bool uses_dft) {
    if (uses_dft) return preprocess(window).magnitudes;
    // raw path: DC removal + Z-score only
    require(window.values.size() == kWindowSamples, Errc::shape_error,
            "pulse window must hold " + std::to_string(kWindowSamples) + " samples");
    double mean = 0.0;
    for (double v : window.values) mean += v;
    mean /= static_cast<double>(kWindowSamples);
    double var = 0.0;
    for (double v : window.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(kWindowSamples);
    const double sigma = std::sqrt(var);
    std::vector<double> z(kWindowSamples, 0.0);
    if (sigma >= 1e-9)
        for (std::size_t i = 0; i < kWindowSamples; ++i)
            z[i] = (window.values[i] - mean) / sigma;
    return z;
}

// solve (A + ridge I) x = b via Cholesky; A symmetric positive definite
std::vector<double> cholesky_solve(std::vector<double> a, std::size_t n,
                                   const std::vector<double>& b) {
    std::vector<double> L(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) sum -= L[i * n + k] * L[j * n + k];
            if (i == j) {
                require(sum > 0.0, Errc::invalid_argument,
                        "covariance not positive definite");
                L[i * n + i] = std::sqrt(sum);
            } else {
                L[i * n + j] = sum / L[j * n + j];
            }
        }
    }
    std::vector<double> y(n), x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= L[i * n + k] * y[k];
        y[i] = sum / L[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double sum = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) sum -= L[k * n + ii] * x[k];
        x[ii] = sum / L[ii * n + ii];
    }
    return x;
}

LdaModel fit_lda(const std::vector<std::vector<double>>& feats, const std::vector<int>& labels) {
    const std::size_t dim = feats.front().size();
    const std::size_t n = feats.size();
    std::array<std::vector<double>, 3> means;
    std::array<std::size_t, 3> counts{};
    for (auto& m : means) m.assign(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        counts[static_cast<std::size_t>(labels[i])]++;
        for (std::size_t d = 0; d < dim; ++d)
            means[static_cast<std::size_t>(labels[i])][d] += feats[i][d];
    }
    for (std::size_t c = 0; c < 3; ++c)
        if (counts[c])
            for (auto& v : means[c]) v /= static_cast<double>(counts[c]);

    std::vector<double> cov(dim * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& mu = means[static_cast<std::size_t>(labels[i])];
        for (std::size_t p = 0; p < dim; ++p) {
            const double vp = feats[i][p] - mu[p];
            for (std::size_t q = p; q < dim; ++q)
                cov[p * dim + q] += vp * (feats[i][q] - mu[q]);
        }
    }
    for (std::size_t p = 0; p < dim; ++p)
        for (std::size_t q = 0; q < p; ++q) cov[p * dim + q] = cov[q * dim + p];
    const double denom = static_cast<double>(n > 3 ? n - 3 : 1);
    for (auto& v : cov) v /= denom;
    double trace = 0.0;
    for (std::size_t d = 0; d < dim; ++d) trace += cov[d * dim + d];
    const double ridge = 1e-3 * trace / static_cast<double>(dim);
    for (std::size_t d = 0; d < dim; ++d) cov[d * dim + d] += std::max(ridge, 1e-12);

    LdaModel lda;
    lda.dim = dim;
    lda.weights.assign(3 * dim, 0.0);
    lda.bias.assign(3, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
        auto w = cholesky_solve(cov, dim, means[c]);
        double wm = 0.0;
        for (std::size_t d = 0; d < dim; ++d) wm += w[d] * means[c][d];
        const double prior = counts[c] ? static_cast<double>(counts[c]) / n : 1e-12;
        for (std::size_t d = 0; d < dim; ++d) lda.weights[c * dim + d] = w[d];
        lda.bias[c] = -0.5 * wm + std::log(prior);
    }
    return lda;
}

}  // namespace

LdaModel fit_lda_features(const std::vector<std::vector<double>>& features,
                          const std::vector<int>& labels) {
    require(!features.empty() && features.size() == labels.size(), Errc::invalid_argument,
            "features/labels mismatch");
    return fit_lda(features, labels);
}

std::array<double, 3> lda_scores(const LdaModel& model, const std::vector<double>& x) {
    require(x.size() == model.dim, Errc::shape_error, "lda input length mismatch");
    std::array<double, 3> scores{};
    for (std::size_t c = 0; c < 3; ++c) {
        double acc = model.bias[c];
        for (std::size_t d = 0; d < model.dim; ++d)
            acc += model.weights[c * model.dim + d] * x[d];
        scores[c] = acc;
    }
    return scores;
}

namespace {

std::array<double, 3> model_scores(const EmotionModel& model, const std::vector<double>& x) {
    std::array<double, 3> scores{};
    Batch b{1, x.size(), x};
    switch (model.kind) {
        case ModelKind::cnn1d: {
            auto logits = tinynet::forward(model.cnn, b);
            std::copy(logits.begin(), logits.end(), scores.begin());
            break;
        }
        case ModelKind::mlp: {
            auto logits = tinynet::mlp_forward(model.mlp, b);
            std::copy(logits.begin(), logits.end(), scores.begin());
            break;
        }
        case ModelKind::lda: {
            require(x.size() == model.lda.dim, Errc::shape_error, "lda input length mismatch");
            for (std::size_t c = 0; c < 3; ++c) {
                double acc = model.lda.bias[c];
                for (std::size_t d = 0; d < model.lda.dim; ++d)
                    acc += model.lda.weights[c * model.lda.dim + d] * x[d];
                scores[c] = acc;
            }
            break;
        }
    }
    return scores;
}

double scored_accuracy(const EmotionModel& model, const std::vector<std::vector<double>>& feats,
                       const std::vector<int>& labels) {
    if (feats.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < feats.size(); ++i) {
        auto scores = model_scores(model, feats[i]);
        std::size_t best = 0;
        for (std::size_t c = 1; c < 3; ++c)
            if (scores[c] > scores[best]) best = c;
        if (best == static_cast<std::size_t>(labels[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(feats.size());
}

}  // namespace

EmotionModel train_emotion(const std::vector<PulseWindow>& windows, ModelKind kind,
                           bool uses_dft, std::uint64_t seed, TrainReport* report) {
    std::array<std::vector<std::size_t>, 3> by_class;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        require(windows[i].emotion_label.has_value(), Errc::invalid_argument,
                "training windows must carry emotion labels");
        by_class[static_cast<std::size_t>(*windows[i].emotion_label)].push_back(i);
    }
    for (std::size_t c = 0; c < 3; ++c)
        require(by_class[c].size() >= 10, Errc::insufficient_data,
                std::string("class '") + sigcore::emotion_name(static_cast<Emotion>(c)) +
                    "' has " + std::to_string(by_class[c].size()) + " windows, need >= 10");

    // stratified 80/20 split
    Rng rng(mix_seed(seed, 0x454D53504C));
    std::vector<std::size_t> train_idx, val_idx;
    for (auto& pool : by_class) {
        rng.shuffle(pool);
        const std::size_t val_count = std::max<std::size_t>(1, pool.size() / 5);
        for (std::size_t i = 0; i < pool.size(); ++i)
            (i < pool.size() - val_count ? train_idx : val_idx).push_back(pool[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    auto gather = [&](const std::vector<std::size_t>& idx,
                      std::vector<std::vector<double>>& feats, std::vector<int>& labels) {
        feats.clear();
        labels.clear();
        for (auto i : idx) {
            feats.push_back(model_features(windows[i], uses_dft));
            labels.push_back(static_cast<int>(*windows[i].emotion_label));
        }
    };
    std::vector<std::vector<double>> train_feats, val_feats;
    std::vector<int> train_labels, val_labels;
    gather(train_idx, train_feats, train_labels);
    gather(val_idx, val_feats, val_labels);

    EmotionModel model;
    model.kind = kind;
    model.uses_dft = uses_dft;
    const std::size_t dim = model.input_dim();

    if (kind == ModelKind::lda) {
        model.lda = fit_lda(train_feats, train_labels);
    } else {
        tinynet::TrainConfig cfg;
        cfg.lr = 1e-3;
        cfg.batch_size = 32;
        cfg.seed = seed;
        const std::size_t epochs = 60;
        std::vector<std::size_t> order(train_feats.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        auto epoch_batches = [&](std::size_t epoch, auto&& step) {
            Rng erng(mix_seed(seed, 0xE7000 + epoch));
            erng.shuffle(order);
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t count = std::min(cfg.batch_size, order.size() - start);
                Batch b;
                b.rows = count;
                b.cols = dim;
                b.x.resize(count * dim);
                std::vector<int> labels(count);
                for (std::size_t i = 0; i < count; ++i) {
                    const auto& f = train_feats[order[start + i]];
                    std::copy(f.begin(), f.end(), b.x.begin() + static_cast<std::ptrdiff_t>(i * dim));
                    labels[i] = train_labels[order[start + i]];
                }
                step(b, labels);
            }
        };

        if (kind == ModelKind::cnn1d) {
            tinynet::ArchConfig arch;
            arch.input_len = dim;
            arch.stem_width = 8;
            arch.blocks = {{8, 1}, {16, 2}};
            arch.classes = 3;
            arch.role = "emotion";
            model.cnn = tinynet::build_model(arch, seed);
            auto state = tinynet::make_adam_state(model.cnn);
            auto best = model.cnn;
            double best_val = -1.0;
            for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
                epoch_batches(epoch, [&](const Batch& b, const std::vector<int>& l) {
                    tinynet::train_step(model.cnn, b, l, cfg, state);
                });
                const double acc = scored_accuracy(model, val_feats, val_labels);
                if (acc > best_val) {
                    best_val = acc;
                    best = model.cnn;
                }
            }
            model.cnn = std::move(best);
        } else {
            tinynet::MlpConfig mcfg;
            mcfg.input = dim;
            mcfg.hidden = {32};
            mcfg.classes = 3;
            model.mlp = tinynet::build_mlp(mcfg, seed);
            auto state = tinynet::make_adam_state(model.mlp);
            auto best = model.mlp;
            double best_val = -1.0;
            for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
                epoch_batches(epoch, [&](const Batch& b, const std::vector<int>& l) {
                    tinynet::mlp_train_step(model.mlp, b, l, cfg, state);
                });
                const double acc = scored_accuracy(model, val_feats, val_labels);
                if (acc > best_val) {
                    best_val = acc;
                    best = model.mlp;
                }
            }
            model.mlp = std::move(best);
        }
    }
    if (report) {
        report->train_accuracy = scored_accuracy(model, train_feats, train_labels);
        report->val_accuracy = scored_accuracy(model, val_feats, val_labels);
    }
    return model;
}

Classification classify_emotion(const EmotionModel& model, const PulseWindow& window) {
    auto x = model_features(window, model.uses_dft);
    Classification result;
    result.scores = model_scores(model, x);
    std::size_t best = 0;
    for (std::size_t c = 1; c < 3; ++c)
        if (result.scores[c] > result.scores[best]) best = c;
    result.label = static_cast<Emotion>(best);
    return result;
}

EvalResult eval_emotion(const EmotionModel& model, const std::vector<PulseWindow>& windows) {
    EvalResult result;
    std::uint64_t hits = 0;
    for (const auto& w : windows) {
        require(w.emotion_label.has_value(), Errc::invalid_argument,
                "evaluation windows must carry emotion labels");
        const auto truth = static_cast<std::size_t>(*w.emotion_label);
        const auto pred = static_cast<std::size_t>(classify_emotion(model, w).label);
        result.confusion[truth * 3 + pred]++;
        if (truth == pred) ++hits;
        result.total++;
    }
    result.accuracy = result.total ? static_cast<double>(hits) / result.total : 0.0;
    return result;
}

std::vector<double> freq_saliency(const EmotionModel& model, const PulseWindow& window) {
    require(model.uses_dft, Errc::unsupported_model,
            "frequency saliency needs a DFT-input model");
    auto x = model_features(window, true);
    std::vector<double> grad;
    switch (model.kind) {
        case ModelKind::cnn1d:
            grad = tinynet::input_gradient(model.cnn, x);
            break;
        case ModelKind::mlp:
            grad = tinynet::mlp_input_gradient(model.mlp, x);
            break;
        case ModelKind::lda: {
            auto scores = model_scores(model, x);
            std::size_t best = 0;
            for (std::size_t c = 1; c < 3; ++c)
                if (scores[c] > scores[best]) best = c;
            grad.assign(model.lda.dim, 0.0);
            for (std::size_t d = 0; d < model.lda.dim; ++d)
                grad[d] = std::abs(model.lda.weights[best * model.lda.dim + d]);
            break;
        }
    }
    double total = 0.0;
    for (double g : grad) total += g;
    if (total <= 0.0) {
        std::fill(grad.begin(), grad.end(), 1.0 / static_cast<double>(grad.size()));
    } else {
        for (auto& g : grad) g /= total;
    }
    return grad;
}

// ---------------------------------------------------------------------------

void save_emotion_model(const std::filesystem::path& path, const EmotionModel& model) {
    tinynet::CheckpointFile file;
    nlohmann::json j;
    j["family"] = "emotion";
    j["kind"] = model_kind_name(model.kind);
    j["uses_dft"] = model.uses_dft;
    switch (model.kind) {
        case ModelKind::cnn1d:
            j["inner"] = nlohmann::json::parse(tinynet::arch_to_json(model.cnn.config));
            file.tensors = model.cnn.tensors;
            break;
        case ModelKind::mlp:
            j["inner"] = nlohmann::json::parse(tinynet::mlp_to_json(model.mlp.config));
            file.tensors = model.mlp.tensors;
            break;
        case ModelKind::lda: {
            j["inner"] = {{"dim", model.lda.dim}};
            tinynet::Tensor w = tinynet::Tensor::zeros({3, model.lda.dim});
            w.data = model.lda.weights;
            tinynet::Tensor b = tinynet::Tensor::zeros({3});
            b.data = model.lda.bias;
            file.tensors.emplace_back("lda.w", std::move(w));
            file.tensors.emplace_back("lda.b", std::move(b));
            break;
        }
    }
    file.header_json = j.dump();
    tinynet::write_checkpoint_file(path, file);
}

EmotionModel load_emotion_model(const std::filesystem::path& path) {
    auto file = tinynet::read_checkpoint_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(file.header_json);
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::format_error, std::string("emotion checkpoint header: ") + e.what());
    }
    require(j.value("family", "") == "emotion", Errc::config_error,
            "not an emotion model checkpoint");
    EmotionModel model;
    model.kind = model_kind_from_name(j.at("kind").get<std::string>());
    model.uses_dft = j.at("uses_dft").get<bool>();
    switch (model.kind) {
        case ModelKind::cnn1d: {
            model.cnn.config = tinynet::arch_from_json(j.at("inner").dump());
            model.cnn.tensors = std::move(file.tensors);
            break;
        }
        case ModelKind::mlp: {
            model.mlp.config = tinynet::mlp_from_json(j.at("inner").dump());
            model.mlp.tensors = std::move(file.tensors);
            break;
        }
        case ModelKind::lda: {
            model.lda.dim = j.at("inner").at("dim").get<std::size_t>();
            require(file.tensors.size() == 2, Errc::config_error, "lda checkpoint needs 2 tensors");
            model.lda.weights = file.tensors[0].second.data;
            model.lda.bias = file.tensors[1].second.data;
            require(model.lda.weights.size() == 3 * model.lda.dim, Errc::config_error,
                    "lda weight shape mismatch");
            break;
        }
    }
    return model;
}

void write_confusion_csv(const std::filesystem::path& path, const EvalResult& result) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot write " + path.string());
    out << "accuracy," << result.accuracy << "\n";
    out << "true\\pred,neutral,relieved,frustrated\n";
    for (std::size_t t = 0; t < 3; ++t) {
        out << sigcore::emotion_name(static_cast<Emotion>(t));
        for (std::size_t p = 0; p < 3; ++p) out << "," << result.confusion[t * 3 + p];
        out << "\n";
    }
}

}  // namespace ithroat::emotion
