#include "ithroat/tokendec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

namespace ithroat::tokendec {

using tinynet::Batch;

namespace {

Batch make_batch(const TokenDataset& ds, const std::vector<std::size_t>& indices,
                 std::size_t begin, std::size_t count) {
    Batch b;
    b.rows = count;
    b.cols = ds.sample_len();
    b.x.resize(count * b.cols);
    for (std::size_t i = 0; i < count; ++i) {
        const float* src = ds.sample(indices[begin + i]);
        double* dst = b.x.data() + i * b.cols;
        for (std::size_t k = 0; k < b.cols; ++k) dst[k] = static_cast<double>(src[k]);
    }
    return b;
}

std::vector<int> batch_labels(const TokenDataset& ds, const std::vector<std::size_t>& indices,
                              std::size_t begin, std::size_t count) {
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i)
        labels[i] = static_cast<int>(ds.labels[indices[begin + i]]);
    return labels;
}

std::vector<int> predict(const Model& model, const TokenDataset& ds,
                         const std::vector<std::size_t>& indices) {
    const std::size_t classes = model.config.classes;
    std::vector<int> preds(indices.size());
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const std::size_t count = std::min(chunk, indices.size() - start);
        Batch b = make_batch(ds, indices, start, count);
        auto logits = tinynet::forward(model, b);
        for (std::size_t i = 0; i < count; ++i) {
            const double* row = logits.data() + i * classes;
            std::size_t best = 0;
            for (std::size_t k = 1; k < classes; ++k)
                if (row[k] > row[best]) best = k;
            preds[start + i] = static_cast<int>(best);
        }
    }
    return preds;
}

void check_dataset(const TokenDataset& ds, const ArchConfig& arch) {
    require(ds.sample_count() > 0, Errc::empty_input, "dataset is empty");
    require(ds.sample_len() == arch.input_len, Errc::config_error,
            "dataset sample length " + std::to_string(ds.sample_len()) +
                " != model input_len " + std::to_string(arch.input_len));
    require(ds.class_count == arch.classes, Errc::config_error,
            "dataset class count " + std::to_string(ds.class_count) + " != model classes " +
                std::to_string(arch.classes));
}

// One pass of mini-batch training over the given index set, fixed-order
// shuffles per epoch; teacher != nullptr switches to the distillation loss.
Model train_loop(Model model, const TokenDataset& ds, std::vector<std::size_t> idx,
                 const TrainConfig& cfg, const Model* teacher) {
    auto state = tinynet::make_adam_state(model);
    TrainConfig effective = cfg;
    if (teacher && !effective.distill) effective.distill = tinynet::DistillParams{};
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 0xE50000 + epoch));
        rng.shuffle(idx);
        for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, idx.size() - start);
            Batch b = make_batch(ds, idx, start, count);
            auto labels = batch_labels(ds, idx, start, count);
            try {
                if (teacher) {
                    auto tlogits = tinynet::forward(*teacher, b);
                    tinynet::train_step(model, b, labels, effective, state, &tlogits);
                } else {
                    tinynet::train_step(model, b, labels, effective, state);
                }
            } catch (const Error& e) {
                if (e.code() == Errc::divergence_error)
                    fail(Errc::divergence_error,
                         "diverged at epoch " + std::to_string(epoch));
                throw;
            }
        }
    }
    return model;
}

// Utterance group -> dominant word label; drill sessions carry exactly one word.
std::map<std::uint32_t, int> group_words(const TokenDataset& ds) {
    std::map<std::uint32_t, std::map<int, std::size_t>> counts;
    for (std::size_t i = 0; i < ds.sample_count(); ++i) {
        const int label = ds.labels[i];
        if (label != 0) counts[ds.group_ids[i]][label]++;
    }
    std::map<std::uint32_t, int> words;
    for (const auto& [group, by_label] : counts) {
        int best = 0;
        std::size_t best_count = 0;
        for (const auto& [label, count] : by_label)
            if (count > best_count) {
                best = label;
                best_count = count;
            }
        words[group] = best;
    }
    return words;
}

}  // namespace

void split_dataset(const TokenDataset& ds, double val_fraction, std::uint64_t seed,
                   std::vector<std::size_t>& train_idx, std::vector<std::size_t>& val_idx) {
    train_idx.clear();
    val_idx.clear();
    Rng rng(mix_seed(seed, 0x53504C49));
    if (ds.group_ids.size() == ds.sample_count() && !ds.group_ids.empty()) {
        std::vector<std::uint32_t> groups(ds.group_ids);
        std::sort(groups.begin(), groups.end());
        groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
        rng.shuffle(groups);
        const std::size_t val_count =
            std::max<std::size_t>(1, static_cast<std::size_t>(groups.size() * val_fraction));
        std::set<std::uint32_t> val_groups(groups.end() - static_cast<std::ptrdiff_t>(val_count),
                                           groups.end());
        for (std::size_t i = 0; i < ds.sample_count(); ++i)
            (val_groups.count(ds.group_ids[i]) ? val_idx : train_idx).push_back(i);
    } else {
        std::vector<std::size_t> all(ds.sample_count());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        rng.shuffle(all);
        const std::size_t val_count =
            std::max<std::size_t>(1, static_cast<std::size_t>(all.size() * val_fraction));
        val_idx.assign(all.end() - static_cast<std::ptrdiff_t>(val_count), all.end());
        train_idx.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(val_count));
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(val_idx.begin(), val_idx.end());
    }
}

double accuracy_on(const Model& model, const TokenDataset& ds,
                   const std::vector<std::size_t>& indices) {
    if (indices.empty()) return 0.0;
    auto preds = predict(model, ds, indices);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < indices.size(); ++i)
        if (preds[i] == static_cast<int>(ds.labels[indices[i]])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(indices.size());
}

TrainResult pretrain(const TokenDataset& healthy_ds, const ArchConfig& arch,
                     const TrainConfig& train) {
    check_dataset(healthy_ds, arch);
    std::vector<std::size_t> train_idx, val_idx;
    split_dataset(healthy_ds, 0.10, train.seed, train_idx, val_idx);

    TrainResult result;
    result.model = tinynet::build_model(arch, train.seed);
    Model current = result.model;
    auto state = tinynet::make_adam_state(current);
    std::vector<std::size_t> idx = train_idx;
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        Rng rng(mix_seed(train.seed, 0xE50000 + epoch));
        rng.shuffle(idx);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < idx.size(); start += train.batch_size) {
            const std::size_t count = std::min(train.batch_size, idx.size() - start);
            Batch b = make_batch(healthy_ds, idx, start, count);
            auto labels = batch_labels(healthy_ds, idx, start, count);
            try {
                loss_sum += tinynet::train_step(current, b, labels, train, state);
            } catch (const Error& e) {
                if (e.code() == Errc::divergence_error)
                    fail(Errc::divergence_error, "diverged at epoch " + std::to_string(epoch));
                throw;
            }
            ++batches;
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        stats.val_accuracy = accuracy_on(current, healthy_ds, val_idx);
        result.log.push_back(stats);
        if (stats.val_accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = stats.val_accuracy;
            result.model = current;
        }
    }
    return result;
}

Model finetune(const Model& base, const TokenDataset& patient_ds, std::size_t reps_per_word,
               const TrainConfig& train) {
    if (reps_per_word == 0) return base;
    check_dataset(patient_ds, base.config);
    require(patient_ds.group_ids.size() == patient_ds.sample_count(), Errc::insufficient_data,
            "patient dataset lacks utterance group metadata");

    auto words = group_words(patient_ds);
    std::map<int, std::vector<std::uint32_t>> by_word;
    for (const auto& [group, word] : words) by_word[word].push_back(group);

    std::set<std::uint32_t> selected;
    for (std::size_t word = 1; word < patient_ds.class_count; ++word) {
        auto it = by_word.find(static_cast<int>(word));
        const std::size_t have = it == by_word.end() ? 0 : it->second.size();
        require(have >= reps_per_word, Errc::insufficient_data,
                "word " + std::to_string(word) + " has " + std::to_string(have) +
                    " repetitions, need " + std::to_string(reps_per_word));
        for (std::size_t r = 0; r < reps_per_word; ++r) selected.insert(it->second[r]);
    }
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < patient_ds.sample_count(); ++i)
        if (selected.count(patient_ds.group_ids[i])) idx.push_back(i);

    TrainConfig cfg = train;
    cfg.lr = train.lr / 10.0;
    return train_loop(base, patient_ds, std::move(idx), cfg, nullptr);
}

Model train_from_scratch(const ArchConfig& arch, const TokenDataset& ds,
                         const TrainConfig& train) {
    check_dataset(ds, arch);
    std::vector<std::size_t> idx(ds.sample_count());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return train_loop(tinynet::build_model(arch, train.seed), ds, std::move(idx), train,
                      nullptr);
}

DistillResult distill(const Model& teacher, const ArchConfig& student_arch,
                      const TokenDataset& ds, const TrainConfig& train) {
    check_dataset(ds, student_arch);
    require(teacher.config.classes == student_arch.classes, Errc::config_error,
            "teacher/student class count mismatch");
    require(teacher.config.input_len == student_arch.input_len, Errc::config_error,
            "teacher/student input length mismatch");

    std::vector<std::size_t> train_idx, val_idx;
    split_dataset(ds, 0.10, train.seed, train_idx, val_idx);

    DistillResult result;
    result.student = train_loop(tinynet::build_model(student_arch, train.seed), ds, train_idx,
                                train, &teacher);
    result.teacher_accuracy = accuracy_on(teacher, ds, val_idx);
    result.student_accuracy = accuracy_on(result.student, ds, val_idx);
    result.flops_ratio = static_cast<double>(tinynet::count_flops(student_arch)) /
                         static_cast<double>(tinynet::count_flops(teacher.config));
    return result;
}

EvalReport evaluate(const Model& model, const TokenDataset& ds) {
    check_dataset(ds, model.config);
    const std::size_t classes = model.config.classes;
    std::vector<std::size_t> idx(ds.sample_count());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    auto preds = predict(model, ds, idx);

    EvalReport report;
    report.classes = classes;
    report.confusion.assign(classes * classes, 0);
    report.total = ds.sample_count();
    std::uint64_t blank_errors = 0;
    for (std::size_t i = 0; i < ds.sample_count(); ++i) {
        const std::size_t truth = ds.labels[i];
        const std::size_t pred = static_cast<std::size_t>(preds[i]);
        report.confusion[truth * classes + pred]++;
        if (truth != pred) {
            report.errors++;
            if (truth == 0 || pred == 0) blank_errors++;
        }
    }
    std::uint64_t trace = 0;
    for (std::size_t c = 0; c < classes; ++c) trace += report.confusion[c * classes + c];
    report.token_accuracy = static_cast<double>(trace) / static_cast<double>(report.total);
    report.per_class_recall.assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        std::uint64_t row = 0;
        for (std::size_t p = 0; p < classes; ++p) row += report.confusion[c * classes + p];
        if (row > 0)
            report.per_class_recall[c] =
                static_cast<double>(report.confusion[c * classes + c]) /
                static_cast<double>(row);
    }
    report.blank_boundary_error_fraction =
        report.errors ? static_cast<double>(blank_errors) / static_cast<double>(report.errors)
                      : 0.0;
    return report;
}

std::vector<int> classify_stream(const Model& model, const std::vector<sigcore::Token>& tokens,
                                 std::size_t n) {
    if (tokens.empty()) return {};
    const std::size_t tl = tokens.front().values.size();
    require(n * tl == model.config.input_len, Errc::shape_error,
            "n * token_len does not match the checkpoint input length");
    auto samples = sigcore::assemble_samples(tokens, n);
    Batch b;
    b.rows = samples.size();
    b.cols = model.config.input_len;
    b.x.resize(b.rows * b.cols);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double* dst = b.x.data() + i * b.cols;
        for (const auto& t : samples[i].tokens) {
            std::copy(t.values.begin(), t.values.end(), dst);
            dst += t.values.size();
        }
    }
    auto logits = tinynet::forward(model, b);
    std::vector<int> preds(b.rows);
    const std::size_t classes = model.config.classes;
    for (std::size_t i = 0; i < b.rows; ++i) {
        const double* row = logits.data() + i * classes;
        std::size_t best = 0;
        for (std::size_t k = 1; k < classes; ++k)
            if (row[k] > row[best]) best = k;
        preds[i] = static_cast<int>(best);
    }
    return preds;
}

std::vector<double> saliency(const Model& model, const sigcore::TokenSample& sample) {
    const std::size_t n = sample.tokens.size();
    require(n > 0, Errc::empty_input, "empty token sample");
    const std::size_t tl = sample.tokens.front().values.size();
    require(n * tl == model.config.input_len, Errc::shape_error,
            "sample size does not match the checkpoint input length");
    std::vector<double> row;
    row.reserve(n * tl);
    for (const auto& t : sample.tokens) row.insert(row.end(), t.values.begin(), t.values.end());
    auto grad = tinynet::input_gradient(model, row);
    std::vector<double> weights(n, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < tl; ++k) weights[p] += grad[p * tl + k];
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) {
        std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(n));
    } else {
        for (auto& w : weights) w /= total;
    }
    return weights;
}

// --- PCA ----------------------------------------------------------------------

namespace {

// cyclic Jacobi eigen decomposition for small symmetric matrices
void jacobi_eigen(std::vector<double>& a, std::size_t n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
    eigvecs.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-22) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p];
                    const double akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k];
                    const double aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = eigvecs[k * n + p];
                    const double vkq = eigvecs[k * n + q];
                    eigvecs[k * n + p] = c * vkp - s * vkq;
                    eigvecs[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

}  // namespace

PcaResult pca_features(const Model& model, const TokenDataset& ds) {
    require(ds.sample_count() >= 3, Errc::insufficient_data, "PCA needs at least 3 samples");
    check_dataset(ds, model.config);
    std::vector<std::size_t> idx(ds.sample_count());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    const std::size_t dim = model.config.blocks.back().width;
    const std::size_t S = ds.sample_count();
    std::vector<double> feats(S * dim);
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < S; start += chunk) {
        const std::size_t count = std::min(chunk, S - start);
        Batch b = make_batch(ds, idx, start, count);
        auto f = tinynet::forward_features(model, b);
        std::copy(f.begin(), f.end(), feats.begin() + static_cast<std::ptrdiff_t>(start * dim));
    }

    std::vector<double> mean(dim, 0.0);
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t d = 0; d < dim; ++d) mean[d] += feats[i * dim + d];
    for (auto& m : mean) m /= static_cast<double>(S);
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t d = 0; d < dim; ++d) feats[i * dim + d] -= mean[d];

    std::vector<double> cov(dim * dim, 0.0);
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t p = 0; p < dim; ++p) {
            const double v = feats[i * dim + p];
            if (v == 0.0) continue;
            for (std::size_t q = p; q < dim; ++q) cov[p * dim + q] += v * feats[i * dim + q];
        }
    for (std::size_t p = 0; p < dim; ++p)
        for (std::size_t q = 0; q < p; ++q) cov[p * dim + q] = cov[q * dim + p];
    for (auto& v : cov) v /= static_cast<double>(S - 1);

    std::vector<double> eigvals, eigvecs;
    jacobi_eigen(cov, dim, eigvals, eigvecs);

    std::vector<std::size_t> order(dim);
    for (std::size_t i = 0; i < dim; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return eigvals[a] > eigvals[b]; });

    PcaResult result;
    result.component1.resize(dim);
    result.component2.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        result.component1[d] = eigvecs[d * dim + order[0]];
        result.component2[d] = eigvecs[d * dim + order[1]];
    }
    // deterministic sign: the largest-magnitude loading is positive
    for (auto* comp : {&result.component1, &result.component2}) {
        std::size_t best = 0;
        for (std::size_t d = 1; d < dim; ++d)
            if (std::abs((*comp)[d]) > std::abs((*comp)[best])) best = d;
        if ((*comp)[best] < 0.0)
            for (auto& v : *comp) v = -v;
    }
    result.variance1 = std::max(0.0, eigvals[order[0]]);
    result.variance2 = std::max(0.0, eigvals[order[1]]);
    result.coords.resize(S * 2);
    result.labels.resize(S);
    for (std::size_t i = 0; i < S; ++i) {
        double c1 = 0.0, c2 = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            c1 += feats[i * dim + d] * result.component1[d];
            c2 += feats[i * dim + d] * result.component2[d];
        }
        result.coords[i * 2] = c1;
        result.coords[i * 2 + 1] = c2;
        result.labels[i] = static_cast<int>(ds.labels[i]);
    }
    return result;
}

// --- CSV export ----------------------------------------------------------------

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot write " + path.string());
    out << "token_accuracy," << report.token_accuracy << "\n";
    out << "blank_boundary_error_fraction," << report.blank_boundary_error_fraction << "\n";
    out << "total," << report.total << "\n";
    out << "errors," << report.errors << "\n";
    out << "class,recall\n";
    for (std::size_t c = 0; c < report.classes; ++c)
        out << c << "," << report.per_class_recall[c] << "\n";
    out << "confusion\n";
    for (std::size_t t = 0; t < report.classes; ++t) {
        for (std::size_t p = 0; p < report.classes; ++p) {
            if (p) out << ",";
            out << report.confusion[t * report.classes + p];
        }
        out << "\n";
    }
}

void write_curve_csv(const std::filesystem::path& path,
                     const std::vector<FewShotCurve>& curves) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot write " + path.string());
    out << "mode,repetitions_per_word,accuracy\n";
    for (const auto& curve : curves)
        for (const auto& p : curve.points)
            out << curve.mode << "," << p.repetitions << "," << p.accuracy << "\n";
}

void write_pca_csv(const std::filesystem::path& path, const PcaResult& pca) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot write " + path.string());
    out << "sample_id,label,pc1,pc2\n";
    for (std::size_t i = 0; i < pca.labels.size(); ++i)
        out << i << "," << pca.labels[i] << "," << pca.coords[i * 2] << ","
            << pca.coords[i * 2 + 1] << "\n";
}

}  // namespace ithroat::tokendec
