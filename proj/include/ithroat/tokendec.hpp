#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ithroat/sigcore.hpp"
#include "ithroat/synthdata.hpp"
#include "ithroat/tinynet.hpp"

namespace ithroat::tokendec {

using synthdata::TokenDataset;
using tinynet::ArchConfig;
using tinynet::Model;
using tinynet::TrainConfig;

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    Model model;  // best-validation checkpoint
    std::vector<EpochStats> log;
    double best_val_accuracy = 0.0;
};

struct EvalReport {
    std::size_t classes = 0;
    double token_accuracy = 0.0;
    std::vector<std::uint64_t> confusion;  // classes x classes, row = true label
    std::vector<double> per_class_recall;
    double blank_boundary_error_fraction = 0.0;  // errors involving class 0 / all errors
    std::uint64_t total = 0;
    std::uint64_t errors = 0;
};

struct FewShotPoint {
    std::size_t repetitions = 0;
    double accuracy = 0.0;
};

struct FewShotCurve {
    std::string mode;  // "transfer" or "scratch"
    std::vector<FewShotPoint> points;
};

struct DistillResult {
    Model student;
    double teacher_accuracy = 0.0;  // on the held-out split of the distill set
    double student_accuracy = 0.0;
    double flops_ratio = 0.0;
};

// 90/10 train/validation split by utterance group when the dataset carries
// group ids, else by sample. Deterministic in seed.
void split_dataset(const TokenDataset& ds, double val_fraction, std::uint64_t seed,
                   std::vector<std::size_t>& train_idx, std::vector<std::size_t>& val_idx);

TrainResult pretrain(const TokenDataset& healthy_ds, const ArchConfig& arch,
                     const TrainConfig& train);

// Fine-tune on the first reps_per_word utterances of each word; all layers
// trainable at lr/10. reps_per_word = 0 returns the base unchanged (zero-shot).
Model finetune(const Model& base, const TokenDataset& patient_ds, std::size_t reps_per_word,
               const TrainConfig& train);

// Same loop as distillation but with the plain CE loss; used for the
// from-scratch baseline and as the alpha = 1 reduction case.
Model train_from_scratch(const ArchConfig& arch, const TokenDataset& ds,
                         const TrainConfig& train);

DistillResult distill(const Model& teacher, const ArchConfig& student_arch,
                      const TokenDataset& ds, const TrainConfig& train);

EvalReport evaluate(const Model& model, const TokenDataset& ds);
double accuracy_on(const Model& model, const TokenDataset& ds,
                   const std::vector<std::size_t>& indices);

// Causal streaming classification: assemble, then per-sample argmax.
std::vector<int> classify_stream(const Model& model, const std::vector<sigcore::Token>& tokens,
                                 std::size_t n);

// |d logit_argmax / d input| summed within each token position, normalized.
std::vector<double> saliency(const Model& model, const sigcore::TokenSample& sample);

struct PcaResult {
    std::vector<double> coords;   // 2 per sample (pc1, pc2)
    std::vector<int> labels;
    std::vector<double> component1, component2;  // orthonormal
    double variance1 = 0.0, variance2 = 0.0;
};

// Penultimate-layer features projected on the top-2 principal components.
PcaResult pca_features(const Model& model, const TokenDataset& ds);

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report);
void write_curve_csv(const std::filesystem::path& path, const std::vector<FewShotCurve>& curves);
void write_pca_csv(const std::filesystem::path& path, const PcaResult& pca);

}  // namespace ithroat::tokendec
