#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ithroat/common.hpp"

namespace ithroat::tinynet {

// Dense row-major nd array of doubles. Training runs in double precision;
// checkpoints store float32 (documented rounding).
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    static Tensor zeros(std::vector<std::size_t> shape);
    std::size_t size() const { return data.size(); }
};

struct BlockSpec {
    std::size_t width = 0;
    std::size_t stride = 1;
    bool operator==(const BlockSpec&) const = default;
};

// Normalization-free 1D residual net: stem conv (k=7) -> ReLU -> blocks
// (conv k=3 -> ReLU -> conv k=3, scaled residual, ReLU) -> global average
// pool -> dense logits. Blocks with stride 2 or a width change use a 1x1
// projection shortcut.
struct ArchConfig {
    std::size_t input_len = 0;
    std::size_t in_channels = 1;
    std::size_t stem_width = 0;
    std::vector<BlockSpec> blocks;
    std::size_t classes = 0;
    std::string role;  // "teacher" / "student" for the reference configs

    bool operator==(const ArchConfig&) const = default;
};

void validate_config(const ArchConfig& config);  // config-error on bad shapes

std::string arch_to_json(const ArchConfig& config);
ArchConfig arch_from_json(const std::string& json_text);

struct Model {
    ArchConfig config;
    std::vector<std::pair<std::string, Tensor>> tensors;  // fixed order, unique names

    Tensor& tensor(const std::string& name);
    const Tensor& tensor(const std::string& name) const;
};

Model build_model(const ArchConfig& config, std::uint64_t seed);

// Row-major (rows x cols) batch of flattened 1-channel inputs.
struct Batch {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> x;
};

// Inference path; returns logits (rows x classes).
std::vector<double> forward(const Model& model, const Batch& batch);
// Penultimate features: global-average-pooled activations (rows x last width).
std::vector<double> forward_features(const Model& model, const Batch& batch);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d logits
};

// Mean softmax cross-entropy; gradient is (softmax - onehot) / rows.
LossGrad loss_ce(const std::vector<double>& logits, std::size_t rows, std::size_t classes,
                 const std::vector<int>& labels);

// alpha * CE(student, labels) + (1 - alpha) * T^2 * KL(soft teacher || soft student),
// teacher treated as a constant. alpha = 1 reduces exactly to loss_ce.
LossGrad loss_distill(const std::vector<double>& student_logits,
                      const std::vector<double>& teacher_logits, std::size_t rows,
                      std::size_t classes, const std::vector<int>& labels, double temperature,
                      double alpha);

std::vector<double> softmax(const std::vector<double>& logits, std::size_t rows,
                            std::size_t classes);

struct DistillParams {
    double temperature = 4.0;
    double alpha = 0.3;
};

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::size_t epochs = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::optional<DistillParams> distill;
};

struct AdamState {
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

AdamState make_adam_state(const Model& model);

// Gradients of the batch loss for every parameter tensor, plus optionally the
// gradient w.r.t. the input rows. teacher_logits switches CE to the
// distillation loss using config.distill.
struct BackpropResult {
    double loss = 0.0;
    std::vector<Tensor> grads;               // aligned with model.tensors
    std::vector<double> input_grad;          // rows x cols, when requested
};

BackpropResult backprop(const Model& model, const Batch& batch, const std::vector<int>& labels,
                        const TrainConfig& config,
                        const std::vector<double>* teacher_logits = nullptr,
                        bool want_input_grad = false);

// One Adam update on one batch; returns the batch loss.
// Non-finite loss raises divergence-error.
double train_step(Model& model, const Batch& batch, const std::vector<int>& labels,
                  const TrainConfig& config, AdamState& state,
                  const std::vector<double>* teacher_logits = nullptr);

// Central-difference check over >= per_class sampled parameters in each layer
// class (conv kernels, biases, dense weights). Returns the max relative error
// |a - n| / max(|a| + |n|, 1e-6).
double grad_check(const Model& model, const Batch& batch, const std::vector<int>& labels,
                  double epsilon, std::size_t per_class = 200, std::uint64_t seed = 1234);

// Multiply-accumulate convention: conv 2*Cin*Cout*k*Lout, dense 2*in*out.
std::uint64_t conv_flops(std::size_t cin, std::size_t cout, std::size_t kernel,
                         std::size_t lout);
std::uint64_t count_flops(const ArchConfig& config);
std::uint64_t count_params(const ArchConfig& config);

// |d logit_argmax / d input| for a single row.
std::vector<double> input_gradient(const Model& model, const std::vector<double>& row);

// ---------------------------------------------------------------------------
// Checkpoints (.itnn): magic "ITNN", version u16, JSON header, named float32
// tensors, CRC32 footer.

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);
// config-error when the stored arch differs from `expected`.
Model load_checkpoint_as(const std::filesystem::path& path, const ArchConfig& expected);

// Generic container used by emotion models as well.
struct CheckpointFile {
    std::string header_json;
    std::vector<std::pair<std::string, Tensor>> tensors;
};
void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

// Reference architectures for the token decoder benchmark.
ArchConfig teacher_arch(std::size_t input_len, std::size_t classes);
ArchConfig student_arch(std::size_t input_len, std::size_t classes);

// ---------------------------------------------------------------------------
// Small dense MLP (input -> hidden... -> classes), sharing the loss/Adam
// machinery; used by the emotion module and as a linear-model testbed
// (empty hidden = plain linear classifier).

struct MlpConfig {
    std::size_t input = 0;
    std::vector<std::size_t> hidden;
    std::size_t classes = 0;
    bool operator==(const MlpConfig&) const = default;
};

struct Mlp {
    MlpConfig config;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

Mlp build_mlp(const MlpConfig& config, std::uint64_t seed);
std::vector<double> mlp_forward(const Mlp& mlp, const Batch& batch);

struct MlpBackpropResult {
    double loss = 0.0;
    std::vector<Tensor> grads;
    std::vector<double> input_grad;
};
MlpBackpropResult mlp_backprop(const Mlp& mlp, const Batch& batch, const std::vector<int>& labels,
                               bool want_input_grad = false);

struct MlpAdamState {
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};
MlpAdamState make_adam_state(const Mlp& mlp);
double mlp_train_step(Mlp& mlp, const Batch& batch, const std::vector<int>& labels,
                      const TrainConfig& config, MlpAdamState& state);
std::vector<double> mlp_input_gradient(const Mlp& mlp, const std::vector<double>& row);

std::string mlp_to_json(const MlpConfig& config);
MlpConfig mlp_from_json(const std::string& json_text);

}  // namespace ithroat::tinynet
