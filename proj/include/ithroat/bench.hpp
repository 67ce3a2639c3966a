#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ithroat/agents.hpp"
#include "ithroat/emotion.hpp"
#include "ithroat/runtime.hpp"
#include "ithroat/synthdata.hpp"
#include "ithroat/tokendec.hpp"

namespace ithroat::bench {

using synthdata::TokenDataset;
using synthdata::Vocabulary;

// Reference benchmark: fixed master seed, V = 20 words, 10 healthy speakers,
// 5 patients. 250 Hz keeps 144 ms tokens integral (36 samples) and divides
// down to the 50 Hz pulse working rate.
struct RefConfig {
    std::uint64_t master_seed = 20240144;
    std::uint32_t sample_rate_hz = 250;
    std::size_t vocab_size = 20;
    std::size_t n = 15;

    std::size_t healthy_speakers = 10;
    std::size_t healthy_sentences_per_speaker = 20;
    std::size_t words_per_sentence = 5;

    std::size_t patients = 5;
    std::size_t patient_train_reps = 25;   // drill repetitions per word, pooled
    std::size_t patient_test_sentences = 60;
    std::size_t patient_extra_sentences = 60;  // continuous sessions for distillation

    double snr_db = 20.0;
    double kappa = 0.01;

    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::size_t pretrain_epochs = 3;
    std::size_t finetune_epochs = 2;
    std::size_t scratch_epochs = 2;
    std::size_t distill_epochs = 4;

    std::size_t emotion_train_windows = 120;  // per class
    std::size_t emotion_test_windows = 60;

    std::size_t tsa_sentences = 200;
    double tsa_corruption = 0.08;

    std::size_t token_len() const {
        return sigcore::token_len_samples(sample_rate_hz);
    }
    std::size_t input_len() const { return n * token_len(); }
    std::size_t classes() const { return vocab_size + 1; }
};

Vocabulary ref_vocab(const RefConfig& cfg);
tinynet::ArchConfig ref_teacher_arch(const RefConfig& cfg);
tinynet::ArchConfig ref_student_arch(const RefConfig& cfg);

// Dataset builders (deterministic in the master seed).
TokenDataset healthy_dataset(const RefConfig& cfg);
TokenDataset patient_pool(const RefConfig& cfg);      // one-word drill sessions, grouped
TokenDataset patient_test_set(const RefConfig& cfg);  // continuous sentences
TokenDataset distill_set(const RefConfig& cfg);       // drills + continuous sessions

// Pure pulse windows at the 50 Hz working rate, labeled.
std::vector<sigcore::PulseWindow> emotion_windows(const RefConfig& cfg, std::size_t per_class,
                                                  std::uint64_t salt);

// Pulse windows cut from full sessions with concurrent speech at crosstalk
// fraction kappa; identical generator draws across kappa values.
std::vector<sigcore::PulseWindow> crosstalk_windows(const RefConfig& cfg, double kappa,
                                                    std::size_t sessions, std::uint64_t salt);

// Independent O(n^2) DFT used as the spectral oracle.
std::vector<std::complex<double>> reference_dft(const std::vector<double>& x, std::size_t nfft);

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

struct BenchOptions {
    std::filesystem::path workdir;
    std::vector<int> only;  // empty = all criteria
    bool reuse_checkpoints = false;
};

// Runs the reference acceptance criteria (1..12), printing one line per
// criterion. Trained checkpoints land in workdir for reuse across criteria.
std::vector<CriterionResult> run_criteria(const RefConfig& cfg, const BenchOptions& options);

bool all_passed(const std::vector<CriterionResult>& results);

}  // namespace ithroat::bench
