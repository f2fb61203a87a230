#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ksim/data.hpp"
#include "ksim/losses.hpp"
#include "ksim/matrix.hpp"
#include "ksim/model.hpp"
#include "ksim/parallel.hpp"

namespace ksim {

/// Row-wise argmax; the first maximal column wins.
std::vector<Label> predict(const Matrix& logits);

/// Throws std::invalid_argument on an empty set.
double accuracy(const Matrix& logits, std::span<const Label> labels);

/// Unweighted mean of per-class F1 over all `num_classes` classes. A class with
/// no true positives (including one absent from both predictions and labels)
/// scores 0.
double macro_f1(const Matrix& logits, std::span<const Label> labels, std::size_t num_classes);
double macro_f1(std::span<const Label> predictions, std::span<const Label> labels, std::size_t num_classes);

struct Evaluation {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

/// Test-set evaluation against clean labels. The parallel path splits rows into
/// blocks; each row's logits are computed identically either way.
Evaluation evaluate(const ModelParams& params, const Dataset& dataset, Execution exec = Execution::serial);

/// Group means over the clean and noise-masked samples of a probe set. A group
/// with no members is reported as absent.
struct GroupMeans {
    std::optional<double> clean;
    std::optional<double> noisy;
    std::size_t clean_count = 0;
    std::size_t noisy_count = 0;
};

/// Mean per-sample CE against the observed labels, split by noise mask.
GroupMeans groupwise_ce(const ModelParams& params, const Dataset& dataset, std::span<const std::size_t> probe);

/// Mean L2 norm of the per-sample logit-layer gradient of the configured loss.
GroupMeans groupwise_gradnorm(const ModelParams& params, const Dataset& dataset, std::span<const std::size_t> probe,
                              const LossConfig& loss);

/// Per-sample L2 norm of the parameter gradient of the sample-local part of the
/// configured loss (everything but the batch-coupled contrastive term). Uses
/// |a (x) d| = |a| |d| per layer, so one batched backward pass suffices.
/// `embeddings` (rows aligned with `dataset`) is read only by the AKD term.
std::vector<double> per_sample_param_gradnorms(const ModelParams& params, const Dataset& dataset,
                                               std::span<const std::size_t> probe, const LossConfig& loss,
                                               const EmbeddingStore* embeddings = nullptr);

GroupMeans groupwise_param_gradnorm(const ModelParams& params, const Dataset& dataset,
                                    std::span<const std::size_t> probe, const LossConfig& loss,
                                    const EmbeddingStore* embeddings = nullptr);

/// Extractor output for every row of `dataset`, written as an FSKE file.
void dump_representations(const ModelParams& params, const Dataset& dataset, const std::filesystem::path& path);

struct RoundReport {
    std::size_t round = 0;
    double test_accuracy = 0.0;
    double test_macro_f1 = 0.0;
    std::vector<std::size_t> selected_clients;
    std::optional<double> ce_clean;
    std::optional<double> ce_noisy;
    std::optional<double> gradnorm_clean;
    std::optional<double> gradnorm_noisy;
    std::optional<double> param_gradnorm_clean;
    std::optional<double> param_gradnorm_noisy;
    std::optional<double> train_loss;         // mean total objective over local steps
    std::optional<double> train_ce;
    std::optional<double> train_regularizer;  // unweighted L_CL or AKD term

    friend bool operator==(const RoundReport&, const RoundReport&) = default;
};

void to_json(nlohmann::json& j, const RoundReport& r);
void from_json(const nlohmann::json& j, RoundReport& r);

}  // namespace ksim
