#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ksim/data.hpp"
#include "ksim/losses.hpp"
#include "ksim/metrics.hpp"
#include "ksim/model.hpp"
#include "ksim/parallel.hpp"

namespace ksim {

struct FedConfig {
    std::size_t num_clients = 100;
    double fraction = 0.1;
    std::size_t rounds = 1000;
    std::size_t local_epochs = 3;
    std::size_t batch_size = 50;
    double lr = 0.01;
    double weight_decay = 3e-4;
    LossConfig loss;
    std::uint64_t seed = 0;
    std::size_t diagnostic_clients = 10;  // highest-noise clients tracked per round
    std::size_t diagnostic_probe = 512;   // samples per tracked client

    /// Throws ConfigError with the offending field.
    void validate() const;
};

/// max(ceil(F * N), 1) distinct clients, ascending, drawn from the round's stream.
std::vector<std::size_t> select_clients(std::size_t num_clients, double fraction, std::uint64_t seed,
                                        std::size_t round);

/// Splits `n` positions into consecutive batches of `batch_size`; a trailing
/// batch with `k` or fewer rows is folded into the one before it.
std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch_size, std::size_t k);

struct ClientDiagnostics {
    std::size_t steps = 0;
    double mean_loss = 0.0;
    double mean_ce = 0.0;
    std::optional<double> mean_regularizer;
};

struct ClientResult {
    ModelParams params;
    std::size_t shard_size = 0;
    ClientDiagnostics diagnostics;
};

/// Training data visible to one client.
struct ClientData {
    const Dataset& train;
    std::span<const std::size_t> shard;
    const EmbeddingStore* embeddings = nullptr;  // rows aligned with `train`
};

/// E epochs of minibatch SGD from `global`. Shuffles come from the stream of
/// (seed, client, round, epoch).
ClientResult client_update(const ModelParams& global, const ClientData& data, const FedConfig& cfg,
                           std::size_t client, std::size_t round);

struct WeightedParams {
    const ModelParams* params = nullptr;
    std::size_t shard_size = 0;
};

/// Size-weighted average; the last weight is 1 minus the others.
ModelParams aggregate(std::span<const WeightedParams> updates);

struct FederationInputs {
    const Dataset& train;
    const Dataset& test;
    const Partition& partition;
    const EmbeddingStore* embeddings = nullptr;
};

struct FederationResult {
    ModelParams final_params;
    std::vector<RoundReport> history;  // history[0] evaluates the initial model
    std::size_t best_accuracy_round = 0;
    std::size_t best_macro_f1_round = 0;

    double best_accuracy() const { return history.at(best_accuracy_round).test_accuracy; }
    double best_macro_f1() const { return history.at(best_macro_f1_round).test_macro_f1; }
};

using RoundObserver = std::function<void(std::size_t round, const ModelParams& global)>;

/// Startup checks: shapes, embeddings, and shard sizes against the loss.
void check_federation(const FederationInputs& in, const MlpSpec& spec, const FedConfig& cfg);

/// The server loop. Selected clients train concurrently under
/// Execution::parallel; results are aggregated in ascending client order, so
/// both execution modes produce bitwise-identical parameters.
FederationResult run_federation(const FederationInputs& in, const MlpSpec& spec, const FedConfig& cfg,
                                Execution exec = Execution::parallel, const RoundObserver& observer = {});

/// Clients tracked for diagnostics: the `count` noisiest by realized rate
/// (ties by id), at most `probe` evenly spaced samples each. Empty if no
/// client has noise.
std::vector<std::size_t> diagnostic_probe(const Dataset& train, const Partition& partition, std::size_t count,
                                          std::size_t probe);

}  // namespace ksim
