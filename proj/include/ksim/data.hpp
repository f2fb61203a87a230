#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ksim/matrix.hpp"

namespace ksim {

using Label = std::uint16_t;

enum class Split : std::uint8_t { train, test };

/// Features with clean labels, observed (possibly noisy) labels, and the
/// ground-truth mask of which observed labels differ from the clean ones.
/// The mask is for diagnostics only; training reads noisy_labels.
struct Dataset {
    Matrix features;
    std::vector<Label> clean_labels;
    std::vector<Label> noisy_labels;
    std::vector<std::uint8_t> noise_mask;
    std::size_t num_classes = 0;
    Split split = Split::train;

    /// Noise-free dataset (observed labels = clean labels).
    static Dataset make(Matrix features, std::vector<Label> labels, std::size_t num_classes, Split split);

    std::size_t size() const { return clean_labels.size(); }
    std::size_t input_dim() const { return features.cols(); }
    /// Replaces observed labels and recomputes the mask.
    void set_noisy_labels(std::vector<Label> labels);
    /// Throws std::invalid_argument when an invariant is broken.
    void validate() const;
};

/// Disjoint, nonempty per-client index lists into a training Dataset.
struct Partition {
    std::vector<std::vector<std::size_t>> shards;

    std::size_t num_clients() const { return shards.size(); }
    std::size_t shard_size(std::size_t client) const { return shards.at(client).size(); }
    void validate(std::size_t dataset_size) const;
};

enum class EmbeddingSource : std::uint8_t { file, synthetic, random_model };

const char* to_string(EmbeddingSource s);

/// Frozen SSL representation per training sample, L2-normalized row-wise.
struct EmbeddingStore {
    Matrix embeddings;
    std::vector<std::uint8_t> zero_rows;  // 1 where the raw row was all zero
    EmbeddingSource source = EmbeddingSource::file;

    static EmbeddingStore from_raw(const Matrix& raw, EmbeddingSource source);
    std::size_t size() const { return embeddings.rows(); }
    std::size_t dim() const { return embeddings.cols(); }
    /// Throws AlignmentError unless one row exists per dataset sample.
    void check_aligned(const Dataset& dataset) const;
};

class AlignmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Partition partition_iid(std::size_t dataset_size, std::size_t num_clients, std::uint64_t seed);

/// Per class: Bernoulli(p) presence over clients (redrawn while empty), then a
/// Dirichlet(alpha) split of that class's samples across the present clients.
/// Clients left empty receive one sample from the currently largest client.
Partition partition_noniid(std::span<const Label> labels, std::size_t num_classes, std::size_t num_clients,
                           double p_bernoulli, double alpha_dirichlet, std::uint64_t seed);

struct NoiseConfig {
    double rho = 0.0;  // probability that a client is noisy
    double tau = 0.0;  // lower end of the per-client noise rate
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClientNoise {
    bool noisy = false;
    double nominal_rate = 0.0;   // mu_n, 0 for clean clients
    std::size_t resampled = 0;   // labels redrawn
    std::size_t changed = 0;     // redrawn labels that differ from the clean label
};

struct NoisyData {
    Dataset dataset;
    std::vector<ClientNoise> clients;
};

/// Noisy clients redraw round(mu_n * |D_n|) of their labels uniformly over all
/// classes (the clean class included), mu_n ~ U(tau, 1). Each client has its
/// own stream so the result does not depend on traversal order.
NoisyData inject_noise(const Dataset& dataset, const Partition& partition, const NoiseConfig& cfg);

/// Rows of `dataset` selected by `indices`.
Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace ksim
