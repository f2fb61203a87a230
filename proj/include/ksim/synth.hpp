#pragma once

#include <cstddef>
#include <cstdint>

#include "ksim/data.hpp"
#include "ksim/model.hpp"

namespace ksim {

/// Gaussian sub-cluster benchmark. Every class owns several sub-clusters in a
/// latent space; the SSL view is the latent itself, the classifier view is a
/// random linear projection of the latent plus isotropic noise.
struct SynthConfig {
    std::size_t num_classes = 10;
    std::size_t subclusters_per_class = 3;
    std::size_t samples = 10000;
    std::size_t input_dim = 128;
    std::size_t ssl_dim = 32;
    double class_spread = 3.0;      // std of class centers, units of within-cluster sigma
    double subcluster_spread = 1.5; // std of sub-cluster offsets around their class center
    double feature_noise = 4.0;     // std of the noise added to projected features
    double test_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticData {
    Dataset train;
    Dataset test;
    EmbeddingStore train_embeddings;
    EmbeddingStore test_embeddings;
    std::vector<std::size_t> train_subcluster;  // generating sub-cluster per train sample
};

SyntheticData synth_clusters(const SynthConfig& cfg);

/// Normalized extractor output of a freshly initialized MLP.
EmbeddingStore random_model_embeddings(const Dataset& dataset, const MlpSpec& spec, std::uint64_t seed);

}  // namespace ksim
