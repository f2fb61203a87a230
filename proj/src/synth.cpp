#include "ksim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ksim/rng.hpp"

namespace ksim {

void SynthConfig::validate() const {
    if (num_classes < 1 || subclusters_per_class < 1 || samples < 1 || input_dim < 1 || ssl_dim < 1)
        throw std::invalid_argument("synthetic generator: all counts must be >= 1");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("synthetic generator: test_fraction must be in [0, 1)");
    if (class_spread < 0.0 || subcluster_spread < 0.0 || feature_noise < 0.0)
        throw std::invalid_argument("synthetic generator: spreads must be non-negative");
}

SyntheticData synth_clusters(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed, {tag(Stream::synth)});
    std::normal_distribution<double> normal(0.0, 1.0);

    const std::size_t num_sub = cfg.num_classes * cfg.subclusters_per_class;
    Matrix class_center(cfg.num_classes, cfg.ssl_dim);
    for (double& v : class_center.values()) v = cfg.class_spread * normal(rng);
    Matrix sub_center(num_sub, cfg.ssl_dim);
    for (std::size_t s = 0; s < num_sub; ++s) {
        const std::size_t cls = s / cfg.subclusters_per_class;
        for (std::size_t d = 0; d < cfg.ssl_dim; ++d)
            sub_center(s, d) = class_center(cls, d) + cfg.subcluster_spread * normal(rng);
    }
    Matrix projection(cfg.ssl_dim, cfg.input_dim);
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(cfg.ssl_dim));
    for (double& v : projection.values()) v = proj_scale * normal(rng);

    // balanced sub-cluster assignment, then a shuffle decides the split
    std::vector<std::size_t> order(cfg.samples);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    Matrix latent(cfg.samples, cfg.ssl_dim);
    std::vector<std::size_t> sub_of(cfg.samples);
    for (std::size_t i = 0; i < cfg.samples; ++i) {
        sub_of[i] = i % num_sub;
        for (std::size_t d = 0; d < cfg.ssl_dim; ++d) latent(i, d) = sub_center(sub_of[i], d) + normal(rng);
    }
    Matrix features = matmul(latent, projection);
    for (double& v : features.values()) v += cfg.feature_noise * normal(rng);

    const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(cfg.samples)));
    const std::size_t n_train = cfg.samples - n_test;
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

    auto build = [&](const std::vector<std::size_t>& idx, Split split) {
        std::vector<Label> labels;
        labels.reserve(idx.size());
        for (std::size_t i : idx) labels.push_back(static_cast<Label>(sub_of[i] / cfg.subclusters_per_class));
        return Dataset::make(gather_rows(features, idx), std::move(labels), std::max<std::size_t>(cfg.num_classes, 2),
                             split);
    };

    SyntheticData out;
    out.train = build(train_idx, Split::train);
    out.test = build(test_idx, Split::test);
    out.train_embeddings = EmbeddingStore::from_raw(gather_rows(latent, train_idx), EmbeddingSource::synthetic);
    out.test_embeddings = EmbeddingStore::from_raw(gather_rows(latent, test_idx), EmbeddingSource::synthetic);
    for (std::size_t i : train_idx) out.train_subcluster.push_back(sub_of[i]);
    return out;
}

EmbeddingStore random_model_embeddings(const Dataset& dataset, const MlpSpec& spec, std::uint64_t seed) {
    MlpSpec s = spec;
    s.input_dim = dataset.input_dim();
    s.adapter_dim = 0;
    const ModelParams params = init_params(s, derive_seed(seed, {tag(Stream::random_embed)}));
    return EmbeddingStore::from_raw(extract_features(params, dataset.features), EmbeddingSource::random_model);
}

}  // namespace ksim
