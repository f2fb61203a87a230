#include "ksim/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ksim/rng.hpp"

namespace ksim {

Dataset Dataset::make(Matrix features, std::vector<Label> labels, std::size_t num_classes, Split split) {
    Dataset d;
    d.features = std::move(features);
    d.clean_labels = std::move(labels);
    d.noisy_labels = d.clean_labels;
    d.noise_mask.assign(d.clean_labels.size(), 0);
    d.num_classes = num_classes;
    d.split = split;
    d.validate();
    return d;
}

void Dataset::set_noisy_labels(std::vector<Label> labels) {
    if (labels.size() != clean_labels.size())
        throw std::invalid_argument("noisy label count " + std::to_string(labels.size()) + " != " +
                                    std::to_string(clean_labels.size()));
    noisy_labels = std::move(labels);
    noise_mask.resize(noisy_labels.size());
    for (std::size_t i = 0; i < noisy_labels.size(); ++i) noise_mask[i] = noisy_labels[i] != clean_labels[i];
}

void Dataset::validate() const {
    const std::size_t n = clean_labels.size();
    if (features.rows() != n)
        throw std::invalid_argument("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                                    std::to_string(n) + " labels");
    if (noisy_labels.size() != n || noise_mask.size() != n)
        throw std::invalid_argument("dataset label arrays differ in length");
    if (num_classes < 2) throw std::invalid_argument("dataset needs at least 2 classes");
    for (std::size_t i = 0; i < n; ++i) {
        if (clean_labels[i] >= num_classes || noisy_labels[i] >= num_classes)
            throw std::invalid_argument("label id out of range at sample " + std::to_string(i));
        if ((noise_mask[i] != 0) != (clean_labels[i] != noisy_labels[i]))
            throw std::invalid_argument("noise mask inconsistent at sample " + std::to_string(i));
        if (split == Split::test && noise_mask[i])
            throw std::invalid_argument("test split carries label noise");
    }
    if (!features.all_finite()) throw std::invalid_argument("dataset features contain non-finite values");
}

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
    Dataset d;
    d.features = gather_rows(dataset.features, indices);
    d.num_classes = dataset.num_classes;
    d.split = dataset.split;
    for (std::size_t i : indices) {
        d.clean_labels.push_back(dataset.clean_labels[i]);
        d.noisy_labels.push_back(dataset.noisy_labels[i]);
        d.noise_mask.push_back(dataset.noise_mask[i]);
    }
    return d;
}

void Partition::validate(std::size_t dataset_size) const {
    if (shards.empty()) throw std::invalid_argument("partition has no clients");
    std::vector<std::uint8_t> seen(dataset_size, 0);
    for (std::size_t c = 0; c < shards.size(); ++c) {
        if (shards[c].empty()) throw std::invalid_argument("client " + std::to_string(c) + " has no samples");
        for (std::size_t i : shards[c]) {
            if (i >= dataset_size) throw std::invalid_argument("partition index out of range");
            if (seen[i]++) throw std::invalid_argument("sample " + std::to_string(i) + " assigned twice");
        }
    }
}

const char* to_string(EmbeddingSource s) {
    switch (s) {
        case EmbeddingSource::file: return "file";
        case EmbeddingSource::synthetic: return "synthetic";
        case EmbeddingSource::random_model: return "random-model";
    }
    return "unknown";
}

EmbeddingStore EmbeddingStore::from_raw(const Matrix& raw, EmbeddingSource source) {
    if (!raw.all_finite()) throw std::invalid_argument("embeddings contain non-finite values");
    EmbeddingStore s;
    s.embeddings = normalize_rows(raw);
    s.source = source;
    s.zero_rows.resize(raw.rows());
    for (std::size_t i = 0; i < raw.rows(); ++i) s.zero_rows[i] = norm2(raw.row(i)) == 0.0;
    return s;
}

void EmbeddingStore::check_aligned(const Dataset& dataset) const {
    if (size() != dataset.size())
        throw AlignmentError("embedding store has " + std::to_string(size()) + " rows but dataset has " +
                             std::to_string(dataset.size()) + " samples");
}

Partition partition_iid(std::size_t dataset_size, std::size_t num_clients, std::uint64_t seed) {
    if (num_clients == 0) throw std::invalid_argument("partition_iid: need at least one client");
    if (num_clients > dataset_size)
        throw std::invalid_argument("partition_iid: more clients than samples");
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed, {tag(Stream::partition)});
    std::shuffle(order.begin(), order.end(), rng);

    Partition p;
    p.shards.resize(num_clients);
    const std::size_t base = dataset_size / num_clients;
    const std::size_t extra = dataset_size % num_clients;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < num_clients; ++c) {
        const std::size_t n = base + (c < extra ? 1 : 0);
        p.shards[c].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                           order.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
    }
    return p;
}

Partition partition_noniid(std::span<const Label> labels, std::size_t num_classes, std::size_t num_clients,
                           double p_bernoulli, double alpha_dirichlet, std::uint64_t seed) {
    if (num_clients == 0) throw std::invalid_argument("partition_noniid: need at least one client");
    if (!(p_bernoulli > 0.0 && p_bernoulli <= 1.0))
        throw std::invalid_argument("partition_noniid: bernoulli p must be in (0, 1]");
    if (!(alpha_dirichlet > 0.0)) throw std::invalid_argument("partition_noniid: dirichlet alpha must be > 0");
    if (num_clients > labels.size())
        throw std::invalid_argument("partition_noniid: more clients than samples");

    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) throw std::invalid_argument("partition_noniid: label out of range");
        by_class[labels[i]].push_back(i);
    }

    Rng rng = make_rng(seed, {tag(Stream::partition)});
    std::bernoulli_distribution present(p_bernoulli);
    std::gamma_distribution<double> gamma(alpha_dirichlet, 1.0);

    Partition p;
    p.shards.resize(num_clients);
    for (std::size_t cls = 0; cls < num_classes; ++cls) {
        std::vector<std::size_t> owners;
        while (owners.empty()) {
            for (std::size_t c = 0; c < num_clients; ++c)
                if (present(rng)) owners.push_back(c);
        }
        std::vector<double> share(owners.size());
        double total = 0.0;
        for (double& s : share) total += (s = gamma(rng));
        if (!(total > 0.0)) {
            // alpha so small that every gamma draw underflowed
            std::fill(share.begin(), share.end(), 0.0);
            share[0] = 1.0;
            total = 1.0;
        }

        auto& members = by_class[cls];
        std::shuffle(members.begin(), members.end(), rng);
        const double n = static_cast<double>(members.size());
        double cumulative = 0.0;
        std::size_t start = 0;
        for (std::size_t k = 0; k < owners.size(); ++k) {
            cumulative += share[k];
            const std::size_t end =
                k + 1 == owners.size() ? members.size()
                                       : std::min(members.size(), static_cast<std::size_t>(std::llround(cumulative / total * n)));
            auto& shard = p.shards[owners[k]];
            for (std::size_t i = start; i < std::max(start, end); ++i) shard.push_back(members[i]);
            start = std::max(start, end);
        }
    }

    for (std::size_t c = 0; c < num_clients; ++c) {
        if (!p.shards[c].empty()) continue;
        auto largest = std::max_element(p.shards.begin(), p.shards.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
        p.shards[c].push_back(largest->back());
        largest->pop_back();
    }
    for (auto& shard : p.shards) std::sort(shard.begin(), shard.end());
    return p;
}

void NoiseConfig::validate() const {
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("noise.rho must be in [0, 1]");
    if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("noise.tau must be in [0, 1)");
}

NoisyData inject_noise(const Dataset& dataset, const Partition& partition, const NoiseConfig& cfg) {
    cfg.validate();
    partition.validate(dataset.size());
    NoisyData out;
    out.dataset = dataset;
    std::vector<Label> noisy = dataset.clean_labels;
    out.clients.resize(partition.num_clients());

    for (std::size_t c = 0; c < partition.num_clients(); ++c) {
        Rng rng = make_rng(cfg.seed, {tag(Stream::noise), c});
        ClientNoise& info = out.clients[c];
        info.noisy = std::bernoulli_distribution(cfg.rho)(rng);
        if (!info.noisy) continue;
        info.nominal_rate = std::uniform_real_distribution<double>(cfg.tau, 1.0)(rng);

        std::vector<std::size_t> shard = partition.shards[c];
        const auto count = std::min<std::size_t>(
            shard.size(), static_cast<std::size_t>(std::llround(info.nominal_rate * static_cast<double>(shard.size()))));
        // partial Fisher-Yates: first `count` entries become a uniform sample without replacement
        for (std::size_t k = 0; k < count; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, shard.size() - 1);
            std::swap(shard[k], shard[pick(rng)]);
        }
        std::uniform_int_distribution<unsigned> label(0, static_cast<unsigned>(dataset.num_classes - 1));
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t i = shard[k];
            noisy[i] = static_cast<Label>(label(rng));
            if (noisy[i] != dataset.clean_labels[i]) ++info.changed;
        }
        info.resampled = count;
    }
    out.dataset.set_noisy_labels(std::move(noisy));
    return out;
}

}  // namespace ksim
