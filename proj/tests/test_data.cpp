#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ksim/data.hpp"
#include "support.hpp"

using namespace ksim;
using namespace ksim::testing;

namespace {

Dataset balanced(std::size_t per_class, std::size_t classes) {
    std::vector<Label> y;
    for (std::size_t i = 0; i < per_class * classes; ++i) y.push_back(static_cast<Label>(i % classes));
    return Dataset::make(Matrix(y.size(), 1), y, classes, Split::train);
}

void check_partition(const Partition& p, std::size_t n) {
    CHECK_NOTHROW(p.validate(n));
    std::size_t total = 0;
    for (const auto& s : p.shards) total += s.size();
    CHECK(total == n);
}

}  // namespace

TEST_CASE("IID partition covers every sample once with near-equal shards") {
    const Partition p = partition_iid(1003, 10, 1);
    check_partition(p, 1003);
    for (const auto& s : p.shards) CHECK((s.size() == 100 || s.size() == 101));
    CHECK(partition_iid(1003, 10, 1).shards == p.shards);
    CHECK(partition_iid(1003, 10, 2).shards != p.shards);
    CHECK_THROWS(partition_iid(3, 4, 0));
}

TEST_CASE("non-IID partition invariants") {
    const Dataset d = balanced(100, 10);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Partition p = partition_noniid(d.clean_labels, 10, 37, 0.7, 5.0, seed);
        check_partition(p, d.size());
        for (const auto& s : p.shards) CHECK(std::is_sorted(s.begin(), s.end()));
    }
    const Partition one = partition_noniid(d.clean_labels, 10, 1, 1.0, 5.0, 3);
    CHECK(one.shards[0].size() == d.size());
    // tiny p forces redraws of empty masks and donations to empty clients
    check_partition(partition_noniid(d.clean_labels, 10, 50, 0.01, 0.1, 4), d.size());
    CHECK_THROWS(partition_noniid(d.clean_labels, 10, 5, 0.0, 5.0, 0));
    CHECK_THROWS(partition_noniid(d.clean_labels, 10, 5, 0.7, 0.0, 0));
}

TEST_CASE("non-IID presence: each class is absent from about 30% of clients") {
    const Dataset d = balanced(1000, 10);
    const Partition p = partition_noniid(d.clean_labels, 10, 100, 0.7, 5.0, 12);
    std::size_t absent = 0;
    for (const auto& shard : p.shards) {
        std::set<Label> present;
        for (std::size_t i : shard) present.insert(d.clean_labels[i]);
        absent += 10 - present.size();
    }
    // Binomial(1000, 0.3): 99% interval 300 +- 2.576 * sqrt(210)
    const double half = 2.576 * std::sqrt(1000 * 0.3 * 0.7);
    CHECK(static_cast<double>(absent) > 300 - half);
    CHECK(static_cast<double>(absent) < 300 + half);
}

TEST_CASE("noise injection leaves clean clients, features and clean labels alone") {
    Dataset d = balanced(50, 10);
    for (std::size_t i = 0; i < d.size(); ++i) d.features(i, 0) = static_cast<double>(i);
    const Partition p = partition_iid(d.size(), 20, 1);
    const NoisyData out = inject_noise(d, p, {0.7, 0.5, 9});
    CHECK(out.dataset.features == d.features);
    CHECK(out.dataset.clean_labels == d.clean_labels);
    CHECK_NOTHROW(out.dataset.validate());
    for (std::size_t c = 0; c < p.num_clients(); ++c) {
        const ClientNoise& info = out.clients[c];
        std::size_t masked = 0;
        for (std::size_t i : p.shards[c]) masked += out.dataset.noise_mask[i];
        CHECK(masked == info.changed);
        if (!info.noisy) {
            CHECK(masked == 0);
            CHECK(info.resampled == 0);
        } else {
            CHECK(info.nominal_rate >= 0.5);
            CHECK(info.nominal_rate < 1.0);
            const auto expect = static_cast<std::size_t>(std::llround(info.nominal_rate * p.shards[c].size()));
            CHECK(info.resampled == expect);
        }
    }
    const NoisyData again = inject_noise(d, p, {0.7, 0.5, 9});
    CHECK(again.dataset.noisy_labels == out.dataset.noisy_labels);
}

TEST_CASE("rho = 0 gives clean labels everywhere") {
    const Dataset d = balanced(30, 10);
    const NoisyData out = inject_noise(d, partition_iid(d.size(), 10, 0), {0.0, 0.5, 1});
    CHECK(out.dataset.noisy_labels == d.clean_labels);
    CHECK(std::count(out.dataset.noise_mask.begin(), out.dataset.noise_mask.end(), 1) == 0);
}

TEST_CASE("rho = 1: realized over nominal rate is close to 1 - 1/M") {
    const Dataset d = balanced(100, 10);
    const Partition p = partition_iid(d.size(), 50, 2);
    const NoisyData out = inject_noise(d, p, {1.0, 0.5, 5});
    double ratio = 0.0;
    for (const auto& c : out.clients) ratio += static_cast<double>(c.changed) / static_cast<double>(c.resampled);
    ratio /= 50.0;
    CHECK(ratio >= 0.88);
    CHECK(ratio <= 0.92);
}

TEST_CASE("noisy client count at rho = 0.7 sits in the binomial 99% interval") {
    const Dataset d = balanced(100, 10);
    const Partition p = partition_iid(d.size(), 100, 3);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const NoisyData out = inject_noise(d, p, {0.7, 0.5, seed});
        const auto noisy = std::count_if(out.clients.begin(), out.clients.end(), [](const auto& c) { return c.noisy; });
        const double half = 2.576 * std::sqrt(100 * 0.7 * 0.3);
        CHECK(static_cast<double>(noisy) > 70 - half);
        CHECK(static_cast<double>(noisy) < 70 + half);
    }
}

TEST_CASE("a client's noise depends only on its own shard") {
    const Dataset d = balanced(40, 10);
    const Partition p = partition_iid(d.size(), 8, 4);
    const NoisyData a = inject_noise(d, p, {1.0, 0.2, 6});
    Partition other = p;
    std::swap(other.shards[0], other.shards[1]);
    const NoisyData b = inject_noise(d, other, {1.0, 0.2, 6});
    for (std::size_t c = 2; c < 8; ++c)
        for (std::size_t i : p.shards[c]) CHECK(a.dataset.noisy_labels[i] == b.dataset.noisy_labels[i]);
}

TEST_CASE("dataset invariants") {
    Dataset d = balanced(2, 3);
    CHECK_THROWS(d.set_noisy_labels({0, 1}));
    auto bad = d;
    bad.noise_mask[0] = 1;
    CHECK_THROWS(bad.validate());
    auto test = d;
    test.split = Split::test;
    std::vector<Label> flipped = d.clean_labels;
    flipped[0] = (flipped[0] + 1) % 3;
    test.set_noisy_labels(flipped);
    CHECK_THROWS(test.validate());
    CHECK_THROWS(Dataset::make(Matrix(2, 1), {0, 5}, 3, Split::train));
    const std::vector<std::size_t> pick{4, 1};
    const Dataset s = subset(d, pick);
    CHECK(s.size() == 2);
    CHECK(s.clean_labels == std::vector<Label>{d.clean_labels[4], d.clean_labels[1]});
    CHECK(NoiseConfig{0.5, 1.0, 0}.rho == 0.5);
    CHECK_THROWS(NoiseConfig({0.5, 1.0, 0}).validate());
    CHECK_THROWS(NoiseConfig({1.5, 0.0, 0}).validate());
}

TEST_CASE("partition validation catches overlap and empty clients") {
    Partition p;
    p.shards = {{0, 1}, {1}};
    CHECK_THROWS(p.validate(3));
    p.shards = {{0, 1}, {}};
    CHECK_THROWS(p.validate(3));
    p.shards = {{0, 7}};
    CHECK_THROWS(p.validate(3));
}
