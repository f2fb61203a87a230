#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ksim/knn.hpp"
#include "ksim/synth.hpp"
#include "support.hpp"

using namespace ksim;
using namespace ksim::testing;

namespace {

// Full-batch softmax regression, written out independently of the library's
// losses and model code.
double linear_probe_accuracy(const Dataset& train, const Dataset& test, int iterations, double lr) {
    const std::size_t d = train.input_dim(), m = train.num_classes, n = train.size();
    std::vector<double> w((d + 1) * m, 0.0);
    std::vector<double> p(m), grad(w.size());
    auto scores = [&](const Matrix& x, std::size_t i, std::vector<double>& out) {
        for (std::size_t c = 0; c < m; ++c) {
            double s = w[d * m + c];
            for (std::size_t j = 0; j < d; ++j) s += x(i, j) * w[j * m + c];
            out[c] = s;
        }
    };
    for (int it = 0; it < iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            scores(train.features, i, p);
            const double top = *std::max_element(p.begin(), p.end());
            double z = 0.0;
            for (double& v : p) z += (v = std::exp(v - top));
            for (std::size_t c = 0; c < m; ++c) {
                const double r = p[c] / z - (c == train.clean_labels[i] ? 1.0 : 0.0);
                for (std::size_t j = 0; j < d; ++j) grad[j * m + c] += r * train.features(i, j);
                grad[d * m + c] += r;
            }
        }
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * grad[k] / static_cast<double>(n);
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        scores(test.features, i, p);
        hits += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == test.clean_labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("generator shapes, balance and determinism") {
    SynthConfig cfg;
    cfg.samples = 600;
    cfg.seed = 3;
    const SyntheticData a = synth_clusters(cfg);
    CHECK(a.train.size() == 480);
    CHECK(a.test.size() == 120);
    CHECK(a.train.input_dim() == cfg.input_dim);
    CHECK(a.train_embeddings.dim() == cfg.ssl_dim);
    CHECK(a.train_embeddings.size() == a.train.size());
    CHECK_NOTHROW(a.train_embeddings.check_aligned(a.train));
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train_subcluster[i] / cfg.subclusters_per_class == a.train.clean_labels[i]);
        CHECK(norm2(a.train_embeddings.embeddings.row(i)) == doctest::Approx(1.0).epsilon(1e-12));
    }
    std::vector<std::size_t> count(cfg.num_classes, 0);
    for (Label y : a.train.clean_labels) ++count[y];
    for (Label y : a.test.clean_labels) ++count[y];
    for (std::size_t c : count) CHECK(c == 60);

    const SyntheticData b = synth_clusters(cfg);
    CHECK(b.train.features == a.train.features);
    CHECK(b.test.clean_labels == a.test.clean_labels);
    cfg.seed = 4;
    CHECK(synth_clusters(cfg).train.features != a.train.features);
}

TEST_CASE("a single class gives identical labels") {
    SynthConfig cfg;
    cfg.num_classes = 1;
    cfg.samples = 50;
    const SyntheticData s = synth_clusters(cfg);
    for (Label y : s.train.clean_labels) CHECK(y == 0);
    for (Label y : s.test.clean_labels) CHECK(y == 0);
}

TEST_CASE("well-separated classes give pure SSL neighbourhoods") {
    SynthConfig cfg;
    cfg.samples = 1500;
    cfg.class_spread = 6.0;
    cfg.subcluster_spread = 6.0;
    cfg.test_fraction = 0.0;
    cfg.seed = 11;
    const SyntheticData s = synth_clusters(cfg);
    const auto hoods = batch_neighborhoods(s.train_embeddings.embeddings, 4, Execution::parallel);
    std::size_t same = 0, total = 0;
    for (const auto& h : hoods)
        for (std::size_t j : h.positives) {
            same += s.train.clean_labels[j] == s.train.clean_labels[h.anchor];
            ++total;
        }
    CHECK(static_cast<double>(same) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("default benchmark is linearly learnable from the classifier view") {
    SynthConfig cfg;
    cfg.seed = 1;
    const SyntheticData s = synth_clusters(cfg);
    CHECK(linear_probe_accuracy(s.train, s.test, 150, 0.05) >= 0.90);
}

TEST_CASE("random-model embeddings are deterministic and normalized") {
    SynthConfig cfg;
    cfg.samples = 200;
    const SyntheticData s = synth_clusters(cfg);
    const MlpSpec spec{cfg.input_dim, {64, 32}, cfg.num_classes, 0};
    const EmbeddingStore a = random_model_embeddings(s.train, spec, 5);
    const EmbeddingStore b = random_model_embeddings(s.train, spec, 5);
    CHECK(a.embeddings == b.embeddings);
    CHECK(a.source == EmbeddingSource::random_model);
    CHECK(a.dim() == 32);
    CHECK(random_model_embeddings(s.train, spec, 6).embeddings != a.embeddings);
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.zero_rows[i] == 0) CHECK(norm2(a.embeddings.row(i)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("generator validation") {
    SynthConfig cfg;
    cfg.test_fraction = 1.0;
    CHECK_THROWS(synth_clusters(cfg));
    cfg = SynthConfig{};
    cfg.feature_noise = -1.0;
    CHECK_THROWS(synth_clusters(cfg));
    cfg = SynthConfig{};
    cfg.ssl_dim = 0;
    CHECK_THROWS(synth_clusters(cfg));
}
