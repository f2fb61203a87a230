#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ksim/data.hpp"
#include "ksim/losses.hpp"
#include "ksim/metrics.hpp"
#include "ksim/model.hpp"
#include "support.hpp"

using namespace ksim;
using namespace ksim::testing;

namespace {

const MlpSpec kSmall{5, {4, 3}, 3, 2};

double row_lse(std::span<const double> z) {
    double top = z[0];
    for (double v : z) top = std::max(top, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - top);
    return top + std::log(s);
}

// Sample-local loss of one row written from the definitions, with the model
// evaluated through the plain forward pass.
double one_row_loss(const ModelParams& p, const Matrix& x, Label y, const LossConfig& cfg, const Matrix* ssl) {
    const ForwardOutput f = forward(p, x);
    std::vector<double> z(f.logits.row(0).begin(), f.logits.row(0).end());
    if (cfg.method == Method::logitclip) {
        const double n = norm2(z);
        if (n > cfg.logitclip_bound)
            for (double& v : z) v *= cfg.logitclip_bound / n;
    }
    const double ce = row_lse(z) - z[y];
    switch (cfg.method) {
        case Method::symce: {
            const double py = std::exp(-ce);
            return cfg.symce_alpha * ce - cfg.symce_beta * cfg.rce_log_clamp * (1.0 - py);
        }
        case Method::akd: {
            const Matrix a = apply_adapter(p, f.features);
            double s = 0.0;
            for (std::size_t j = 0; j < a.cols(); ++j) s += std::abs(a(0, j) - (*ssl)(0, j));
            return ce + cfg.akd_weight * s / static_cast<double>(a.cols());
        }
        default:
            return ce;
    }
}

double fd_param_norm(const ModelParams& p, const Matrix& x, Label y, const LossConfig& cfg, const Matrix* ssl) {
    std::vector<double> flat = p.flatten();
    double sq = 0.0;
    for (std::size_t e = 0; e < flat.size(); ++e) {
        const double keep = flat[e];
        flat[e] = keep + kFdStep;
        const double up = one_row_loss(ModelParams::unflatten(p.spec(), flat), x, y, cfg, ssl);
        flat[e] = keep - kFdStep;
        const double down = one_row_loss(ModelParams::unflatten(p.spec(), flat), x, y, cfg, ssl);
        flat[e] = keep;
        const double g = (up - down) / (2.0 * kFdStep);
        sq += g * g;
    }
    return std::sqrt(sq);
}

ModelParams random_params(const MlpSpec& spec, std::mt19937_64& rng) {
    ModelParams p = init_params(spec, rng());
    std::normal_distribution<double> n(0.0, 0.3);
    for (double& v : p.flat()) v += n(rng);
    return p;
}

}  // namespace

TEST_CASE("parameter layout is contiguous") {
    const ParamLayout l = layout_for(kSmall);
    CHECK(l.extractor.size() == 2);
    CHECK(l.extractor[0].weight_offset == 0);
    CHECK(l.extractor[0].bias_offset == 20);
    CHECK(l.extractor[1].weight_offset == 24);
    CHECK(l.extractor_size == 24 + 12 + 3);
    CHECK(l.head.weight_offset == l.extractor_size);
    REQUIRE(l.adapter.has_value());
    CHECK(l.adapter->out == 2);
    CHECK(l.total == 39 + 9 + 3 + 6 + 2);
    CHECK(layout_for({5, {4, 3}, 3, 0}).total == 39 + 12);
    CHECK_THROWS(layout_for({0, {4}, 3, 0}));
    CHECK_THROWS(layout_for({5, {}, 3, 0}));
    CHECK_THROWS(layout_for({5, {4, 0}, 3, 0}));
    CHECK_THROWS(layout_for({5, {4}, 1, 0}));
    CHECK_THROWS_AS(ModelParams::unflatten(kSmall, std::vector<double>(3)), DimensionError);
}

TEST_CASE("initialization bounds, zero biases and determinism") {
    const ModelParams p = init_params(kSmall, 9);
    CHECK(p == init_params(kSmall, 9));
    CHECK_FALSE(p == init_params(kSmall, 10));
    const ParamLayout& l = p.layout();
    std::vector<LayerSlice> all = l.extractor;
    all.push_back(l.head);
    all.push_back(*l.adapter);
    for (const auto& s : all) {
        const double a = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
        const Matrix w_s = p.weight(s), b_s = p.bias(s);
        for (double w : w_s.values()) {
            CHECK(w > -a);
            CHECK(w < a);
        }
        for (double b : b_s.values()) CHECK(b == 0.0);
    }
}

TEST_CASE("forward matches a hand computation") {
    ModelParams p = ModelParams::zeros({2, {2}, 2, 0});
    // hidden W = [[1, -1], [2, 0]], b = [0, 0.5]; head W = [[1, 0], [0, -1]], b = [0.25, 0]
    std::vector<double> flat{1, -1, 2, 0, 0, 0.5, 1, 0, 0, -1, 0.25, 0};
    p = ModelParams::unflatten(p.spec(), flat);
    const ForwardOutput f = forward(p, Matrix{{1, 1}, {-1, 0}});
    // row 0: pre = [3, -0.5] -> relu [3, 0]; row 1: pre = [-1, 1.5] -> [0, 1.5]
    CHECK(f.features == Matrix{{3, 0}, {0, 1.5}});
    CHECK(f.logits == Matrix{{3.25, 0}, {0.25, -1.5}});
    CHECK_THROWS_AS(forward(p, Matrix(1, 3)), DimensionError);
    CHECK_THROWS_AS(apply_adapter(p, f.features), DimensionError);
}

TEST_CASE("taped forward equals the plain forward") {
    std::mt19937_64 rng(2);
    const ModelParams p = random_params(kSmall, rng);
    const Matrix x = random_matrix(rng, 7, 5);
    GradTape tape;
    TapedModel t = record_forward(tape, p, x);
    const ForwardOutput f = forward(p, x);
    CHECK(tape.value(t.features) == f.features);
    CHECK(tape.value(t.logits) == f.logits);
    CHECK(tape.value(t.adapter(tape, p)) == apply_adapter(p, f.features));
    CHECK(t.adapter(tape, p) == t.adapter(tape, p));
    CHECK(t.slices.size() == 4);
    CHECK(t.layer_inputs.size() == 4);
}

TEST_CASE("collected gradients match finite differences of the batch loss") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const ModelParams p = random_params(kSmall, rng);
        const Matrix x = random_matrix(rng, 6, 5);
        const Matrix ssl = random_matrix(rng, 6, 2);
        const std::vector<Label> y{0, 1, 2, 2, 1, 0};
        GradTape tape;
        TapedModel t = record_forward(tape, p, x);
        const NodeId loss = tape.add(record_ce(tape, t.logits, y), record_akd(tape, t.adapter(tape, p), ssl, 2.0));
        const std::vector<double> analytic =
            collect_gradients(t, tape.backward(loss, Matrix(6, 1, 1.0)), p.layout());

        LossConfig cfg;
        cfg.method = Method::akd;
        cfg.akd_weight = 2.0;
        auto total = [&](const Matrix& flat) {
            const ModelParams q = ModelParams::unflatten(p.spec(), {flat.values().begin(), flat.values().end()});
            double s = 0.0;
            for (std::size_t i = 0; i < 6; ++i) {
                const std::vector<std::size_t> row{i};
                const Matrix sr = gather_rows(ssl, row);
                s += one_row_loss(q, gather_rows(x, row), y[i], cfg, &sr);
            }
            return s;
        };
        const Matrix flat(1, analytic.size(), p.flatten());
        CHECK(relative_error(numeric_gradient(total, flat).values(), analytic) < kFdRelTol);
    }
}

TEST_CASE("forward stays finite on random inputs") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const ModelParams p = init_params({16, {32, 8}, 10, 4}, rng());
        const Matrix x = random_matrix(rng, 20, 16, 10.0);
        const ForwardOutput f = forward(p, x);
        CHECK(f.logits.all_finite());
        CHECK(apply_adapter(p, f.features).all_finite());
    }
}

TEST_CASE("per-sample parameter gradient norms match one-row finite differences") {
    std::mt19937_64 rng(5);
    const ModelParams p = random_params(kSmall, rng);
    Dataset d = Dataset::make(random_matrix(rng, 8, 5), {0, 1, 2, 0, 1, 2, 0, 1}, 3, Split::train);
    d.set_noisy_labels({0, 2, 2, 0, 0, 2, 1, 1});
    const EmbeddingStore emb = EmbeddingStore::from_raw(random_matrix(rng, 8, 2), EmbeddingSource::file);
    const std::vector<std::size_t> probe{6, 1, 3, 4};

    for (Method m : {Method::fedavg_ce, Method::ours, Method::symce, Method::logitclip, Method::akd}) {
        LossConfig cfg;
        cfg.method = m;
        cfg.logitclip_bound = 0.5;
        const std::vector<double> norms = per_sample_param_gradnorms(p, d, probe, cfg, &emb);
        REQUIRE(norms.size() == probe.size());
        for (std::size_t k = 0; k < probe.size(); ++k) {
            const std::vector<std::size_t> row{probe[k]};
            const Matrix ssl = gather_rows(emb.embeddings, row);
            const double fd = fd_param_norm(p, gather_rows(d.features, row), d.noisy_labels[probe[k]], cfg, &ssl);
            INFO(to_string(m), " sample ", probe[k]);
            CHECK(norms[k] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
    CHECK(per_sample_param_gradnorms(p, d, {}, LossConfig{}).empty());
}
