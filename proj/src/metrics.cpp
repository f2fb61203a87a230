#include "ksim/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "ksim/io.hpp"

namespace ksim {

std::vector<Label> predict(const Matrix& logits) {
    std::vector<Label> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto r = logits.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < r.size(); ++j)
            if (r[j] > r[best]) best = j;
        out[i] = static_cast<Label>(best);
    }
    return out;
}

double accuracy(const Matrix& logits, std::span<const Label> labels) {
    if (labels.empty()) throw std::invalid_argument("accuracy of an empty set");
    if (labels.size() != logits.rows()) throw DimensionError("accuracy", "label count differs from logit rows");
    const auto pred = predict(logits);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double macro_f1(std::span<const Label> predictions, std::span<const Label> labels, std::size_t num_classes) {
    if (labels.empty()) throw std::invalid_argument("macro F1 of an empty set");
    if (predictions.size() != labels.size()) throw DimensionError("macro_f1", "prediction count differs from labels");
    if (num_classes == 0) throw std::invalid_argument("macro F1 needs at least one class");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] >= num_classes || labels[i] >= num_classes)
            throw std::invalid_argument("macro F1: class id out of range");
        if (predictions[i] == labels[i]) {
            ++tp[labels[i]];
        } else {
            ++fp[predictions[i]];
            ++fn[labels[i]];
        }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        // F1 = 2TP / (2TP + FP + FN)
        if (tp[c] == 0) continue;
        sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    }
    return sum / static_cast<double>(num_classes);
}

double macro_f1(const Matrix& logits, std::span<const Label> labels, std::size_t num_classes) {
    if (labels.size() != logits.rows()) throw DimensionError("macro_f1", "label count differs from logit rows");
    const auto pred = predict(logits);
    return macro_f1(pred, labels, num_classes);
}

Evaluation evaluate(const ModelParams& params, const Dataset& dataset, Execution exec) {
    std::vector<Label> pred;
    if (exec == Execution::serial) {
        pred = predict(forward(params, dataset.features).logits);
    } else {
        constexpr std::size_t block = 256;
        const std::size_t n = dataset.size();
        const auto blocks = static_cast<long long>((n + block - 1) / block);
        pred.resize(n);
#pragma omp parallel for schedule(static)
        for (long long b = 0; b < blocks; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * block;
            const std::size_t hi = std::min(n, lo + block);
            std::vector<std::size_t> rows(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) rows[i - lo] = i;
            const auto p = predict(forward(params, gather_rows(dataset.features, rows)).logits);
            std::copy(p.begin(), p.end(), pred.begin() + static_cast<std::ptrdiff_t>(lo));
        }
    }
    Evaluation e;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == dataset.clean_labels[i];
    e.accuracy = static_cast<double>(hit) / static_cast<double>(pred.size());
    e.macro_f1 = macro_f1(pred, dataset.clean_labels, dataset.num_classes);
    return e;
}

namespace {

GroupMeans split_means(const std::vector<double>& values, const Dataset& dataset, std::span<const std::size_t> probe) {
    GroupMeans g;
    double clean = 0.0, noisy = 0.0;
    for (std::size_t k = 0; k < probe.size(); ++k) {
        if (dataset.noise_mask[probe[k]]) {
            noisy += values[k];
            ++g.noisy_count;
        } else {
            clean += values[k];
            ++g.clean_count;
        }
    }
    if (g.clean_count) g.clean = clean / static_cast<double>(g.clean_count);
    if (g.noisy_count) g.noisy = noisy / static_cast<double>(g.noisy_count);
    return g;
}

std::vector<Label> observed(const Dataset& dataset, std::span<const std::size_t> probe) {
    std::vector<Label> y;
    y.reserve(probe.size());
    for (std::size_t i : probe) y.push_back(dataset.noisy_labels[i]);
    return y;
}

}  // namespace

GroupMeans groupwise_ce(const ModelParams& params, const Dataset& dataset, std::span<const std::size_t> probe) {
    if (probe.empty()) return {};
    const Matrix logits = forward(params, gather_rows(dataset.features, probe)).logits;
    return split_means(per_sample_ce(logits, observed(dataset, probe)), dataset, probe);
}

GroupMeans groupwise_gradnorm(const ModelParams& params, const Dataset& dataset, std::span<const std::size_t> probe,
                              const LossConfig& loss) {
    if (probe.empty()) return {};
    const Matrix logits = forward(params, gather_rows(dataset.features, probe)).logits;
    const Matrix g = per_sample_logit_gradients(logits, observed(dataset, probe), loss);
    std::vector<double> norms(g.rows());
    for (std::size_t i = 0; i < g.rows(); ++i) norms[i] = norm2(g.row(i));
    return split_means(norms, dataset, probe);
}

std::vector<double> per_sample_param_gradnorms(const ModelParams& params, const Dataset& dataset,
                                               std::span<const std::size_t> probe, const LossConfig& loss,
                                               const EmbeddingStore* embeddings) {
    if (probe.empty()) return {};
    GradTape tape;
    TapedModel model = record_forward(tape, params, gather_rows(dataset.features, probe));
    const auto y = observed(dataset, probe);
    NodeId local = 0;
    switch (loss.method) {
        case Method::fedavg_ce:
        case Method::ours:
            local = record_ce(tape, model.logits, y);
            break;
        case Method::symce:
            local = record_symce(tape, model.logits, y, loss.symce_alpha, loss.symce_beta, loss.rce_log_clamp);
            break;
        case Method::logitclip:
            local = record_ce(tape, tape.clip_rows(model.logits, loss.logitclip_bound), y);
            break;
        case Method::akd:
            local = record_ce(tape, model.logits, y);
            if (embeddings != nullptr && params.layout().adapter) {
                const NodeId akd =
                    record_akd(tape, model.adapter(tape, params), gather_rows(embeddings->embeddings, probe), 1.0);
                local = tape.add(local, tape.scale(akd, loss.akd_weight));
            }
            break;
    }
    const TapeGradients g = tape.backward(local, Matrix(probe.size(), 1, 1.0));
    std::vector<double> sq(probe.size(), 0.0);
    for (std::size_t l = 0; l < model.slices.size(); ++l) {
        const Matrix& a = tape.value(model.layer_inputs[l]);
        const Matrix& delta = g[model.layer_outputs[l]];
        for (std::size_t i = 0; i < probe.size(); ++i) {
            const double dd = dot(delta.row(i), delta.row(i));
            sq[i] += (dot(a.row(i), a.row(i)) + 1.0) * dd;
        }
    }
    for (double& v : sq) v = std::sqrt(v);
    return sq;
}

GroupMeans groupwise_param_gradnorm(const ModelParams& params, const Dataset& dataset,
                                    std::span<const std::size_t> probe, const LossConfig& loss,
                                    const EmbeddingStore* embeddings) {
    if (probe.empty()) return {};
    return split_means(per_sample_param_gradnorms(params, dataset, probe, loss, embeddings), dataset, probe);
}

void dump_representations(const ModelParams& params, const Dataset& dataset, const std::filesystem::path& path) {
    write_matrix_file(path, extract_features(params, dataset.features));
}

namespace {

template <typename T>
void put_optional(nlohmann::json& j, const char* key, const std::optional<T>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
void get_optional(const nlohmann::json& j, const char* key, std::optional<T>& v) {
    if (j.contains(key) && !j.at(key).is_null()) v = j.at(key).get<T>();
    else v.reset();
}

}  // namespace

void to_json(nlohmann::json& j, const RoundReport& r) {
    j = nlohmann::json{{"type", "round"},
                       {"round", r.round},
                       {"test_accuracy", r.test_accuracy},
                       {"test_macro_f1", r.test_macro_f1},
                       {"selected_clients", r.selected_clients}};
    put_optional(j, "ce_clean", r.ce_clean);
    put_optional(j, "ce_noisy", r.ce_noisy);
    put_optional(j, "gradnorm_clean", r.gradnorm_clean);
    put_optional(j, "gradnorm_noisy", r.gradnorm_noisy);
    put_optional(j, "param_gradnorm_clean", r.param_gradnorm_clean);
    put_optional(j, "param_gradnorm_noisy", r.param_gradnorm_noisy);
    put_optional(j, "train_loss", r.train_loss);
    put_optional(j, "train_ce", r.train_ce);
    put_optional(j, "train_regularizer", r.train_regularizer);
}

void from_json(const nlohmann::json& j, RoundReport& r) {
    j.at("round").get_to(r.round);
    j.at("test_accuracy").get_to(r.test_accuracy);
    j.at("test_macro_f1").get_to(r.test_macro_f1);
    j.at("selected_clients").get_to(r.selected_clients);
    get_optional(j, "ce_clean", r.ce_clean);
    get_optional(j, "ce_noisy", r.ce_noisy);
    get_optional(j, "gradnorm_clean", r.gradnorm_clean);
    get_optional(j, "gradnorm_noisy", r.gradnorm_noisy);
    get_optional(j, "param_gradnorm_clean", r.param_gradnorm_clean);
    get_optional(j, "param_gradnorm_noisy", r.param_gradnorm_noisy);
    get_optional(j, "train_loss", r.train_loss);
    get_optional(j, "train_ce", r.train_ce);
    get_optional(j, "train_regularizer", r.train_regularizer);
}

}  // namespace ksim
