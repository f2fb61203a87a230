#include "ksim/losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace ksim {

const char* to_string(Method m) {
    switch (m) {
        case Method::fedavg_ce: return "fedavg-ce";
        case Method::ours: return "ours";
        case Method::symce: return "symce";
        case Method::logitclip: return "logitclip";
        case Method::akd: return "akd";
    }
    return "unknown";
}

Method parse_method(const std::string& name) {
    for (Method m : {Method::fedavg_ce, Method::ours, Method::symce, Method::logitclip, Method::akd})
        if (name == to_string(m)) return m;
    throw ConfigError("unknown method '" + name + "' (expected fedavg-ce, ours, symce, logitclip or akd)");
}

void LossConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("loss.temperature must be > 0");
    if (!(lambda >= 0.0)) throw ConfigError("loss.lambda must be >= 0");
    if (k < 1) throw ConfigError("loss.k must be >= 1");
    if (!(logitclip_bound > 0.0)) throw ConfigError("loss.logitclip_bound must be > 0");
    if (!(akd_weight >= 0.0)) throw ConfigError("loss.akd_weight must be >= 0");
    if (!(symce_alpha >= 0.0 && symce_beta >= 0.0)) throw ConfigError("loss.symce weights must be >= 0");
}

namespace {

void check_labels(std::size_t rows, std::size_t classes, std::span<const Label> labels, const char* op) {
    if (labels.size() != rows)
        throw DimensionError(op, std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
    for (Label l : labels)
        if (l >= classes) throw DimensionError(op, "label " + std::to_string(l) + " >= " + std::to_string(classes));
}

std::vector<std::size_t> to_index(std::span<const Label> labels) { return {labels.begin(), labels.end()}; }

double mean_of(const Matrix& column) {
    double s = 0.0;
    for (double v : column.values()) s += v;
    return s / static_cast<double>(column.rows());
}

Matrix mean_seed(std::size_t rows) { return Matrix(rows, 1, 1.0 / static_cast<double>(rows)); }

LossValue run_single(const Matrix& input, const std::function<NodeId(GradTape&, NodeId)>& build) {
    GradTape tape;
    const NodeId x = tape.leaf(input);
    const NodeId loss = build(tape, x);
    LossValue out;
    out.value = mean_of(tape.value(loss));
    out.grad = tape.backward(loss, mean_seed(tape.value(loss).rows())).take(x);
    return out;
}

NodeId record_rce(GradTape& tape, NodeId logits, std::span<const Label> labels, double log_clamp) {
    // RCE = -sum_k p_k log q_k = -A (1 - p_y) for the clamped one-hot target
    const NodeId log_py = tape.add(tape.gather(logits, to_index(labels)), tape.scale(tape.log_sum_exp(logits), -1.0));
    return tape.scale(tape.exp(log_py), log_clamp, -log_clamp);
}

}  // namespace

NodeId record_ce(GradTape& tape, NodeId logits, std::span<const Label> labels) {
    const Matrix& z = tape.value(logits);
    check_labels(z.rows(), z.cols(), labels, "ce_loss");
    return tape.add(tape.log_sum_exp(logits), tape.scale(tape.gather(logits, to_index(labels)), -1.0));
}

NodeId record_kcl(GradTape& tape, NodeId features, const std::vector<Neighborhood>& neighborhoods,
                  double temperature, bool include_self) {
    if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be > 0");
    const std::size_t m = tape.value(features).rows();
    if (neighborhoods.size() != m)
        throw DimensionError("kcl_loss", std::to_string(neighborhoods.size()) + " neighborhoods for " +
                                             std::to_string(m) + " rows");
    std::vector<std::uint8_t> positive(m * m, 0);
    std::vector<std::uint8_t> denominator(m * m, 0);
    for (const auto& n : neighborhoods) {
        if (n.anchor >= m) throw DimensionError("kcl_loss", "anchor out of range");
        if (n.positives.empty()) throw DimensionError("kcl_loss", "anchor without positives");
        for (std::size_t p : n.positives) {
            if (p >= m || p == n.anchor) throw DimensionError("kcl_loss", "invalid positive position");
            positive[n.anchor * m + p] = 1;
        }
    }
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t l = 0; l < m; ++l) denominator[j * m + l] = (l != j || include_self) ? 1 : 0;

    const NodeId unit = tape.row_normalize(features);
    const NodeId sim = tape.scale(tape.matmul_nt(unit, unit), 1.0 / temperature);
    const NodeId log_den = tape.log_sum_exp(sim, std::move(denominator));
    const NodeId log_num = tape.log_sum_exp(sim, std::move(positive));
    return tape.add(log_den, tape.scale(log_num, -1.0));
}

NodeId record_symce(GradTape& tape, NodeId logits, std::span<const Label> labels, double alpha, double beta,
                    double log_clamp) {
    const NodeId ce = record_ce(tape, logits, labels);
    const NodeId rce = record_rce(tape, logits, labels, log_clamp);
    return tape.add(tape.scale(ce, alpha), tape.scale(rce, beta));
}

NodeId record_akd(GradTape& tape, NodeId adapter_output, const Matrix& ssl_batch, double weight) {
    const Matrix& a = tape.value(adapter_output);
    if (!a.same_shape(ssl_batch))
        throw DimensionError("akd_loss", "adapter output " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                             " vs SSL batch " + std::to_string(ssl_batch.rows()) + "x" +
                                             std::to_string(ssl_batch.cols()));
    const NodeId target = tape.leaf(-1.0 * ssl_batch);
    const NodeId l1 = tape.row_sum(tape.abs(tape.add(adapter_output, target)));
    return tape.scale(l1, weight / static_cast<double>(a.cols()));
}

LossValue ce_loss(const Matrix& logits, std::span<const Label> labels) {
    return run_single(logits, [&](GradTape& t, NodeId x) { return record_ce(t, x, labels); });
}

LossValue kcl_loss(const Matrix& features, const std::vector<Neighborhood>& neighborhoods, double temperature,
                   bool include_self) {
    return run_single(features,
                      [&](GradTape& t, NodeId x) { return record_kcl(t, x, neighborhoods, temperature, include_self); });
}

LossValue symce_loss(const Matrix& logits, std::span<const Label> labels, double alpha, double beta,
                     double log_clamp) {
    return run_single(logits,
                      [&](GradTape& t, NodeId x) { return record_symce(t, x, labels, alpha, beta, log_clamp); });
}

Matrix logitclip(const Matrix& logits, double bound) {
    GradTape tape;
    return tape.value(tape.clip_rows(tape.leaf(logits), bound));
}

LossValue logitclip_ce_loss(const Matrix& logits, std::span<const Label> labels, double bound) {
    return run_single(logits, [&](GradTape& t, NodeId x) { return record_ce(t, t.clip_rows(x, bound), labels); });
}

LossValue akd_loss(const Matrix& adapter_output, const Matrix& ssl_batch, double weight) {
    return run_single(adapter_output, [&](GradTape& t, NodeId x) { return record_akd(t, x, ssl_batch, weight); });
}

CombinedValue combined_loss(const Matrix& logits, const Matrix& features, std::span<const Label> labels,
                            const std::vector<Neighborhood>& neighborhoods, const LossConfig& cfg) {
    cfg.validate();
    if (logits.rows() != features.rows()) throw DimensionError("combined_loss", "logits and features differ in rows");
    GradTape tape;
    const NodeId z = tape.leaf(logits);
    const NodeId f = tape.leaf(features);
    const NodeId ce = record_ce(tape, z, labels);
    const NodeId kcl = record_kcl(tape, f, neighborhoods, cfg.temperature, cfg.kcl_include_self);
    const NodeId total = cfg.lambda > 0.0 ? tape.add(ce, tape.scale(kcl, cfg.lambda)) : ce;
    TapeGradients g = tape.backward(total, mean_seed(logits.rows()));
    CombinedValue out;
    out.value = mean_of(tape.value(total));
    out.ce = mean_of(tape.value(ce));
    out.kcl = mean_of(tape.value(kcl));
    out.grad_logits = g.take(z);
    out.grad_features = g.take(f);
    return out;
}

RecordedObjective record_objective(GradTape& tape, TapedModel& model, const ModelParams& params,
                                   std::span<const Label> labels, const Matrix& ssl_batch,
                                   const std::vector<Neighborhood>& neighborhoods, const LossConfig& cfg) {
    RecordedObjective obj;
    switch (cfg.method) {
        case Method::fedavg_ce:
            obj.ce = obj.total = record_ce(tape, model.logits, labels);
            break;
        case Method::ours: {
            obj.ce = record_ce(tape, model.logits, labels);
            const NodeId kcl = record_kcl(tape, model.features, neighborhoods, cfg.temperature, cfg.kcl_include_self);
            obj.regularizer = kcl;
            obj.total = cfg.lambda > 0.0 ? tape.add(obj.ce, tape.scale(kcl, cfg.lambda)) : obj.ce;
            break;
        }
        case Method::symce: {
            obj.ce = record_ce(tape, model.logits, labels);
            const NodeId rce = record_rce(tape, model.logits, labels, cfg.rce_log_clamp);
            obj.total = tape.add(tape.scale(obj.ce, cfg.symce_alpha), tape.scale(rce, cfg.symce_beta));
            break;
        }
        case Method::logitclip:
            obj.ce = obj.total = record_ce(tape, tape.clip_rows(model.logits, cfg.logitclip_bound), labels);
            break;
        case Method::akd: {
            obj.ce = record_ce(tape, model.logits, labels);
            const NodeId akd = record_akd(tape, model.adapter(tape, params), ssl_batch, 1.0);
            obj.regularizer = akd;
            obj.total = tape.add(obj.ce, tape.scale(akd, cfg.akd_weight));
            break;
        }
    }
    return obj;
}

Matrix per_sample_logit_gradients(const Matrix& logits, std::span<const Label> labels, const LossConfig& cfg) {
    GradTape tape;
    const NodeId z = tape.leaf(logits);
    NodeId loss = 0;
    switch (cfg.method) {
        case Method::fedavg_ce:
        case Method::ours:
        case Method::akd:
            loss = record_ce(tape, z, labels);
            break;
        case Method::symce:
            loss = record_symce(tape, z, labels, cfg.symce_alpha, cfg.symce_beta, cfg.rce_log_clamp);
            break;
        case Method::logitclip:
            loss = record_ce(tape, tape.clip_rows(z, cfg.logitclip_bound), labels);
            break;
    }
    return tape.backward(loss, Matrix(logits.rows(), 1, 1.0)).take(z);
}

std::vector<double> per_sample_ce(const Matrix& logits, std::span<const Label> labels) {
    check_labels(logits.rows(), logits.cols(), labels, "per_sample_ce");
    std::vector<double> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto r = logits.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double v : r) s += std::exp(v - mx);
        out[i] = mx + std::log(s) - r[labels[i]];
    }
    return out;
}

}  // namespace ksim
