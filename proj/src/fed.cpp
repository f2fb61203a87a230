#include "ksim/fed.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>

#include "ksim/knn.hpp"
#include "ksim/rng.hpp"

namespace ksim {

void FedConfig::validate() const {
    loss.validate();
    if (num_clients == 0) throw ConfigError("fed.num_clients must be >= 1");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fed.fraction must be in (0, 1]");
    if (local_epochs == 0) throw ConfigError("fed.local_epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("fed.batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("fed.lr must be finite and >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("fed.weight_decay must be >= 0");
    if (loss.method == Method::ours && batch_size < loss.k + 1)
        throw ConfigError("fed.batch_size must exceed loss.k (got batch " + std::to_string(batch_size) + ", K " +
                          std::to_string(loss.k) + ")");
}

std::vector<std::size_t> select_clients(std::size_t num_clients, double fraction, std::uint64_t seed,
                                        std::size_t round) {
    if (num_clients == 0) return {};
    // the small offset keeps e.g. 0.3 * 10 = 3.0000000000000004 from rounding up to 4
    const double wanted = std::ceil(fraction * static_cast<double>(num_clients) - 1e-9);
    const std::size_t count = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(wanted, 1.0)), 1, num_clients);
    std::vector<std::size_t> ids(num_clients);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng = make_rng(seed, {tag(Stream::select), round});
    for (std::size_t k = 0; k < count; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, num_clients - 1);
        std::swap(ids[k], ids[pick(rng)]);
    }
    ids.resize(count);
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch_size, std::size_t k) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t lo = 0; lo < n; lo += batch_size) out.emplace_back(lo, std::min(n, lo + batch_size));
    if (out.size() > 1 && out.back().second - out.back().first <= k) {
        const std::size_t end = out.back().second;
        out.pop_back();
        out.back().second = end;
    }
    return out;
}

namespace {

bool needs_embeddings(Method m) { return m == Method::ours || m == Method::akd; }

double column_mean(const Matrix& m) {
    double s = 0.0;
    for (double v : m.values()) s += v;
    return s / static_cast<double>(m.rows());
}

}  // namespace

ClientResult client_update(const ModelParams& global, const ClientData& data, const FedConfig& cfg,
                           std::size_t client, std::size_t round) {
    if (data.shard.empty()) throw std::invalid_argument("client " + std::to_string(client) + " has no samples");
    const LossConfig& loss = cfg.loss;
    if (needs_embeddings(loss.method) && data.embeddings == nullptr)
        throw ConfigError(std::string("method ") + to_string(loss.method) + " requires SSL embeddings");

    ClientResult result;
    result.params = global;
    result.shard_size = data.shard.size();
    std::vector<std::size_t> order(data.shard.begin(), data.shard.end());
    const auto bounds = batch_bounds(order.size(), cfg.batch_size, loss.k);

    double sum_loss = 0.0, sum_ce = 0.0, sum_reg = 0.0;
    bool has_reg = false;
    std::span<double> w = result.params.flat();
    GradTape tape;
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        Rng rng = make_rng(cfg.seed, {tag(Stream::client), client, round, epoch});
        std::shuffle(order.begin(), order.end(), rng);
        for (const auto& [lo, hi] : bounds) {
            const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
            const Matrix x = gather_rows(data.train.features, idx);
            std::vector<Label> y;
            y.reserve(idx.size());
            for (std::size_t i : idx) y.push_back(data.train.noisy_labels[i]);
            Matrix ssl;
            std::vector<Neighborhood> neighborhoods;
            if (needs_embeddings(loss.method)) ssl = gather_rows(data.embeddings->embeddings, idx);
            if (loss.method == Method::ours) neighborhoods = batch_neighborhoods(ssl, loss.k);

            tape.clear();
            TapedModel taped = record_forward(tape, result.params, x);
            const RecordedObjective obj = record_objective(tape, taped, result.params, y, ssl, neighborhoods, loss);
            const Matrix seed(idx.size(), 1, 1.0 / static_cast<double>(idx.size()));
            const std::vector<double> g =
                collect_gradients(taped, tape.backward(obj.total, seed), result.params.layout());

            for (std::size_t p = 0; p < w.size(); ++p) w[p] -= cfg.lr * (g[p] + 2.0 * cfg.weight_decay * w[p]);

            sum_loss += column_mean(tape.value(obj.total));
            sum_ce += column_mean(tape.value(obj.ce));
            if (obj.regularizer) {
                has_reg = true;
                sum_reg += column_mean(tape.value(*obj.regularizer));
            }
            ++result.diagnostics.steps;
        }
    }
    const auto steps = static_cast<double>(result.diagnostics.steps);
    result.diagnostics.mean_loss = sum_loss / steps;
    result.diagnostics.mean_ce = sum_ce / steps;
    if (has_reg) result.diagnostics.mean_regularizer = sum_reg / steps;
    return result;
}

ModelParams aggregate(std::span<const WeightedParams> updates) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no client updates");
    std::size_t total = 0;
    for (const auto& u : updates) {
        if (u.params == nullptr) throw std::invalid_argument("aggregate: null update");
        total += u.shard_size;
    }
    if (total == 0) throw std::invalid_argument("aggregate: total shard size is zero");

    ModelParams out = ModelParams::zeros(updates.front().params->spec());
    std::span<double> acc = out.flat();
    double assigned = 0.0;
    for (std::size_t k = 0; k < updates.size(); ++k) {
        const auto src = updates[k].params->flat();
        if (src.size() != acc.size()) throw DimensionError("aggregate", "client parameter vectors differ in length");
        const double weight = k + 1 == updates.size()
                                  ? 1.0 - assigned
                                  : static_cast<double>(updates[k].shard_size) / static_cast<double>(total);
        assigned += weight;
        for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += weight * src[p];
    }
    return out;
}

void check_federation(const FederationInputs& in, const MlpSpec& spec, const FedConfig& cfg) {
    cfg.validate();
    spec.validate();
    in.train.validate();
    in.test.validate();
    if (spec.input_dim != in.train.input_dim() || spec.input_dim != in.test.input_dim())
        throw ConfigError("model input_dim does not match the dataset feature width");
    if (spec.num_classes != in.train.num_classes || spec.num_classes != in.test.num_classes)
        throw ConfigError("model num_classes does not match the dataset");
    in.partition.validate(in.train.size());
    if (in.partition.num_clients() != cfg.num_clients)
        throw ConfigError("partition has " + std::to_string(in.partition.num_clients()) + " clients, config says " +
                          std::to_string(cfg.num_clients));
    const Method m = cfg.loss.method;
    if (needs_embeddings(m)) {
        if (in.embeddings == nullptr) throw ConfigError(std::string("method ") + to_string(m) + " requires SSL embeddings");
        in.embeddings->check_aligned(in.train);
    }
    if (m == Method::akd && spec.adapter_dim != (in.embeddings ? in.embeddings->dim() : 0))
        throw ConfigError("akd adapter width must equal the SSL embedding width");
    if (m == Method::ours) {
        for (std::size_t c = 0; c < in.partition.num_clients(); ++c)
            if (in.partition.shard_size(c) < cfg.loss.k + 1)
                throw ConfigError("client " + std::to_string(c) + " has " + std::to_string(in.partition.shard_size(c)) +
                                  " samples, fewer than K + 1 = " + std::to_string(cfg.loss.k + 1));
    }
}

std::vector<std::size_t> diagnostic_probe(const Dataset& train, const Partition& partition, std::size_t count,
                                          std::size_t probe) {
    struct Ranked {
        double rate;
        std::size_t client;
    };
    std::vector<Ranked> ranked;
    for (std::size_t c = 0; c < partition.num_clients(); ++c) {
        const auto& shard = partition.shards[c];
        std::size_t noisy = 0;
        for (std::size_t i : shard) noisy += train.noise_mask[i];
        if (noisy > 0) ranked.push_back({static_cast<double>(noisy) / static_cast<double>(shard.size()), c});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        return a.rate > b.rate || (a.rate == b.rate && a.client < b.client);
    });
    if (ranked.size() > count) ranked.resize(count);
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.client < b.client; });

    std::vector<std::size_t> out;
    for (const auto& r : ranked) {
        std::vector<std::size_t> shard = partition.shards[r.client];
        std::sort(shard.begin(), shard.end());
        const std::size_t take = std::min(probe, shard.size());
        for (std::size_t k = 0; k < take; ++k) out.push_back(shard[k * shard.size() / take]);
    }
    return out;
}

namespace {

RoundReport evaluate_round(std::size_t round, const ModelParams& global, const FederationInputs& in,
                           const FedConfig& cfg, std::span<const std::size_t> probe, Execution exec) {
    RoundReport r;
    r.round = round;
    const Evaluation e = evaluate(global, in.test, exec);
    r.test_accuracy = e.accuracy;
    r.test_macro_f1 = e.macro_f1;
    if (!probe.empty()) {
        const GroupMeans ce = groupwise_ce(global, in.train, probe);
        const GroupMeans gn = groupwise_gradnorm(global, in.train, probe, cfg.loss);
        r.ce_clean = ce.clean;
        r.ce_noisy = ce.noisy;
        r.gradnorm_clean = gn.clean;
        r.gradnorm_noisy = gn.noisy;
        const GroupMeans pg = groupwise_param_gradnorm(global, in.train, probe, cfg.loss, in.embeddings);
        r.param_gradnorm_clean = pg.clean;
        r.param_gradnorm_noisy = pg.noisy;
    }
    return r;
}

}  // namespace

FederationResult run_federation(const FederationInputs& in, const MlpSpec& spec, const FedConfig& cfg,
                                Execution exec, const RoundObserver& observer) {
    check_federation(in, spec, cfg);
    const auto probe = diagnostic_probe(in.train, in.partition, cfg.diagnostic_clients, cfg.diagnostic_probe);

    FederationResult out;
    ModelParams global = init_params(spec, cfg.seed);
    out.history.push_back(evaluate_round(0, global, in, cfg, probe, exec));
    if (observer) observer(0, global);

    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        const auto selected = select_clients(cfg.num_clients, cfg.fraction, cfg.seed, round);
        std::vector<ClientResult> results(selected.size());
        auto train_one = [&](std::size_t k) {
            const std::size_t c = selected[k];
            results[k] = client_update(global, ClientData{in.train, in.partition.shards[c], in.embeddings}, cfg, c, round);
        };
        if (exec == Execution::parallel) {
            std::exception_ptr failure;
            const auto n = static_cast<long long>(selected.size());
#pragma omp parallel for schedule(dynamic, 1)
            for (long long k = 0; k < n; ++k) {
                try {
                    train_one(static_cast<std::size_t>(k));
                } catch (...) {
#pragma omp critical(ksim_client_failure)
                    if (!failure) failure = std::current_exception();
                }
            }
            if (failure) std::rethrow_exception(failure);
        } else {
            for (std::size_t k = 0; k < selected.size(); ++k) train_one(k);
        }

        std::vector<WeightedParams> updates;
        double steps = 0.0, loss = 0.0, ce = 0.0, reg = 0.0;
        bool has_reg = false;
        for (const auto& r : results) {
            updates.push_back({&r.params, r.shard_size});
            const auto s = static_cast<double>(r.diagnostics.steps);
            steps += s;
            loss += s * r.diagnostics.mean_loss;
            ce += s * r.diagnostics.mean_ce;
            if (r.diagnostics.mean_regularizer) {
                has_reg = true;
                reg += s * *r.diagnostics.mean_regularizer;
            }
        }
        global = aggregate(updates);
        if (!global.all_finite())
            throw std::runtime_error("global parameters became non-finite in round " + std::to_string(round));

        RoundReport report = evaluate_round(round, global, in, cfg, probe, exec);
        report.selected_clients = selected;
        report.train_loss = loss / steps;
        report.train_ce = ce / steps;
        if (has_reg) report.train_regularizer = reg / steps;
        out.history.push_back(std::move(report));
        if (observer) observer(round, global);
    }

    for (std::size_t t = 1; t < out.history.size(); ++t) {
        if (out.history[t].test_accuracy > out.history[out.best_accuracy_round].test_accuracy) out.best_accuracy_round = t;
        if (out.history[t].test_macro_f1 > out.history[out.best_macro_f1_round].test_macro_f1) out.best_macro_f1_round = t;
    }
    out.final_params = std::move(global);
    return out;
}

}  // namespace ksim
