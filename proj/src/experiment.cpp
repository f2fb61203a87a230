#include "ksim/experiment.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ksim/io.hpp"
#include "ksim/knn.hpp"
#include "ksim/metrics.hpp"

namespace ksim {

using nlohmann::json;

json default_config_json() {
    const SynthConfig synth;
    const FedConfig fed;
    const LossConfig loss;
    return json{
        {"dataset",
         {{"source", "synthetic"},
          {"synthetic",
           {{"num_classes", synth.num_classes},
            {"subclusters_per_class", synth.subclusters_per_class},
            {"samples", synth.samples},
            {"input_dim", synth.input_dim},
            {"ssl_dim", synth.ssl_dim},
            {"class_spread", synth.class_spread},
            {"subcluster_spread", synth.subcluster_spread},
            {"feature_noise", synth.feature_noise},
            {"test_fraction", synth.test_fraction}}},
          {"files",
           {{"train_features", nullptr}, {"train_labels", nullptr}, {"test_features", nullptr}, {"test_labels", nullptr}}}}},
        {"partition", {{"kind", "noniid"}, {"p", 0.7}, {"alpha", 5.0}}},
        {"noise", {{"rho", 0.7}, {"tau", 0.5}, {"labels", nullptr}}},
        {"embeddings", {{"source", "synthetic"}, {"path", nullptr}}},
        {"model", {{"hidden", std::vector<std::size_t>{64, 32}}}},
        {"fed",
         {{"num_clients", fed.num_clients},
          {"fraction", fed.fraction},
          {"rounds", fed.rounds},
          {"local_epochs", fed.local_epochs},
          {"batch_size", fed.batch_size},
          {"lr", fed.lr},
          {"weight_decay", fed.weight_decay},
          {"diagnostic_clients", fed.diagnostic_clients},
          {"diagnostic_probe", fed.diagnostic_probe}}},
        {"loss",
         {{"method", to_string(loss.method)},
          {"lambda", loss.lambda},
          {"temperature", loss.temperature},
          {"k", loss.k},
          {"symce_alpha", loss.symce_alpha},
          {"symce_beta", loss.symce_beta},
          {"rce_log_clamp", loss.rce_log_clamp},
          {"logitclip_bound", loss.logitclip_bound},
          {"akd_weight", loss.akd_weight},
          {"include_self", loss.kcl_include_self}}},
        {"seeds", std::vector<std::uint64_t>{0}},
        {"output_dir", "runs"},
        {"execution", "parallel"},
        {"threads", std::size_t{0}},
        {"dump_representations", false},
    };
}

namespace {

json path_or_null(const std::optional<std::filesystem::path>& p) {
    return p ? json(p->generic_string()) : json(nullptr);
}

json path_or_null(const std::filesystem::path& p) { return p.empty() ? json(nullptr) : json(p.generic_string()); }

const char* embedding_name(EmbeddingSource s) { return s == EmbeddingSource::random_model ? "random-model" : to_string(s); }

void merge(json& dst, const json& src, const std::string& prefix, std::vector<std::string>& errors) {
    if (!src.is_object()) {
        errors.push_back((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
        return;
    }
    for (const auto& [key, value] : src.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!dst.contains(key)) {
            errors.push_back(path + ": unknown field");
            continue;
        }
        if (dst[key].is_object()) merge(dst[key], value, path, errors);
        else dst[key] = value;
    }
}

const json* lookup(const json& root, const std::string& path) {
    const json* node = &root;
    std::stringstream parts(path);
    std::string part;
    while (std::getline(parts, part, '.')) {
        if (!node->is_object() || !node->contains(part)) return nullptr;
        node = &(*node)[part];
    }
    return node;
}

// Parsed text gives unsigned ints; documents built in code may hold signed ones.
bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Typed field access over the merged document, collecting problems instead of throwing.
class Fields {
public:
    Fields(const json& root, std::vector<std::string>& errors) : root_(root), errors_(errors) {}

    std::optional<double> number(const std::string& path) {
        const json* v = lookup(root_, path);
        if (v == nullptr || !v->is_number()) return fail<double>(path, "expected a number");
        return v->get<double>();
    }
    std::optional<std::size_t> count(const std::string& path) {
        const json* v = lookup(root_, path);
        if (v == nullptr || !non_negative_integer(*v)) return fail<std::size_t>(path, "expected a non-negative integer");
        return v->get<std::size_t>();
    }
    std::optional<std::string> text(const std::string& path) {
        const json* v = lookup(root_, path);
        if (v == nullptr || !v->is_string()) return fail<std::string>(path, "expected a string");
        return v->get<std::string>();
    }
    std::optional<bool> flag(const std::string& path) {
        const json* v = lookup(root_, path);
        if (v == nullptr || !v->is_boolean()) return fail<bool>(path, "expected true or false");
        return v->get<bool>();
    }
    // nullopt for null; records an error for anything but null or a string
    std::optional<std::string> maybe_text(const std::string& path) {
        const json* v = lookup(root_, path);
        if (v != nullptr && v->is_null()) return std::nullopt;
        return text(path);
    }
    template <typename T>
    std::optional<std::vector<T>> list(const std::string& path) {
        const json* v = lookup(root_, path);
        if (v == nullptr || !v->is_array()) return fail<std::vector<T>>(path, "expected a list of non-negative integers");
        std::vector<T> out;
        for (const auto& e : *v) {
            if (!non_negative_integer(e)) return fail<std::vector<T>>(path, "expected a list of non-negative integers");
            out.push_back(e.get<T>());
        }
        return out;
    }

    void error(const std::string& path, const std::string& message) { errors_.push_back(path + ": " + message); }

private:
    template <typename T>
    std::optional<T> fail(const std::string& path, const char* message) {
        error(path, message);
        return std::nullopt;
    }

    const json& root_;
    std::vector<std::string>& errors_;
};

json merged(const json& doc, std::vector<std::string>& errors) {
    json out = default_config_json();
    merge(out, doc, "", errors);
    return out;
}

void check_semantics(const json& m, std::vector<std::string>& errors) {
    Fields f(m, errors);
    auto require = [&](bool ok, const std::string& path, const std::string& message) {
        if (!ok) f.error(path, message);
    };

    const auto source = f.text("dataset.source");
    if (source && *source != "synthetic" && *source != "files")
        f.error("dataset.source", "expected \"synthetic\" or \"files\"");
    const bool synthetic = source && *source == "synthetic";
    for (const char* key : {"num_classes", "subclusters_per_class", "samples", "input_dim", "ssl_dim"}) {
        const std::string path = std::string("dataset.synthetic.") + key;
        if (auto v = f.count(path)) require(*v >= 1, path, "must be >= 1");
    }
    if (auto v = f.count("dataset.synthetic.num_classes")) require(*v >= 2, "dataset.synthetic.num_classes", "must be >= 2");
    for (const char* key : {"class_spread", "subcluster_spread", "feature_noise"}) {
        const std::string path = std::string("dataset.synthetic.") + key;
        if (auto v = f.number(path)) require(*v >= 0.0, path, "must be >= 0");
    }
    if (auto v = f.number("dataset.synthetic.test_fraction"))
        require(*v > 0.0 && *v < 1.0, "dataset.synthetic.test_fraction", "must be in (0, 1)");
    for (const char* key : {"train_features", "train_labels", "test_features", "test_labels"}) {
        const std::string path = std::string("dataset.files.") + key;
        const auto v = f.maybe_text(path);
        if (source && *source == "files") require(v.has_value(), path, "required when dataset.source is \"files\"");
    }

    const auto kind = f.text("partition.kind");
    if (kind && *kind != "iid" && *kind != "noniid") f.error("partition.kind", "expected \"iid\" or \"noniid\"");
    if (auto v = f.number("partition.p")) require(*v > 0.0 && *v <= 1.0, "partition.p", "must be in (0, 1]");
    if (auto v = f.number("partition.alpha")) require(*v > 0.0, "partition.alpha", "must be > 0");

    if (auto v = f.number("noise.rho")) require(*v >= 0.0 && *v <= 1.0, "noise.rho", "must be in [0, 1]");
    if (auto v = f.number("noise.tau")) require(*v >= 0.0 && *v < 1.0, "noise.tau", "must be in [0, 1)");
    if (f.maybe_text("noise.labels") && synthetic)
        f.error("noise.labels", "external noisy labels need dataset.source = \"files\"");

    const auto emb = f.text("embeddings.source");
    if (emb && *emb != "file" && *emb != "synthetic" && *emb != "random-model")
        f.error("embeddings.source", "expected \"file\", \"synthetic\" or \"random-model\"");
    const auto emb_path = f.maybe_text("embeddings.path");
    if (emb && *emb == "file") require(emb_path.has_value(), "embeddings.path", "required when embeddings.source is \"file\"");
    if (emb && *emb == "synthetic" && source && !synthetic)
        f.error("embeddings.source", "\"synthetic\" embeddings need dataset.source = \"synthetic\"");

    if (auto hidden = f.list<std::size_t>("model.hidden")) {
        require(!hidden->empty(), "model.hidden", "needs at least one layer");
        for (std::size_t h : *hidden) require(h >= 1, "model.hidden", "widths must be >= 1");
    }

    const auto clients = f.count("fed.num_clients");
    if (clients) require(*clients >= 1, "fed.num_clients", "must be >= 1");
    if (auto v = f.number("fed.fraction")) require(*v > 0.0 && *v <= 1.0, "fed.fraction", "must be in (0, 1]");
    if (auto v = f.count("fed.rounds")) require(*v >= 1, "fed.rounds", "must be >= 1");
    if (auto v = f.count("fed.local_epochs")) require(*v >= 1, "fed.local_epochs", "must be >= 1");
    const auto batch = f.count("fed.batch_size");
    if (batch) require(*batch >= 1, "fed.batch_size", "must be >= 1");
    if (auto v = f.number("fed.lr")) require(*v >= 0.0 && std::isfinite(*v), "fed.lr", "must be finite and >= 0");
    if (auto v = f.number("fed.weight_decay")) require(*v >= 0.0, "fed.weight_decay", "must be >= 0");
    f.count("fed.diagnostic_clients");
    f.count("fed.diagnostic_probe");
    if (synthetic && clients) {
        const auto samples = f.count("dataset.synthetic.samples");
        const auto test = f.number("dataset.synthetic.test_fraction");
        if (samples && test) {
            const auto train = *samples - static_cast<std::size_t>(std::llround(*test * static_cast<double>(*samples)));
            require(*clients <= train, "fed.num_clients", "exceeds the number of training samples");
        }
    }

    if (auto method = f.text("loss.method")) {
        try {
            parse_method(*method);
        } catch (const ConfigError& e) {
            f.error("loss.method", e.what());
        }
    }
    if (auto v = f.number("loss.lambda")) require(*v >= 0.0, "loss.lambda", "must be >= 0");
    if (auto v = f.number("loss.temperature")) require(*v > 0.0, "loss.temperature", "must be > 0");
    if (auto k = f.count("loss.k")) {
        require(*k >= 1, "loss.k", "must be >= 1");
        if (batch) require(*k < *batch, "loss.k", "must be smaller than fed.batch_size");
    }
    for (const char* key : {"symce_alpha", "symce_beta", "akd_weight"}) {
        const std::string path = std::string("loss.") + key;
        if (auto v = f.number(path)) require(*v >= 0.0, path, "must be >= 0");
    }
    if (auto v = f.number("loss.rce_log_clamp")) require(*v < 0.0, "loss.rce_log_clamp", "must be < 0");
    if (auto v = f.number("loss.logitclip_bound")) require(*v > 0.0, "loss.logitclip_bound", "must be > 0");
    f.flag("loss.include_self");

    if (auto seeds = f.list<std::uint64_t>("seeds")) {
        require(!seeds->empty(), "seeds", "needs at least one seed");
        require(std::set<std::uint64_t>(seeds->begin(), seeds->end()).size() == seeds->size(), "seeds",
                "contains duplicates");
    }
    if (auto v = f.text("output_dir")) require(!v->empty(), "output_dir", "must not be empty");
    const auto exec = f.text("execution");
    if (exec && *exec != "serial" && *exec != "parallel") f.error("execution", "expected \"serial\" or \"parallel\"");
    f.count("threads");
    f.flag("dump_representations");
}

std::filesystem::path as_path(const json& v) { return v.is_null() ? std::filesystem::path{} : std::filesystem::path(v.get<std::string>()); }

}  // namespace

std::vector<std::string> validate_config(const json& doc) {
    std::vector<std::string> errors;
    const json m = merged(doc, errors);
    check_semantics(m, errors);
    return errors;
}

ExperimentConfig parse_config(const json& doc) {
    std::vector<std::string> errors;
    const json m = merged(doc, errors);
    check_semantics(m, errors);
    if (!errors.empty()) throw ConfigError(errors.front());

    ExperimentConfig cfg;
    const json& d = m["dataset"];
    cfg.dataset = d["source"] == "files" ? DatasetSource::files : DatasetSource::synthetic;
    const json& s = d["synthetic"];
    cfg.synthetic.num_classes = s["num_classes"];
    cfg.synthetic.subclusters_per_class = s["subclusters_per_class"];
    cfg.synthetic.samples = s["samples"];
    cfg.synthetic.input_dim = s["input_dim"];
    cfg.synthetic.ssl_dim = s["ssl_dim"];
    cfg.synthetic.class_spread = s["class_spread"];
    cfg.synthetic.subcluster_spread = s["subcluster_spread"];
    cfg.synthetic.feature_noise = s["feature_noise"];
    cfg.synthetic.test_fraction = s["test_fraction"];
    const json& files = d["files"];
    cfg.files = {as_path(files["train_features"]), as_path(files["train_labels"]), as_path(files["test_features"]),
                 as_path(files["test_labels"])};

    cfg.partition.iid = m["partition"]["kind"] == "iid";
    cfg.partition.p = m["partition"]["p"];
    cfg.partition.alpha = m["partition"]["alpha"];
    cfg.noise.rho = m["noise"]["rho"];
    cfg.noise.tau = m["noise"]["tau"];
    if (!m["noise"]["labels"].is_null()) cfg.noise.labels = as_path(m["noise"]["labels"]);

    const std::string emb = m["embeddings"]["source"];
    cfg.embeddings.source = emb == "file"      ? EmbeddingSource::file
                            : emb == "synthetic" ? EmbeddingSource::synthetic
                                                 : EmbeddingSource::random_model;
    if (!m["embeddings"]["path"].is_null()) cfg.embeddings.path = as_path(m["embeddings"]["path"]);
    cfg.hidden_dims = m["model"]["hidden"].get<std::vector<std::size_t>>();

    const json& fed = m["fed"];
    cfg.fed.num_clients = fed["num_clients"];
    cfg.fed.fraction = fed["fraction"];
    cfg.fed.rounds = fed["rounds"];
    cfg.fed.local_epochs = fed["local_epochs"];
    cfg.fed.batch_size = fed["batch_size"];
    cfg.fed.lr = fed["lr"];
    cfg.fed.weight_decay = fed["weight_decay"];
    cfg.fed.diagnostic_clients = fed["diagnostic_clients"];
    cfg.fed.diagnostic_probe = fed["diagnostic_probe"];

    const json& loss = m["loss"];
    cfg.fed.loss.method = parse_method(loss["method"]);
    cfg.fed.loss.lambda = loss["lambda"];
    cfg.fed.loss.temperature = loss["temperature"];
    cfg.fed.loss.k = loss["k"];
    cfg.fed.loss.symce_alpha = loss["symce_alpha"];
    cfg.fed.loss.symce_beta = loss["symce_beta"];
    cfg.fed.loss.rce_log_clamp = loss["rce_log_clamp"];
    cfg.fed.loss.logitclip_bound = loss["logitclip_bound"];
    cfg.fed.loss.akd_weight = loss["akd_weight"];
    cfg.fed.loss.kcl_include_self = loss["include_self"];

    cfg.seeds = m["seeds"].get<std::vector<std::uint64_t>>();
    cfg.output_dir = m["output_dir"].get<std::string>();
    cfg.execution = m["execution"] == "serial" ? Execution::serial : Execution::parallel;
    cfg.threads = m["threads"];
    cfg.dump_representations = m["dump_representations"];
    cfg.fed.validate();
    return cfg;
}

json to_json(const ExperimentConfig& cfg) {
    const SynthConfig& s = cfg.synthetic;
    const LossConfig& l = cfg.fed.loss;
    return json{
        {"dataset",
         {{"source", cfg.dataset == DatasetSource::files ? "files" : "synthetic"},
          {"synthetic",
           {{"num_classes", s.num_classes},
            {"subclusters_per_class", s.subclusters_per_class},
            {"samples", s.samples},
            {"input_dim", s.input_dim},
            {"ssl_dim", s.ssl_dim},
            {"class_spread", s.class_spread},
            {"subcluster_spread", s.subcluster_spread},
            {"feature_noise", s.feature_noise},
            {"test_fraction", s.test_fraction}}},
          {"files",
           {{"train_features", path_or_null(cfg.files.train_features)},
            {"train_labels", path_or_null(cfg.files.train_labels)},
            {"test_features", path_or_null(cfg.files.test_features)},
            {"test_labels", path_or_null(cfg.files.test_labels)}}}}},
        {"partition", {{"kind", cfg.partition.iid ? "iid" : "noniid"}, {"p", cfg.partition.p}, {"alpha", cfg.partition.alpha}}},
        {"noise", {{"rho", cfg.noise.rho}, {"tau", cfg.noise.tau}, {"labels", path_or_null(cfg.noise.labels)}}},
        {"embeddings", {{"source", embedding_name(cfg.embeddings.source)}, {"path", path_or_null(cfg.embeddings.path)}}},
        {"model", {{"hidden", cfg.hidden_dims}}},
        {"fed",
         {{"num_clients", cfg.fed.num_clients},
          {"fraction", cfg.fed.fraction},
          {"rounds", cfg.fed.rounds},
          {"local_epochs", cfg.fed.local_epochs},
          {"batch_size", cfg.fed.batch_size},
          {"lr", cfg.fed.lr},
          {"weight_decay", cfg.fed.weight_decay},
          {"diagnostic_clients", cfg.fed.diagnostic_clients},
          {"diagnostic_probe", cfg.fed.diagnostic_probe}}},
        {"loss",
         {{"method", to_string(l.method)},
          {"lambda", l.lambda},
          {"temperature", l.temperature},
          {"k", l.k},
          {"symce_alpha", l.symce_alpha},
          {"symce_beta", l.symce_beta},
          {"rce_log_clamp", l.rce_log_clamp},
          {"logitclip_bound", l.logitclip_bound},
          {"akd_weight", l.akd_weight},
          {"include_self", l.kcl_include_self}}},
        {"seeds", cfg.seeds},
        {"output_dir", cfg.output_dir.generic_string()},
        {"execution", cfg.execution == Execution::serial ? "serial" : "parallel"},
        {"threads", cfg.threads},
        {"dump_representations", cfg.dump_representations},
    };
}

json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override \"" + assignment + "\" is not key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json* node = &doc;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) {
        if (part.empty()) throw ConfigError("override \"" + assignment + "\" has an empty key segment");
        path.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (!node->is_object()) throw ConfigError("override " + key + ": " + path[i] + " is not a section");
        node = &(*node)[path[i]];
        if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError("override " + key + ": parent is not a section");
    (*node)[path.back()] = std::move(value);
}

PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t seed) {
    PreparedRun run;
    std::optional<SyntheticData> synth;
    if (cfg.dataset == DatasetSource::synthetic) {
        SynthConfig sc = cfg.synthetic;
        sc.seed = seed;
        synth = synth_clusters(sc);
        run.train = std::move(synth->train);
        run.test = std::move(synth->test);
    } else {
        run.train = load_dataset(cfg.files.train_features, cfg.files.train_labels, cfg.noise.labels, Split::train);
        run.test = load_dataset(cfg.files.test_features, cfg.files.test_labels, std::nullopt, Split::test);
    }

    const std::size_t classes = run.train.num_classes;
    run.partition = cfg.partition.iid
                        ? partition_iid(run.train.size(), cfg.fed.num_clients, seed)
                        : partition_noniid(run.train.clean_labels, classes, cfg.fed.num_clients, cfg.partition.p,
                                           cfg.partition.alpha, seed);
    if (!cfg.noise.labels) {
        NoisyData noisy = inject_noise(run.train, run.partition, NoiseConfig{cfg.noise.rho, cfg.noise.tau, seed});
        run.train = std::move(noisy.dataset);
        run.client_noise = std::move(noisy.clients);
    }

    run.spec = MlpSpec{run.train.input_dim(), cfg.hidden_dims, classes, 0};
    switch (cfg.embeddings.source) {
        case EmbeddingSource::synthetic:
            if (!synth) throw ConfigError("embeddings.source: synthetic embeddings need a synthetic dataset");
            run.embeddings = std::move(synth->train_embeddings);
            break;
        case EmbeddingSource::file:
            run.embeddings = load_embeddings(cfg.embeddings.path.value(), run.train.size());
            break;
        case EmbeddingSource::random_model:
            run.embeddings = random_model_embeddings(run.train, run.spec, seed);
            break;
    }
    if (cfg.fed.loss.method == Method::akd) run.spec.adapter_dim = run.embeddings.dim();
    run.fed = cfg.fed;
    run.fed.seed = seed;
    return run;
}

SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.threads > 0) set_threads(cfg.threads);
    const PreparedRun run = prepare_run(cfg, seed);
    SeedOutcome out;
    out.seed = seed;
    out.result = run_federation({run.train, run.test, run.partition, &run.embeddings}, run.spec, run.fed, cfg.execution);

    ExperimentConfig echo = cfg;
    echo.seeds = {seed};
    std::size_t noisy_clients = 0, noisy_samples = 0;
    for (const auto& c : run.client_noise) noisy_clients += c.noisy;
    for (std::uint8_t m : run.train.noise_mask) noisy_samples += m;
    const RoundReport& last = out.result.history.back();
    out.summary = json{{"type", "summary"},
                       {"seed", seed},
                       {"method", to_string(cfg.fed.loss.method)},
                       {"best_accuracy", out.result.best_accuracy()},
                       {"best_accuracy_round", out.result.best_accuracy_round},
                       {"best_macro_f1", out.result.best_macro_f1()},
                       {"best_macro_f1_round", out.result.best_macro_f1_round},
                       {"final_accuracy", last.test_accuracy},
                       {"final_macro_f1", last.test_macro_f1},
                       {"noisy_clients", noisy_clients},
                       {"noisy_samples", noisy_samples},
                       {"train_samples", run.train.size()},
                       {"config", to_json(echo)}};
    if (cfg.dump_representations) {
        std::filesystem::create_directories(cfg.output_dir);
        dump_representations(out.result.final_params, run.train,
                             cfg.output_dir / ("seed_" + std::to_string(seed) + "_features.fske"));
    }
    return out;
}

json mean_std(const std::vector<double>& values) {
    json out{{"values", values}, {"mean", nullptr}, {"std", nullptr}};
    if (values.empty()) return out;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    out["mean"] = mean;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        out["std"] = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

json run_experiment(const ExperimentConfig& cfg, bool write) {
    if (write) std::filesystem::create_directories(cfg.output_dir);
    std::vector<double> acc, f1;
    for (std::uint64_t seed : cfg.seeds) {
        const SeedOutcome outcome = run_seed(cfg, seed);
        acc.push_back(outcome.result.best_accuracy());
        f1.push_back(outcome.result.best_macro_f1());
        if (!write) continue;
        const auto path = cfg.output_dir / ("seed_" + std::to_string(seed) + ".jsonl");
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot write " + path.string());
        for (const RoundReport& r : outcome.result.history) os << json(r).dump() << '\n';
        os << outcome.summary.dump() << '\n';
        if (!os) throw IoError("write failed for " + path.string());
    }
    json summary{{"type", "sweep"},
                 {"method", to_string(cfg.fed.loss.method)},
                 {"seeds", cfg.seeds},
                 {"best_accuracy", mean_std(acc)},
                 {"best_macro_f1", mean_std(f1)},
                 {"config", to_json(cfg)}};
    if (write) {
        const auto path = cfg.output_dir / "summary.json";
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot write " + path.string());
        os << summary.dump(2) << '\n';
    }
    return summary;
}

}  // namespace ksim
