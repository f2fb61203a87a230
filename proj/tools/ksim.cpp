#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ksim/experiment.hpp"
#include "ksim/io.hpp"
#include "ksim/knn.hpp"
#include "ksim/synth.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

using nlohmann::json;

json load_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
    json doc = ksim::load_config_file(path);
    for (const auto& o : overrides) ksim::apply_override(doc, o);
    return doc;
}

int report_errors(const std::vector<std::string>& errors) {
    for (const auto& e : errors) std::cerr << "config error: " << e << '\n';
    return kExitConfig;
}

int cmd_validate(const std::string& path, const std::vector<std::string>& overrides) {
    const json doc = load_with_overrides(path, overrides);
    const auto errors = ksim::validate_config(doc);
    if (!errors.empty()) return report_errors(errors);
    std::cout << "ok\n";
    return 0;
}

int cmd_run(const std::string& path, const std::vector<std::string>& overrides, bool quiet) {
    const json doc = load_with_overrides(path, overrides);
    const auto errors = ksim::validate_config(doc);
    if (!errors.empty()) return report_errors(errors);
    const ksim::ExperimentConfig cfg = ksim::parse_config(doc);
    const json summary = ksim::run_experiment(cfg);
    if (!quiet) {
        const json& acc = summary["best_accuracy"];
        std::printf("%s: best accuracy mean %.4f", summary["method"].get<std::string>().c_str(),
                    acc["mean"].get<double>());
        if (!acc["std"].is_null()) std::printf(" std %.4f", acc["std"].get<double>());
        std::printf(" over %zu seed(s); reports in %s\n", cfg.seeds.size(), cfg.output_dir.string().c_str());
    }
    return 0;
}

// The spec file holds dataset.synthetic keys plus "seed".
int cmd_export_synth(const std::string& spec_path, const std::filesystem::path& outdir) {
    json spec = ksim::load_config_file(spec_path);
    std::uint64_t seed = 0;
    if (spec.is_object() && spec.contains("seed")) {
        if (!spec["seed"].is_number_unsigned()) return report_errors({"seed: expected a non-negative integer"});
        seed = spec["seed"].get<std::uint64_t>();
        spec.erase("seed");
    }
    const json doc{{"dataset", {{"synthetic", spec}}}};
    const auto errors = ksim::validate_config(doc);
    if (!errors.empty()) return report_errors(errors);
    ksim::SynthConfig sc = ksim::parse_config(doc).synthetic;
    sc.seed = seed;
    const ksim::SyntheticData data = ksim::synth_clusters(sc);

    std::filesystem::create_directories(outdir);
    ksim::write_matrix_file(outdir / "train_features.fske", data.train.features);
    ksim::write_label_file(outdir / "train_labels.fskl", {data.train.clean_labels, data.train.num_classes});
    ksim::write_matrix_file(outdir / "train_embeddings.fske", data.train_embeddings.embeddings);
    ksim::write_matrix_file(outdir / "test_features.fske", data.test.features);
    ksim::write_label_file(outdir / "test_labels.fskl", {data.test.clean_labels, data.test.num_classes});
    ksim::write_matrix_file(outdir / "test_embeddings.fske", data.test_embeddings.embeddings);
    std::printf("wrote %zu train and %zu test rows to %s\n", data.train.size(), data.test.size(), outdir.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated label-noise simulator"};
    app.require_subcommand(1);

    std::string config;
    std::vector<std::string> overrides;
    bool quiet = false;
    auto* run = app.add_subcommand("run", "Run every seed of an experiment config");
    run->add_option("config", config, "JSON config file")->required();
    run->add_option("overrides", overrides, "key.path=value overrides");
    run->add_flag("-q,--quiet", quiet, "No summary line");

    auto* validate = app.add_subcommand("validate", "Check a config and list every problem");
    validate->add_option("config", config, "JSON config file")->required();
    validate->add_option("overrides", overrides, "key.path=value overrides");

    std::string spec;
    std::string outdir;
    auto* exp = app.add_subcommand("export-synth", "Write the synthetic benchmark as FSKE/FSKL files");
    exp->add_option("spec", spec, "JSON file with generator settings and seed")->required();
    exp->add_option("outdir", outdir, "Output directory")->required();

    app.add_subcommand("defaults", "Print the default config");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config, overrides, quiet);
        if (*validate) return cmd_validate(config, overrides);
        if (*exp) return cmd_export_synth(spec, outdir);
        std::cout << ksim::default_config_json().dump(2) << '\n';
        return 0;
    } catch (const ksim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ksim::FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ksim::AlignmentError& e) {
        std::cerr << "alignment error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ksim::IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
