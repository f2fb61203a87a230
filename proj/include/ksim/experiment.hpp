#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ksim/data.hpp"
#include "ksim/fed.hpp"
#include "ksim/parallel.hpp"
#include "ksim/synth.hpp"

namespace ksim {

enum class DatasetSource : std::uint8_t { synthetic, files };

struct DatasetFiles {
    std::filesystem::path train_features;
    std::filesystem::path train_labels;
    std::filesystem::path test_features;
    std::filesystem::path test_labels;
};

struct PartitionSpec {
    bool iid = false;
    double p = 0.7;
    double alpha = 5.0;
};

/// Either injected noise (rho, tau) or observed labels read from `labels`.
struct NoiseSpec {
    double rho = 0.7;
    double tau = 0.5;
    std::optional<std::filesystem::path> labels;
};

struct EmbeddingSpec {
    EmbeddingSource source = EmbeddingSource::synthetic;
    std::optional<std::filesystem::path> path;  // FSKE, source = file only
};

struct ExperimentConfig {
    DatasetSource dataset = DatasetSource::synthetic;
    SynthConfig synthetic;  // seed is replaced by the run seed
    DatasetFiles files;
    PartitionSpec partition;
    NoiseSpec noise;
    EmbeddingSpec embeddings;
    std::vector<std::size_t> hidden_dims{64, 32};
    FedConfig fed;  // fed.seed is replaced by the run seed
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir = "runs";
    Execution execution = Execution::parallel;
    std::size_t threads = 0;  // 0 = OpenMP default
    bool dump_representations = false;
};

/// Every key the config format accepts, with its default value.
nlohmann::json default_config_json();

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Defaults merged with `doc`. Throws ConfigError naming the first bad field;
/// use validate_config for the full list.
ExperimentConfig parse_config(const nlohmann::json& doc);

/// Field-level problems with `doc`, empty when it is runnable. Does not touch
/// the filesystem.
std::vector<std::string> validate_config(const nlohmann::json& doc);

nlohmann::json load_config_file(const std::filesystem::path& path);

/// Applies `key.path=value`. The value is read as JSON when it parses,
/// otherwise as a string. Throws ConfigError for malformed overrides.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Inputs for one seed, built deterministically from the config.
struct PreparedRun {
    Dataset train;
    Dataset test;
    Partition partition;
    std::vector<ClientNoise> client_noise;  // empty when labels came from a file
    EmbeddingStore embeddings;
    MlpSpec spec;
    FedConfig fed;
};

PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedOutcome {
    std::uint64_t seed = 0;
    FederationResult result;
    nlohmann::json summary;  // the record that closes the seed's report
};

SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Runs every seed in order. When `write` is set, each seed gets
/// `<output_dir>/seed_<s>.jsonl` and the sweep gets `summary.json`.
/// Returns the sweep summary.
nlohmann::json run_experiment(const ExperimentConfig& cfg, bool write = true);

/// Mean and sample standard deviation (null for fewer than two values).
nlohmann::json mean_std(const std::vector<double>& values);

}  // namespace ksim
