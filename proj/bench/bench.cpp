// Serial reference vs OpenMP kernels: wall time, speedup, and a bitwise
// equality check of the outputs.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include <CLI11.hpp>

#include "ksim/experiment.hpp"
#include "ksim/fed.hpp"
#include "ksim/knn.hpp"
#include "ksim/metrics.hpp"
#include "ksim/parallel.hpp"

using namespace ksim;

namespace {

template <typename F>
double best_of(int reps, F&& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

void row(const char* name, double serial, double parallel, bool same) {
    std::printf("%-22s %10.4f %10.4f %8.2fx  %s\n", name, serial, parallel, serial / parallel, same ? "identical" : "DIFFERENT");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Serial vs parallel kernel timings"};
    int reps = 3, threads = 0;
    std::size_t rounds = 5;
    app.add_option("--reps", reps, "Repetitions per kernel; the best time is reported")->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "OpenMP threads for the parallel side (0 = default)");
    app.add_option("--rounds", rounds, "Federated rounds per repetition")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);
    if (threads > 0) set_threads(threads);
    std::printf("threads %d\n%-22s %10s %10s %9s\n", max_threads(), "kernel", "serial s", "parallel s", "speedup");

    ExperimentConfig cfg;
    cfg.fed.num_clients = 20;
    cfg.fed.fraction = 0.3;
    cfg.fed.rounds = rounds;
    cfg.fed.diagnostic_clients = 0;
    const PreparedRun run = prepare_run(cfg, 1);
    const FederationInputs in{run.train, run.test, run.partition, &run.embeddings};

    FederationResult fs, fp;
    const double ts = best_of(reps, [&] { fs = run_federation(in, run.spec, run.fed, Execution::serial); });
    const double tp = best_of(reps, [&] { fp = run_federation(in, run.spec, run.fed, Execution::parallel); });
    row("federated rounds", ts, tp, fs.final_params == fp.final_params && fs.history == fp.history);

    Evaluation es, ep;
    const double es_t = best_of(reps, [&] { es = evaluate(fs.final_params, run.train, Execution::serial); });
    const double ep_t = best_of(reps, [&] { ep = evaluate(fs.final_params, run.train, Execution::parallel); });
    row("evaluate (train set)", es_t, ep_t, es.accuracy == ep.accuracy && es.macro_f1 == ep.macro_f1);

    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix batch(512, 32);
    for (double& v : batch.values()) v = n(rng);
    std::vector<Neighborhood> ks, kp;
    const double ks_t = best_of(reps, [&] { ks = batch_neighborhoods(batch, 4, Execution::serial); });
    const double kp_t = best_of(reps, [&] { kp = batch_neighborhoods(batch, 4, Execution::parallel); });
    bool same = ks.size() == kp.size();
    for (std::size_t i = 0; same && i < ks.size(); ++i)
        same = ks[i].positives == kp[i].positives && ks[i].negatives == kp[i].negatives;
    row("neighbourhoods m=512", ks_t, kp_t, same);
    return 0;
}
