#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "neuralfuse/dataio.hpp"
#include "neuralfuse/energy.hpp"
#include "neuralfuse/eopm.hpp"
#include "neuralfuse/generators.hpp"

namespace nf {

inline constexpr const char* kCodeVersion = "1.0.0";

// One full evaluation of a quantized model, with and without the input
// transform, at one bit-error rate.
struct EvalReport {
    double ca = 0;          // clean accuracy, quantized weights, no faults
    double pa_mean = 0;     // perturbed accuracy over the eval models
    double pa_std = 0;      // population std over the eval models
    double ca_nf = 0;       // clean accuracy through the transform
    double pa_nf_mean = 0;
    double pa_nf_std = 0;
    double rp = 0;          // pa_nf_mean - pa_mean
    int n = 0;
    double ber = 0;
    uint64_t seed = 0;
    int b = 8;
};

// Samples N perturbed models from the "eval" stream namespace (indices
// 0..N-1, disjoint from the "train"/"val" namespaces by construction) and
// measures accuracy with and without the transform on the same fault
// patterns. Passing tr = nullptr reports the no-transform columns twice and
// RP = 0. Deterministic given (seed, ber, N).
EvalReport evaluate(const Surrogate& s, const InputTransform* tr, double ber,
                    int n_eval, uint64_t seed, const Dataset& test,
                    int batch_size = 100);

// CSV schema shared by all report writers; `label` identifies the row
// (protocol step, transfer target, sweep point).
extern const char* kEvalCsvHeader;
std::string eval_csv_row(const std::string& label, const EvalReport& r);
void write_eval_csv(const std::string& path,
                    const std::vector<std::pair<std::string, EvalReport>>& rows);

// Transfer protocol: evaluate one trained transform against several target
// models across bit-error rates. Row label = "<target>@<ber>".
struct TransferTarget {
    std::string name;
    const Surrogate* surrogate = nullptr;
};
std::vector<std::pair<std::string, EvalReport>> transfer_eval(
    const InputTransform* tr, const std::vector<TransferTarget>& targets,
    const std::vector<double>& bers, int n_eval, uint64_t seed,
    const Dataset& test);

// Precision sweep: re-quantize the base model at each b and evaluate.
struct PrecisionPoint {
    int b = 8;
    EvalReport report;
};
std::vector<PrecisionPoint> precision_sweep(Graph& base,
                                            const InputTransform* tr,
                                            const std::vector<int>& b_list,
                                            double ber, int n_eval,
                                            uint64_t seed,
                                            const Dataset& test);

// Energy-table regeneration from the reference fixture; writes
// es_table.csv and mac_es_table.csv (rows = base models, columns =
// generators, %.4f cells).
void write_energy_tables(const std::filesystem::path& dir,
                         const EnergyFixture& fx, double r);

// ---------------------------------------------------------------------------
// Experiment orchestration
// ---------------------------------------------------------------------------

// Parsed experiment description. Unknown JSON keys are rejected so config
// typos fail loudly. See docs/experiment-config.md for the schema.
struct ExperimentConfig {
    std::string name = "experiment";
    std::string mode = "train-eval";  // or "energy-tables"
    std::string output_dir = "out";
    uint64_t seed = 0;

    struct DatasetSpec {
        std::string kind = "synth";  // "synth" | "cifar10"
        int classes = 4;             // synth
        int per_class = 100;         // train samples per class
        int val_per_class = 25;
        int test_per_class = 50;
        int image_size = 16;
        double noise_std = 0.3;
        std::string dir;                 // cifar10 archive directory
        std::vector<int> subset_classes; // cifar10: optional class filter
    } dataset;

    struct BaseSpec {
        std::string arch = "tiny-cnn-a";
        std::string checkpoint;  // load instead of training when set
        int epochs = 6;
        int batch_size = 25;
        bool qat = false;
        // 0 = train the base model on the shared train split. > 0 = give it
        // a split of its own with this many samples per class (a separate
        // "base-train" stream for synth, the leading balanced slice of the
        // train split for cifar10). Decouples base-model capacity from the
        // generator's training-set size.
        int per_class = 0;
    } base;

    struct GeneratorSpec {
        std::string family = "conv-s";
        double scale = 1.0;
        std::string checkpoint;  // load instead of training when set
    } generator;

    EopmConfig train;

    struct EvalSpec {
        std::vector<double> bers = {0.01};
        int n = 10;
        // < 0 = reuse the experiment seed. Evaluation fault streams live in
        // their own namespace either way; a distinct seed here additionally
        // decouples the reported fault patterns from the training seed.
        int64_t seed = -1;
    } eval;

    struct EnergySpec {
        std::string fixture;  // TSV path, energy-tables mode
        double r = kLowVoltageEnergyRatio;
    } energy;

    nlohmann::json raw;  // canonical form used for the config hash

    void validate() const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

// Output root: $NEURALFUSE_OUTPUT_ROOT/<output_dir> when the variable is
// set, else <output_dir> as given.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg);

struct RunResult {
    std::filesystem::path dir;
    std::vector<std::pair<std::string, EvalReport>> reports;
    TrainHistory history;
    bool trained_base = false;
    bool trained_generator = false;
};

// One-shot pipeline: build or load the base model and generator, train as
// needed, evaluate at every configured bit-error rate, and persist
// checkpoints, history, reports, and a manifest (config hash, seed, code
// version, artifact list). Reruns of the same config produce byte-identical
// report CSVs. A failure mid-run leaves manifest.json marked incomplete
// before the error propagates; configs referencing missing checkpoints fail
// during validation, before any training.
RunResult run_experiment(const ExperimentConfig& cfg);

}  // namespace nf
