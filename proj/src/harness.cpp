#include "neuralfuse/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "neuralfuse/checkpoint.hpp"
#include "neuralfuse/errors.hpp"
#include "neuralfuse/faults.hpp"
#include "neuralfuse/models.hpp"
#include "neuralfuse/quant.hpp"

namespace nf {
namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot open '" + path.string() +
                                  "' for writing");
    out << text;
    if (!out) throw ArgumentError("failed writing '" + path.string() + "'");
}

// Strict key checking so config typos surface as errors, not silent
// defaults.
void check_keys(const nlohmann::json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object())
        throw FormatError("config section '" + section +
                          "' must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) known = true;
        if (!known)
            throw FormatError("unknown config key '" + section + "." +
                              it.key() + "'");
    }
}

Dataset slice(const Dataset& d, int from, int to, std::string split) {
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(to - from));
    for (int i = from; i < to; ++i) idx.push_back(i);
    Dataset out;
    out.images = d.gather(idx);
    out.labels = d.gather_labels(idx);
    out.num_classes = d.num_classes;
    out.split = std::move(split);
    return out;
}

void build_datasets(const ExperimentConfig& cfg, Dataset& train, Dataset& val,
                    Dataset& test) {
    const auto& ds = cfg.dataset;
    if (ds.kind == "synth") {
        train = synth_dataset(ds.classes, ds.per_class, ds.image_size,
                              cfg.seed, "train", ds.noise_std);
        val = synth_dataset(ds.classes, ds.val_per_class, ds.image_size,
                            cfg.seed, "val", ds.noise_std);
        test = synth_dataset(ds.classes, ds.test_per_class, ds.image_size,
                             cfg.seed, "test", ds.noise_std);
        return;
    }
    auto [train_full, test_full] = load_cifar10(ds.dir);
    std::vector<int> classes = ds.subset_classes;
    if (classes.empty())
        for (int c = 0; c < 10; ++c) classes.push_back(c);
    // One balanced draw, then a prefix split: the subset interleaves classes
    // round-robin, so any prefix of a multiple of |classes| stays balanced.
    Dataset big = subset(train_full, classes, ds.per_class + ds.val_per_class,
                         cfg.seed);
    const int n_train = static_cast<int>(classes.size()) * ds.per_class;
    train = slice(big, 0, n_train, "train");
    val = slice(big, n_train, big.size(), "val");
    test = subset(test_full, classes, ds.test_per_class, cfg.seed);
    test.split = "test";
}

// Dedicated base-model training split (base.per_class > 0): a fresh stream
// for synth, the leading balanced slice of train for cifar10.
Dataset build_base_split(const ExperimentConfig& cfg, const Dataset& train) {
    const auto& ds = cfg.dataset;
    if (ds.kind == "synth")
        return synth_dataset(ds.classes, cfg.base.per_class, ds.image_size,
                             cfg.seed, "base-train", ds.noise_std);
    return slice(train, 0, train.num_classes * cfg.base.per_class,
                 "base-train");
}

void write_manifest(const std::filesystem::path& dir,
                    const ExperimentConfig& cfg,
                    const std::vector<std::string>& artifacts,
                    const std::string& status, const std::string& error) {
    nlohmann::json m;
    m["name"] = cfg.name;
    m["status"] = status;
    if (!error.empty()) m["error"] = error;
    char hash[32];
    std::snprintf(hash, sizeof(hash), "fnv1a:%016llx",
                  static_cast<unsigned long long>(fnv1a64(cfg.raw.dump())));
    m["config_hash"] = hash;
    m["seed"] = cfg.seed;
    m["code_version"] = kCodeVersion;
    m["mode"] = cfg.mode;
    m["artifacts"] = artifacts;
    m["config"] = cfg.raw;
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace

// ---------------------------------------------------------------------------
// Evaluation protocols
// ---------------------------------------------------------------------------

EvalReport evaluate(const Surrogate& s, const InputTransform* tr, double ber,
                    int n_eval, uint64_t seed, const Dataset& test,
                    int batch_size) {
    if (s.graph == nullptr) throw ArgumentError("null surrogate");
    if (test.size() == 0) throw ArgumentError("empty test set");
    if (n_eval < 1) throw ArgumentError("n_eval must be >= 1");
    BitErrorSpec spec{ber, seed, s.q.b, "eval"};
    spec.validate();

    EvalReport r;
    r.n = n_eval;
    r.ber = ber;
    r.seed = seed;
    r.b = s.q.b;

    const Graph& g = *s.graph;
    r.ca = model_accuracy(g, test, &s.clean, nullptr, batch_size);
    r.ca_nf = tr ? model_accuracy(g, test, &s.clean, tr, batch_size) : r.ca;

    double sum = 0, sq = 0, nf_sum = 0, nf_sq = 0;
    for (int i = 0; i < n_eval; ++i) {
        PerturbedModel pm =
            sample_perturbed_model(g, s.q, spec, static_cast<uint64_t>(i));
        double a = model_accuracy(g, test, &pm.overlay, nullptr, batch_size);
        double a_nf =
            tr ? model_accuracy(g, test, &pm.overlay, tr, batch_size) : a;
        sum += a;
        sq += a * a;
        nf_sum += a_nf;
        nf_sq += a_nf * a_nf;
    }
    const double n = static_cast<double>(n_eval);
    r.pa_mean = sum / n;
    r.pa_std = std::sqrt(std::max(0.0, sq / n - r.pa_mean * r.pa_mean));
    r.pa_nf_mean = nf_sum / n;
    r.pa_nf_std =
        std::sqrt(std::max(0.0, nf_sq / n - r.pa_nf_mean * r.pa_nf_mean));
    r.rp = r.pa_nf_mean - r.pa_mean;
    return r;
}

const char* kEvalCsvHeader =
    "label,b,ber,n,seed,CA,PA_mean,PA_std,CA_NF,PA_NF_mean,PA_NF_std,RP";

std::string eval_csv_row(const std::string& label, const EvalReport& r) {
    std::ostringstream row;
    row << label << ',' << r.b << ',' << fmt(r.ber) << ',' << r.n << ','
        << r.seed << ',' << fmt(r.ca) << ',' << fmt(r.pa_mean) << ','
        << fmt(r.pa_std) << ',' << fmt(r.ca_nf) << ',' << fmt(r.pa_nf_mean)
        << ',' << fmt(r.pa_nf_std) << ',' << fmt(r.rp);
    return row.str();
}

void write_eval_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::ostringstream out;
    out << kEvalCsvHeader << '\n';
    for (const auto& [label, report] : rows)
        out << eval_csv_row(label, report) << '\n';
    write_text(path, out.str());
}

std::vector<std::pair<std::string, EvalReport>> transfer_eval(
    const InputTransform* tr, const std::vector<TransferTarget>& targets,
    const std::vector<double>& bers, int n_eval, uint64_t seed,
    const Dataset& test) {
    if (targets.empty()) throw ArgumentError("no transfer targets");
    if (bers.empty()) throw ArgumentError("no bit-error rates");
    std::vector<std::pair<std::string, EvalReport>> cells;
    for (const TransferTarget& t : targets) {
        if (t.surrogate == nullptr)
            throw ArgumentError("null surrogate for target '" + t.name + "'");
        for (double ber : bers) {
            char label[96];
            std::snprintf(label, sizeof(label), "%s@%.4f", t.name.c_str(),
                          ber);
            cells.emplace_back(
                label, evaluate(*t.surrogate, tr, ber, n_eval, seed, test));
        }
    }
    return cells;
}

std::vector<PrecisionPoint> precision_sweep(Graph& base,
                                            const InputTransform* tr,
                                            const std::vector<int>& b_list,
                                            double ber, int n_eval,
                                            uint64_t seed,
                                            const Dataset& test) {
    if (b_list.empty()) throw ArgumentError("empty precision list");
    for (int b : b_list) check_precision(b);
    std::vector<PrecisionPoint> points;
    points.reserve(b_list.size());
    for (int b : b_list) {
        Surrogate s = make_surrogate(base, b);
        points.push_back({b, evaluate(s, tr, ber, n_eval, seed, test)});
    }
    return points;
}

void write_energy_tables(const std::filesystem::path& dir,
                         const EnergyFixture& fx, double r) {
    const std::vector<std::string> bases = fx.names("base");
    const std::vector<std::string> gens = fx.names("generator");
    auto emit = [&](const char* file, bool mac_based) {
        std::ostringstream out;
        out << "base";
        for (const std::string& g : gens) out << ',' << g;
        out << '\n';
        for (const std::string& b : bases) {
            out << b;
            for (const std::string& g : gens) {
                EnergyReport rep = make_energy_report(
                    fx.at("base", b), fx.at("generator", g), r);
                char cell[32];
                std::snprintf(cell, sizeof(cell), ",%.4f",
                              mac_based ? rep.mac_es : rep.es);
                out << cell;
            }
            out << '\n';
        }
        write_text(dir / file, out.str());
    };
    emit("es_table.csv", false);
    emit("mac_es_table.csv", true);
}

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (mode != "train-eval" && mode != "energy-tables")
        throw ArgumentError("unknown experiment mode '" + mode + "'");
    if (name.empty()) throw ArgumentError("experiment name must be non-empty");
    if (output_dir.empty()) throw ArgumentError("output_dir must be set");
    if (mode == "energy-tables") {
        if (energy.fixture.empty())
            throw ArgumentError("energy-tables mode needs energy.fixture");
        if (energy.r <= 0 || energy.r > 1)
            throw ArgumentError("energy ratio must be in (0, 1]");
        return;
    }
    if (dataset.kind != "synth" && dataset.kind != "cifar10")
        throw ArgumentError("unknown dataset kind '" + dataset.kind + "'");
    if (dataset.kind == "cifar10" && dataset.dir.empty())
        throw ArgumentError("cifar10 dataset needs dataset.dir");
    if (dataset.per_class < 1 || dataset.val_per_class < 1 ||
        dataset.test_per_class < 1)
        throw ArgumentError("dataset sample counts must be >= 1");
    const auto& archs = base_model_names();
    if (std::find(archs.begin(), archs.end(), base.arch) == archs.end())
        throw ArgumentError("unknown base architecture '" + base.arch + "'");
    if (base.epochs < 1 || base.batch_size < 1)
        throw ArgumentError("base epochs and batch_size must be >= 1");
    if (base.per_class < 0)
        throw ArgumentError("base.per_class must be >= 0");
    if (dataset.kind == "cifar10" && base.per_class > dataset.per_class)
        throw ArgumentError(
            "base.per_class cannot exceed dataset.per_class for cifar10");
    if (!is_generator_family(generator.family))
        throw ArgumentError("unknown generator family '" + generator.family +
                            "'");
    if (generator.scale <= 0)
        throw ArgumentError("generator scale must be > 0");
    train.validate();
    if (eval.bers.empty()) throw ArgumentError("eval.bers must be non-empty");
    for (double p : eval.bers) BitErrorSpec{p, 0, train.b, "eval"}.validate();
    if (eval.n < 1) throw ArgumentError("eval.n must be >= 1");
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.raw = j;
    check_keys(j, "<root>",
               {"name", "mode", "output_dir", "seed", "dataset", "base",
                "generator", "train", "eval", "energy"});
    cfg.name = j.value("name", cfg.name);
    cfg.mode = j.value("mode", cfg.mode);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.seed = j.value("seed", cfg.seed);

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        check_keys(d, "dataset",
                   {"kind", "classes", "per_class", "val_per_class",
                    "test_per_class", "image_size", "noise_std", "dir",
                    "subset_classes"});
        auto& out = cfg.dataset;
        out.kind = d.value("kind", out.kind);
        out.classes = d.value("classes", out.classes);
        out.per_class = d.value("per_class", out.per_class);
        out.val_per_class = d.value("val_per_class", out.val_per_class);
        out.test_per_class = d.value("test_per_class", out.test_per_class);
        out.image_size = d.value("image_size", out.image_size);
        out.noise_std = d.value("noise_std", out.noise_std);
        out.dir = d.value("dir", out.dir);
        if (d.contains("subset_classes"))
            out.subset_classes =
                d.at("subset_classes").get<std::vector<int>>();
    }
    if (j.contains("base")) {
        const auto& b = j.at("base");
        check_keys(b, "base",
                   {"arch", "checkpoint", "epochs", "batch_size", "qat",
                    "per_class"});
        cfg.base.arch = b.value("arch", cfg.base.arch);
        cfg.base.checkpoint = b.value("checkpoint", cfg.base.checkpoint);
        cfg.base.epochs = b.value("epochs", cfg.base.epochs);
        cfg.base.batch_size = b.value("batch_size", cfg.base.batch_size);
        cfg.base.qat = b.value("qat", cfg.base.qat);
        cfg.base.per_class = b.value("per_class", cfg.base.per_class);
    }
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        check_keys(g, "generator", {"family", "scale", "checkpoint"});
        cfg.generator.family = g.value("family", cfg.generator.family);
        cfg.generator.scale = g.value("scale", cfg.generator.scale);
        cfg.generator.checkpoint =
            g.value("checkpoint", cfg.generator.checkpoint);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, "train",
                   {"lambda", "n_perturbed", "ber", "epochs", "batch_size",
                    "lr", "beta1", "beta2", "adam_eps", "b"});
        cfg.train.lambda = t.value("lambda", cfg.train.lambda);
        cfg.train.n_perturbed = t.value("n_perturbed", cfg.train.n_perturbed);
        cfg.train.ber = t.value("ber", cfg.train.ber);
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.adam.lr = t.value("lr", cfg.train.adam.lr);
        cfg.train.adam.beta1 = t.value("beta1", cfg.train.adam.beta1);
        cfg.train.adam.beta2 = t.value("beta2", cfg.train.adam.beta2);
        cfg.train.adam.eps = t.value("adam_eps", cfg.train.adam.eps);
        cfg.train.b = t.value("b", cfg.train.b);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        check_keys(e, "eval", {"bers", "n", "seed"});
        if (e.contains("bers"))
            cfg.eval.bers = e.at("bers").get<std::vector<double>>();
        cfg.eval.n = e.value("n", cfg.eval.n);
        cfg.eval.seed = e.value("seed", cfg.eval.seed);
    }
    if (j.contains("energy")) {
        const auto& e = j.at("energy");
        check_keys(e, "energy", {"fixture", "r"});
        cfg.energy.fixture = e.value("fixture", cfg.energy.fixture);
        cfg.energy.r = e.value("r", cfg.energy.r);
    }
    // Derived coupling: the training loop seeds its streams from the
    // experiment seed.
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("config '" + path + "': " + e.what());
    }
    return parse_experiment_config(j);
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg) {
    const char* root = std::getenv("NEURALFUSE_OUTPUT_ROOT");
    if (root != nullptr && *root != '\0')
        return std::filesystem::path(root) / cfg.output_dir;
    return cfg.output_dir;
}

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

RunResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::filesystem::path dir = resolve_output_dir(cfg);
    std::filesystem::create_directories(dir);

    RunResult res;
    res.dir = dir;

    if (cfg.mode == "energy-tables") {
        EnergyFixture fx = load_energy_fixture(cfg.energy.fixture);
        write_energy_tables(dir, fx, cfg.energy.r);
        write_manifest(dir, cfg, {"es_table.csv", "mac_es_table.csv"},
                       "complete", "");
        return res;
    }

    // Referenced checkpoints must exist before any work starts.
    for (const std::string& path :
         {cfg.base.checkpoint, cfg.generator.checkpoint})
        if (!path.empty() && !std::filesystem::exists(path))
            throw ArgumentError("checkpoint '" + path + "' does not exist");

    std::vector<std::string> artifacts;
    try {
        Dataset train, val, test;
        build_datasets(cfg, train, val, test);

        Graph base;
        if (!cfg.base.checkpoint.empty()) {
            base = std::move(load_checkpoint(cfg.base.checkpoint).graph);
        } else {
            BaseTrainConfig bc;
            bc.epochs = cfg.base.epochs;
            bc.batch_size = cfg.base.batch_size;
            bc.seed = cfg.seed;
            bc.qat = cfg.base.qat;
            bc.b = cfg.train.b;
            const Dataset base_data = cfg.base.per_class > 0
                                          ? build_base_split(cfg, train)
                                          : train;
            base = train_base(cfg.base.arch, base_data, bc);
            save_checkpoint((dir / "base.nfck").string(), base);
            artifacts.push_back("base.nfck");
            res.trained_base = true;
        }
        Surrogate sur = make_surrogate(base, cfg.train.b);

        Generator gen;
        if (!cfg.generator.checkpoint.empty()) {
            gen = load_generator(cfg.generator.checkpoint);
        } else {
            gen = build_generator(GeneratorArch{
                cfg.generator.family, cfg.generator.scale, train.sample_shape()});
            gen.graph.init_params(StreamKey(cfg.seed) / "gen-init");
            zero_init_output(gen);
            auto [trained, hist] =
                train_generator(cfg.train, std::move(gen), {&sur}, train, val);
            gen = std::move(trained);
            res.history = std::move(hist);
            res.trained_generator = true;
            save_generator((dir / "generator.nfck").string(), gen);
            res.history.write_csv((dir / "history.csv").string());
            artifacts.push_back("generator.nfck");
            artifacts.push_back("history.csv");
        }

        GeneratorTransform gt(std::move(gen));
        const uint64_t eval_seed =
            cfg.eval.seed < 0 ? cfg.seed
                              : static_cast<uint64_t>(cfg.eval.seed);
        for (double ber : cfg.eval.bers)
            res.reports.emplace_back(
                "eval", evaluate(sur, &gt, ber, cfg.eval.n, eval_seed, test));
        write_eval_csv((dir / "reports.csv").string(), res.reports);
        artifacts.push_back("reports.csv");
    } catch (const std::exception& e) {
        write_manifest(dir, cfg, artifacts, "incomplete", e.what());
        throw;
    }

    write_manifest(dir, cfg, artifacts, "complete", "");
    return res;
}

}  // namespace nf
