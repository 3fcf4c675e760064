#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "neuralfuse/dataio.hpp"
#include "neuralfuse/eopm.hpp"
#include "neuralfuse/errors.hpp"
#include "neuralfuse/models.hpp"

using namespace nf;

namespace {

Tensor rand_input(const std::vector<int>& shape, uint64_t seed) {
    Rng rng = (StreamKey(seed) / "x").rng();
    Tensor x = Tensor::zeros(shape);
    for (double& v : x.data) v = 2.0 * rng.uniform() - 1.0;
    return x;
}

Graph trained_tiny(const std::string& arch, uint64_t seed, int classes = 2,
                   int hw = 16, int epochs = 2) {
    Dataset train = synth_dataset(classes, 40, hw, seed);
    BaseTrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 20;
    cfg.seed = seed;
    return train_base(arch, train, cfg);
}

std::vector<std::vector<double>> snapshot(const Graph& g) {
    std::vector<std::vector<double>> out;
    for (const Param& p : g.params()) out.push_back(p.value.data);
    return out;
}

GeneratorTransform fresh_generator(uint64_t seed, int hw = 16) {
    Generator gen = build_generator(GeneratorArch{"conv-s", 0.25, {3, hw, hw}});
    gen.graph.init_params(StreamKey(seed) / "gen-init");
    zero_init_output(gen);
    return GeneratorTransform(std::move(gen));
}

// Relative gradient comparison with a denominator floor at 1e-6 of the
// largest gradient magnitude. Constant offsets feeding batchnorm have
// exactly-zero true gradients, and both computation paths leave only
// reassociation residue (~|grad|_max * 1e-15) there; an absolute floor would
// turn that noise into fake errors, while any genuine aggregation bug still
// shows up at O(1).
double max_grad_rel_diff(std::vector<Tensor*> a, std::vector<Tensor*> b) {
    REQUIRE(a.size() == b.size());
    double scale = 1e-8;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t k = 0; k < a[i]->data.size(); ++k)
            scale = std::max(
                {scale, std::abs(a[i]->data[k]), std::abs(b[i]->data[k])});
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i]->shape == b[i]->shape);
        for (size_t k = 0; k < a[i]->data.size(); ++k) {
            double av = a[i]->data[k], bv = b[i]->data[k];
            double rel = std::abs(av - bv) /
                         std::max({std::abs(av), std::abs(bv), 1e-6 * scale});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// total_loss
// ---------------------------------------------------------------------------

TEST_CASE("total_loss components combine as m0 + lambda * mean(mp)") {
    Graph base = trained_tiny("tiny-cnn-a", 101);
    Surrogate sur = make_surrogate(base, 8);
    UipTransform tr({3, 16, 16});

    Dataset d = synth_dataset(2, 6, 16, 7, "test");
    std::vector<int> idx = {0, 1, 2, 3};
    Tensor x = d.gather(idx);
    std::vector<int> y = d.gather_labels(idx);

    BitErrorSpec spec{0.01, 33, 8, "train"};
    std::vector<PerturbedModel> models;
    for (uint64_t i = 0; i < 3; ++i)
        models.push_back(sample_perturbed_model(base, sur.q, spec, i));

    SUBCASE("lambda 0 leaves only the clean term") {
        LossBreakdown lb = total_loss(tr, sur, models, x, y, 0.0);
        CHECK(lb.total == lb.m0);
        CHECK(lb.mp > 0.0);
    }

    SUBCASE("single model: perturbed term is that model's loss") {
        std::vector<PerturbedModel> one;
        one.push_back(sample_perturbed_model(base, sur.q, spec, 5));
        LossBreakdown lb = total_loss(tr, sur, one, x, y, 5.0);
        Tensor fx = tr.apply(x);
        double direct =
            forward_eval(base, fx, &y, &one[0].overlay).data.at(0);
        CHECK(lb.mp == doctest::Approx(direct).epsilon(1e-12));
        CHECK(lb.total == doctest::Approx(lb.m0 + 5.0 * lb.mp).epsilon(1e-12));
    }

    SUBCASE("zero bit-error rate reduces every model to the clean one") {
        BitErrorSpec clean_spec{0.0, 33, 8, "train"};
        std::vector<PerturbedModel> quiet;
        for (uint64_t i = 0; i < 3; ++i)
            quiet.push_back(sample_perturbed_model(base, sur.q, clean_spec, i));
        LossBreakdown lb = total_loss(tr, sur, quiet, x, y, 2.0);
        Tensor fx = tr.apply(x);
        double clean = forward_eval(base, fx, &y, &sur.clean).data.at(0);
        CHECK(lb.mp == doctest::Approx(clean).epsilon(1e-12));
        for (const PerturbedModel& pm : quiet) {
            double li = forward_eval(base, fx, &y, &pm.overlay).data.at(0);
            CHECK(li == lb.mp);
        }
    }

    SUBCASE("empty model list is rejected") {
        CHECK_THROWS_AS(total_loss(tr, sur, {}, x, y, 1.0), ArgumentError);
    }
}

// ---------------------------------------------------------------------------
// eopm_step
// ---------------------------------------------------------------------------

TEST_CASE("aggregated gradient equals per-model backward sums (both paths)") {
    // Two surrogates exercise the ensemble average; the manual path runs one
    // scaled backward per model and accumulates, the step under test
    // backpropagates the summed output gradient once.
    Graph base_a = trained_tiny("tiny-cnn-a", 201);
    Graph base_b = trained_tiny("tiny-cnn-b", 202);
    Surrogate sur_a = make_surrogate(base_a, 8);
    Surrogate sur_b = make_surrogate(base_b, 8);
    std::vector<Surrogate*> surs = {&sur_a, &sur_b};
    const int S = 2;

    Dataset d = synth_dataset(2, 6, 16, 17, "test");
    std::vector<int> idx = {0, 1, 2, 3, 4};
    Tensor x = d.gather(idx);
    std::vector<int> y = d.gather_labels(idx);

    EopmConfig cfg;
    cfg.lambda = 5.0;
    cfg.n_perturbed = 3;
    cfg.ber = 0.01;
    cfg.seed = 99;
    cfg.adam.lr = 0.0;  // keep parameters fixed so only gradients matter

    for (int64_t iteration : {int64_t{0}, int64_t{7}}) {
        CAPTURE(iteration);
        GeneratorTransform tr1 = fresh_generator(55);
        GeneratorTransform tr2 = fresh_generator(55);

        Adam opt(tr1.param_values(), tr1.param_grads(), cfg.adam);
        eopm_step(tr1, surs, x, y, cfg, iteration, opt);

        // Manual per-model aggregation on the twin transform.
        Tensor fx = tr2.apply_train(x);
        tr2.zero_grads();
        const BitErrorSpec spec{cfg.ber, cfg.seed, cfg.b, "train"};
        for (int s = 0; s < S; ++s) {
            Surrogate& sur = *surs[size_t(s)];
            Tape t0;
            forward_train(*sur.graph, fx, t0, &y, &sur.clean, false);
            tr2.backward(backward(*sur.graph, t0, nullptr, 1.0 / S));
            for (int i = 0; i < cfg.n_perturbed; ++i) {
                int64_t sidx =
                    train_stream_index(iteration, cfg.n_perturbed, i, s, S);
                PerturbedModel pm = sample_perturbed_model(
                    *sur.graph, sur.q, spec, uint64_t(sidx));
                Tape ti;
                forward_train(*sur.graph, fx, ti, &y, &pm.overlay, false);
                tr2.backward(backward(*sur.graph, ti, nullptr,
                                      cfg.lambda / (S * cfg.n_perturbed)));
            }
        }

        double worst = max_grad_rel_diff(tr1.param_grads(), tr2.param_grads());
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("lambda 0 with p 0 reduces to clean cross-entropy training") {
    Graph base = trained_tiny("tiny-cnn-a", 301);
    Surrogate sur = make_surrogate(base, 8);
    std::vector<Surrogate*> surs = {&sur};

    Dataset d = synth_dataset(2, 5, 16, 23, "test");
    std::vector<int> idx = {0, 1, 2, 3};
    Tensor x = d.gather(idx);
    std::vector<int> y = d.gather_labels(idx);

    EopmConfig cfg;
    cfg.lambda = 0.0;
    cfg.n_perturbed = 1;
    cfg.ber = 0.0;
    cfg.seed = 5;
    cfg.adam.lr = 0.0;

    GeneratorTransform tr1 = fresh_generator(77);
    Adam opt(tr1.param_values(), tr1.param_grads(), cfg.adam);
    eopm_step(tr1, surs, x, y, cfg, 0, opt);

    GeneratorTransform tr2 = fresh_generator(77);
    Tensor fx = tr2.apply_train(x);
    tr2.zero_grads();
    Tape t0;
    forward_train(*sur.graph, fx, t0, &y, &sur.clean, false);
    tr2.backward(backward(*sur.graph, t0));

    CHECK(max_grad_rel_diff(tr1.param_grads(), tr2.param_grads()) < 1e-9);
}

TEST_CASE("fixed seed gives a bit-identical parameter trajectory") {
    Graph base = trained_tiny("tiny-cnn-a", 401);
    Surrogate sur = make_surrogate(base, 8);
    std::vector<Surrogate*> surs = {&sur};

    Dataset d = synth_dataset(2, 10, 16, 29);
    std::vector<int> idx = {0, 1, 2, 3, 4, 5};
    Tensor x = d.gather(idx);
    std::vector<int> y = d.gather_labels(idx);

    EopmConfig cfg;
    cfg.n_perturbed = 2;
    cfg.ber = 0.01;
    cfg.seed = 12;

    auto run = [&] {
        GeneratorTransform tr = fresh_generator(13);
        Adam opt(tr.param_values(), tr.param_grads(), cfg.adam);
        for (int64_t it = 0; it < 3; ++it)
            eopm_step(tr, surs, x, y, cfg, it, opt);
        std::vector<std::vector<double>> out;
        for (Tensor* t : tr.param_values()) out.push_back(t->data);
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("surrogate weights are bitwise untouched by generator steps") {
    Graph base = trained_tiny("tiny-cnn-b", 501);
    auto before = snapshot(base);
    Surrogate sur = make_surrogate(base, 8);
    std::vector<Surrogate*> surs = {&sur};

    Dataset d = synth_dataset(2, 8, 16, 31);
    std::vector<int> idx = {0, 1, 2, 3};
    Tensor x = d.gather(idx);
    std::vector<int> y = d.gather_labels(idx);

    EopmConfig cfg;
    cfg.n_perturbed = 2;
    cfg.ber = 0.02;
    GeneratorTransform tr = fresh_generator(19);
    Adam opt(tr.param_values(), tr.param_grads(), cfg.adam);
    for (int64_t it = 0; it < 2; ++it) eopm_step(tr, surs, x, y, cfg, it, opt);

    CHECK(snapshot(base) == before);
}

TEST_CASE("non-finite loss aborts with iteration diagnostics") {
    Graph base = trained_tiny("tiny-cnn-a", 601);
    Surrogate sur = make_surrogate(base, 8);
    std::vector<Surrogate*> surs = {&sur};

    Tensor x = Tensor::full({2, 3, 16, 16},
                            std::numeric_limits<double>::quiet_NaN());
    std::vector<int> y = {0, 1};

    EopmConfig cfg;
    cfg.n_perturbed = 1;
    UipTransform tr({3, 16, 16});
    Adam opt(tr.param_values(), tr.param_grads(), cfg.adam);
    try {
        eopm_step(tr, surs, x, y, cfg, 42, opt);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        std::string msg = e.what();
        CHECK(msg.find("42") != std::string::npos);
        CHECK(msg.find("L_M0") != std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// train_base
// ---------------------------------------------------------------------------

TEST_CASE("base trainer reaches 90% on a two-class synthetic task") {
    Dataset train = synth_dataset(2, 100, 16, 71);
    Dataset test = synth_dataset(2, 40, 16, 71, "test");
    BaseTrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 25;
    cfg.seed = 71;
    Graph g = train_base("tiny-cnn-a", train, cfg);
    double acc = model_accuracy(g, test);
    CHECK(acc > 90.0);
}

TEST_CASE("quantization-aware training then 8-bit quantization costs < 1pp") {
    Dataset train = synth_dataset(3, 80, 16, 81);
    Dataset test = synth_dataset(3, 40, 16, 81, "test");
    BaseTrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 25;
    cfg.seed = 81;

    Graph f = train_base("tiny-cnn-a", train, cfg);
    double float_acc = model_accuracy(f, test);

    cfg.qat = true;
    Graph q = train_base("tiny-cnn-a", train, cfg);
    ParamOverlay deq = dequantize_overlay(quantize_model(q, 8));
    double quant_acc = model_accuracy(q, test, &deq);

    CHECK(float_acc - quant_acc < 1.0);
}

TEST_CASE("base training is deterministic for a fixed seed") {
    Dataset train = synth_dataset(2, 30, 16, 91);
    BaseTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 15;
    cfg.seed = 91;
    Graph a = train_base("tiny-cnn-a", train, cfg);
    Graph b = train_base("tiny-cnn-a", train, cfg);
    CHECK(snapshot(a) == snapshot(b));
}

// ---------------------------------------------------------------------------
// train_transform / train_generator
// ---------------------------------------------------------------------------

TEST_CASE("generator training records history and keeps the best epoch") {
    Graph base = trained_tiny("tiny-cnn-a", 701, 2, 16, 4);
    Surrogate sur = make_surrogate(base, 8);
    std::vector<Surrogate*> surs = {&sur};

    Dataset train = synth_dataset(2, 30, 16, 703);
    Dataset val = synth_dataset(2, 12, 16, 703, "val");

    EopmConfig cfg;
    cfg.lambda = 5.0;
    cfg.n_perturbed = 2;
    cfg.ber = 0.01;
    cfg.epochs = 3;
    cfg.batch_size = 20;
    cfg.seed = 7;

    Generator gen = build_generator(GeneratorArch{"conv-s", 0.25, {3, 16, 16}});
    gen.graph.init_params(StreamKey(7) / "gen-init");
    zero_init_output(gen);
    auto before = snapshot(base);
    auto [trained, hist] =
        train_generator(cfg, std::move(gen), surs, train, val);

    CHECK(hist.loss_m0.size() == 3);
    CHECK(hist.loss_mp.size() == 3);
    CHECK(hist.loss_total.size() == 3);
    CHECK(hist.ca_val.size() == 3);
    CHECK(hist.pa_val.size() == 3);
    REQUIRE(hist.best_epoch >= 0);
    REQUIRE(hist.best_epoch < 3);
    CHECK(hist.best_pa_val ==
          doctest::Approx(hist.pa_val[size_t(hist.best_epoch)]));
    for (double v : hist.pa_val) CHECK(v <= hist.best_pa_val);
    for (size_t e = 0; e < 3; ++e)
        CHECK(hist.loss_total[e] == doctest::Approx(
                  hist.loss_m0[e] + cfg.lambda * hist.loss_mp[e]));
    CHECK(snapshot(base) == before);

    // The returned generator carries the best-epoch parameters: retraining
    // with a 1-epoch budget equal to the best epoch + 1 must reproduce them
    // when the best epoch is the last one; at minimum the arch survives.
    CHECK(trained.arch.family == "conv-s");
    CHECK(trained.graph.param_count(true) ==
          build_generator(trained.arch).graph.param_count(true));

    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "nf_eopm_test";
    fs::create_directories(dir);
    std::string csv = (dir / "history.csv").string();
    hist.write_csv(csv);
    std::string text = slurp(csv);
    CHECK(text.rfind("epoch,L_M0,L_Mp,L_total,CA_val,PA_val\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    hist.write_csv(csv);
    CHECK(slurp(csv) == text);
    fs::remove_all(dir);
}

TEST_CASE("returned transform reproduces its recorded validation accuracy") {
    Graph base = trained_tiny("tiny-cnn-a", 811, 2, 16, 4);
    Surrogate sur = make_surrogate(base, 8);
    std::vector<Surrogate*> surs = {&sur};

    Dataset train = synth_dataset(2, 40, 16, 813);
    Dataset val = synth_dataset(2, 15, 16, 813, "val");

    EopmConfig cfg;
    cfg.lambda = 5.0;
    cfg.n_perturbed = 2;
    cfg.ber = 0.02;
    cfg.epochs = 6;
    cfg.batch_size = 20;
    cfg.seed = 11;

    // unet-s carries batchnorm running statistics: checkpoint restore must
    // bring back the complete best-epoch state, not just trainable weights.
    // Best-epoch weights paired with final-epoch running stats evaluate to
    // a different (sometimes wildly different) function.
    Generator gen = build_generator(GeneratorArch{"unet-s", 0.5, {3, 16, 16}});
    gen.graph.init_params(StreamKey(11) / "gen-init");
    zero_init_output(gen);
    auto [trained, hist] =
        train_generator(cfg, std::move(gen), surs, train, val);

    GeneratorTransform tr(std::move(trained));
    const BitErrorSpec val_spec{cfg.ber, cfg.seed, cfg.b, "val"};
    double pa = 0;
    for (int k = 0; k < cfg.val_streams; ++k) {
        PerturbedModel vm = sample_perturbed_model(*surs[0]->graph, surs[0]->q,
                                                   val_spec, uint64_t(k));
        pa += model_accuracy(*surs[0]->graph, val, &vm.overlay, &tr);
    }
    pa /= cfg.val_streams;
    const double ca = model_accuracy(*surs[0]->graph, val, &sur.clean, &tr);
    CHECK(pa == doctest::Approx(hist.best_pa_val));
    CHECK(ca == doctest::Approx(hist.ca_val[size_t(hist.best_epoch)]));
}

TEST_CASE("the same loop trains the universal-perturbation baseline") {
    Graph base = trained_tiny("tiny-cnn-a", 801, 2, 16, 4);
    Surrogate sur = make_surrogate(base, 8);
    std::vector<Surrogate*> surs = {&sur};

    Dataset train = synth_dataset(2, 20, 16, 803);
    Dataset val = synth_dataset(2, 10, 16, 803, "val");

    EopmConfig cfg;
    cfg.n_perturbed = 2;
    cfg.ber = 0.01;
    cfg.epochs = 2;
    cfg.batch_size = 10;
    cfg.seed = 3;

    UipTransform tr({3, 16, 16});
    TrainHistory h = train_transform(cfg, tr, surs, train, val);
    CHECK(h.loss_total.size() == 2);
    CHECK(h.best_epoch >= 0);
    bool moved = false;
    for (double v : tr.u().data)
        if (v != 0.0) moved = true;
    CHECK(moved);
}

TEST_CASE("generator training is deterministic end to end") {
    Graph base = trained_tiny("tiny-cnn-a", 901, 2, 16, 3);
    Surrogate sur = make_surrogate(base, 8);
    std::vector<Surrogate*> surs = {&sur};

    Dataset train = synth_dataset(2, 16, 16, 903);
    Dataset val = synth_dataset(2, 8, 16, 903, "val");

    EopmConfig cfg;
    cfg.n_perturbed = 2;
    cfg.ber = 0.01;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 17;

    auto run = [&] {
        Generator gen =
            build_generator(GeneratorArch{"conv-s", 0.25, {3, 16, 16}});
        gen.graph.init_params(StreamKey(17) / "gen-init");
        zero_init_output(gen);
        auto [g, h] = train_generator(cfg, std::move(gen), surs, train, val);
        return snapshot(g.graph);
    };
    CHECK(run() == run());
}

TEST_CASE("config validation rejects out-of-range fields") {
    EopmConfig cfg;
    cfg.lambda = -1;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = {};
    cfg.n_perturbed = 0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = {};
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = {};
    cfg.b = 9;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = {};
    CHECK_NOTHROW(cfg.validate());

    BaseTrainConfig bc;
    bc.batch_size = 0;
    CHECK_THROWS_AS(bc.validate(), ArgumentError);
}
