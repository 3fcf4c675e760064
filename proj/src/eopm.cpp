#include "neuralfuse/eopm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include "neuralfuse/errors.hpp"
#include "neuralfuse/models.hpp"

namespace nf {
namespace {

std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        uint64_t j = rng.uniform_int(0, static_cast<uint64_t>(i));
        std::swap(order[static_cast<size_t>(i)], order[j]);
    }
    return order;
}

void add_into(Tensor& acc, const Tensor& t) {
    if (acc.shape != t.shape)
        throw ShapeError("gradient shape mismatch: " + shape_str(acc.shape) +
                         " vs " + shape_str(t.shape));
    for (size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += t.data[k];
}

void check_surrogates(const std::vector<Surrogate*>& surrogates) {
    if (surrogates.empty())
        throw ArgumentError("at least one surrogate model is required");
    for (const Surrogate* s : surrogates) {
        if (s == nullptr || s->graph == nullptr)
            throw ArgumentError("null surrogate");
        if (!s->graph->ends_with_loss())
            throw ArgumentError("surrogate '" + s->graph->name() +
                                "' does not end in a loss node");
    }
}

double scalar_loss(const Tensor& t) { return t.data.at(0); }

int argmax_row(const Tensor& logits, int row, int classes) {
    int best = 0;
    double bv = logits.data[static_cast<size_t>(row) * classes];
    for (int c = 1; c < classes; ++c) {
        double v = logits.data[static_cast<size_t>(row) * classes + c];
        if (v > bv) {
            bv = v;
            best = c;
        }
    }
    return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor*> values, std::vector<Tensor*> grads,
           AdamConfig cfg)
    : values_(std::move(values)), grads_(std::move(grads)), cfg_(cfg) {
    if (values_.size() != grads_.size())
        throw ArgumentError("Adam: value/gradient list size mismatch");
    if (cfg_.lr < 0) throw ArgumentError("Adam: negative learning rate");
    if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1)
        throw ArgumentError("Adam: betas must lie in [0, 1)");
    m_.resize(values_.size());
    v_.resize(values_.size());
    for (size_t i = 0; i < values_.size(); ++i) {
        if (values_[i] == nullptr || grads_[i] == nullptr)
            throw ArgumentError("Adam: null tensor in parameter list");
        if (values_[i]->shape != grads_[i]->shape)
            throw ShapeError("Adam: value/gradient shape mismatch at slot " +
                             std::to_string(i));
        m_[i].assign(values_[i]->data.size(), 0.0);
        v_[i].assign(values_[i]->data.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < values_.size(); ++i) {
        auto& w = values_[i]->data;
        const auto& g = grads_[i]->data;
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t k = 0; k < w.size(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            w[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Configs and bookkeeping
// ---------------------------------------------------------------------------

Surrogate make_surrogate(Graph& base, int b) {
    Surrogate s;
    s.graph = &base;
    s.q = quantize_model(base, b);
    s.clean = dequantize_overlay(s.q);
    return s;
}

void EopmConfig::validate() const {
    if (lambda < 0) throw ArgumentError("lambda must be >= 0");
    if (n_perturbed < 1) throw ArgumentError("n_perturbed must be >= 1");
    if (epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (val_streams < 1) throw ArgumentError("val_streams must be >= 1");
    check_precision(b);
    BitErrorSpec probe{ber, seed, b, "train"};
    probe.validate();
}

void BaseTrainConfig::validate() const {
    if (epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (qat) check_precision(b);
}

int64_t train_stream_index(int64_t iteration, int n_perturbed, int i, int s,
                           int num_surrogates) {
    return (iteration * n_perturbed + i) * num_surrogates + s;
}

void TrainHistory::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot open '" + path + "' for writing");
    out << "epoch,L_M0,L_Mp,L_total,CA_val,PA_val\n";
    char buf[160];
    for (size_t e = 0; e < loss_total.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", e,
                      loss_m0[e], loss_mp[e], loss_total[e], ca_val[e],
                      pa_val[e]);
        out << buf;
    }
    if (!out) throw ArgumentError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Loss and the EOPM step
// ---------------------------------------------------------------------------

LossBreakdown total_loss(const InputTransform& tr, const Surrogate& s,
                         const std::vector<PerturbedModel>& models,
                         const Tensor& x, const std::vector<int>& labels,
                         double lambda) {
    if (s.graph == nullptr || !s.graph->ends_with_loss())
        throw ArgumentError("surrogate must end in a loss node");
    if (models.empty())
        throw ArgumentError("at least one perturbed model is required");
    Tensor fx = tr.apply(x);
    LossBreakdown lb;
    lb.m0 = scalar_loss(forward_eval(*s.graph, fx, &labels, &s.clean));
    for (const PerturbedModel& pm : models)
        lb.mp += scalar_loss(forward_eval(*s.graph, fx, &labels, &pm.overlay));
    lb.mp /= static_cast<double>(models.size());
    lb.total = lb.m0 + lambda * lb.mp;
    return lb;
}

LossBreakdown eopm_step(InputTransform& tr,
                        const std::vector<Surrogate*>& surrogates,
                        const Tensor& x, const std::vector<int>& labels,
                        const EopmConfig& cfg, int64_t iteration, Adam& opt) {
    cfg.validate();
    check_surrogates(surrogates);
    const int S = static_cast<int>(surrogates.size());
    const int N = cfg.n_perturbed;
    const BitErrorSpec spec{cfg.ber, cfg.seed, cfg.b, "train"};

    double m0_sum = 0, mp_sum = 0;
    Tensor fx, d_fx;
    try {
        fx = tr.apply_train(x);
        d_fx = Tensor::zeros(fx.shape);
        for (int s = 0; s < S; ++s) {
            Surrogate& sur = *surrogates[s];
            // Clean pass through the quantized-dequantized model.
            Tape t0;
            forward_train(*sur.graph, fx, t0, &labels, &sur.clean, false);
            m0_sum += t0.loss;
            add_into(d_fx, backward(*sur.graph, t0, nullptr, 1.0 / S));
            // Fresh fault patterns every iteration.
            for (int i = 0; i < N; ++i) {
                int64_t idx = train_stream_index(iteration, N, i, s, S);
                PerturbedModel pm = sample_perturbed_model(
                    *sur.graph, sur.q, spec, static_cast<uint64_t>(idx));
                Tape ti;
                forward_train(*sur.graph, fx, ti, &labels, &pm.overlay, false);
                mp_sum += ti.loss;
                add_into(d_fx, backward(*sur.graph, ti, nullptr,
                                        cfg.lambda / (S * N)));
            }
        }
    } catch (const NumericError& e) {
        std::ostringstream msg;
        msg << "training diverged at iteration " << iteration
            << " (partial sums L_M0=" << m0_sum << " L_Mp=" << mp_sum
            << "): " << e.what();
        throw NumericError(msg.str(), e.node);
    }

    LossBreakdown lb;
    lb.m0 = m0_sum / S;
    lb.mp = mp_sum / (static_cast<double>(S) * N);
    lb.total = lb.m0 + cfg.lambda * lb.mp;
    if (!std::isfinite(lb.total)) {
        std::ostringstream msg;
        msg << "training diverged at iteration " << iteration
            << ": L_M0=" << lb.m0 << " L_Mp=" << lb.mp
            << " (try a lower learning rate)";
        throw NumericError(msg.str(), -1);
    }

    tr.zero_grads();
    tr.backward(d_fx);
    opt.step();
    return lb;
}

// ---------------------------------------------------------------------------
// Evaluation helper
// ---------------------------------------------------------------------------

double model_accuracy(const Graph& g, const Dataset& data,
                      const ParamOverlay* overlay, const InputTransform* tr,
                      int batch_size) {
    if (data.size() == 0) throw ArgumentError("empty dataset");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    const int classes = g.num_classes();
    int correct = 0;
    for (int start = 0; start < data.size(); start += batch_size) {
        const int n = std::min(batch_size, data.size() - start);
        std::vector<int> idx(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = start + i;
        Tensor xb = data.gather(idx);
        if (tr != nullptr) xb = tr->apply(xb);
        Tensor logits = forward_eval(g, xb, nullptr, overlay);
        for (int i = 0; i < n; ++i)
            if (argmax_row(logits, i, classes) == data.labels[start + i])
                ++correct;
    }
    return 100.0 * correct / data.size();
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

TrainHistory train_transform(const EopmConfig& cfg, InputTransform& tr,
                             const std::vector<Surrogate*>& surrogates,
                             const Dataset& train, const Dataset& val) {
    cfg.validate();
    check_surrogates(surrogates);
    if (train.size() == 0 || val.size() == 0)
        throw ArgumentError("training and validation sets must be non-empty");

    const int S = static_cast<int>(surrogates.size());
    Adam opt(tr.param_values(), tr.param_grads(), cfg.adam);

    // Fixed validation fault patterns (val_streams per surrogate), so
    // checkpoint selection sees the same faults every epoch.
    const BitErrorSpec val_spec{cfg.ber, cfg.seed, cfg.b, "val"};
    const int K = cfg.val_streams;
    std::vector<PerturbedModel> val_models;
    val_models.reserve(static_cast<size_t>(S * K));
    for (int s = 0; s < S; ++s)
        for (int k = 0; k < K; ++k)
            val_models.push_back(sample_perturbed_model(
                *surrogates[static_cast<size_t>(s)]->graph,
                surrogates[static_cast<size_t>(s)]->q, val_spec,
                static_cast<uint64_t>(s) * static_cast<uint64_t>(K) +
                    static_cast<uint64_t>(k)));

    TrainHistory h;
    std::vector<Tensor> best;
    int64_t iteration = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng =
            (StreamKey(cfg.seed) / "shuffle" / static_cast<uint64_t>(epoch))
                .rng();
        std::vector<int> order = shuffled_indices(train.size(), shuffle_rng);

        double m0 = 0, mp = 0, total = 0;
        int batches = 0;
        for (int start = 0; start < train.size(); start += cfg.batch_size) {
            const int n = std::min(cfg.batch_size, train.size() - start);
            std::vector<int> idx(order.begin() + start,
                                 order.begin() + start + n);
            Tensor xb = train.gather(idx);
            std::vector<int> yb = train.gather_labels(idx);
            LossBreakdown lb =
                eopm_step(tr, surrogates, xb, yb, cfg, iteration, opt);
            ++iteration;
            ++batches;
            m0 += lb.m0;
            mp += lb.mp;
            total += lb.total;
        }

        double ca = 0, pa = 0;
        for (int s = 0; s < S; ++s) {
            const Surrogate& sur = *surrogates[static_cast<size_t>(s)];
            ca += model_accuracy(*sur.graph, val, &sur.clean, &tr);
            for (int k = 0; k < K; ++k)
                pa += model_accuracy(
                    *sur.graph, val,
                    &val_models[static_cast<size_t>(s * K + k)].overlay, &tr);
        }
        ca /= S;
        pa /= S * K;

        h.loss_m0.push_back(m0 / batches);
        h.loss_mp.push_back(mp / batches);
        h.loss_total.push_back(total / batches);
        h.ca_val.push_back(ca);
        h.pa_val.push_back(pa);
        if (pa > h.best_pa_val) {
            h.best_pa_val = pa;
            h.best_epoch = epoch;
            best = tr.state();
        }
    }

    // Leave the transform at its best-validation state (parameters and any
    // running statistics captured together).
    tr.set_state(best);
    return h;
}

std::pair<Generator, TrainHistory> train_generator(
    const EopmConfig& cfg, Generator gen,
    const std::vector<Surrogate*>& surrogates, const Dataset& train,
    const Dataset& val) {
    GeneratorTransform gt(std::move(gen));
    TrainHistory h = train_transform(cfg, gt, surrogates, train, val);
    return {std::move(gt.gen()), std::move(h)};
}

Graph train_base(const std::string& arch, const Dataset& train,
                 const BaseTrainConfig& cfg) {
    cfg.validate();
    if (train.size() == 0) throw ArgumentError("empty training set");

    Graph g = build_base_model(arch, train.sample_shape(), train.num_classes);
    g.init_params(StreamKey(cfg.seed) / "base-init");

    GradMap grads = make_grads(g);
    std::vector<Tensor*> values, gptrs;
    for (size_t i = 0; i < g.params().size(); ++i) {
        if (!g.params()[i].trainable) continue;
        values.push_back(&g.params()[i].value);
        gptrs.push_back(&grads.grads[i]);
    }
    Adam opt(values, gptrs, cfg.adam);

    int64_t iteration = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng =
            (StreamKey(cfg.seed) / "shuffle" / static_cast<uint64_t>(epoch))
                .rng();
        std::vector<int> order = shuffled_indices(train.size(), shuffle_rng);
        for (int start = 0; start < train.size(); start += cfg.batch_size) {
            const int n = std::min(cfg.batch_size, train.size() - start);
            std::vector<int> idx(order.begin() + start,
                                 order.begin() + start + n);
            Tensor xb = train.gather(idx);
            std::vector<int> yb = train.gather_labels(idx);

            // Fake-quantized forward; gradients flow straight through to
            // the float master weights.
            ParamOverlay qat_overlay;
            const ParamOverlay* ov = nullptr;
            if (cfg.qat) {
                qat_overlay = dequantize_overlay(quantize_model(g, cfg.b));
                ov = &qat_overlay;
            }

            Tape tape;
            forward_train(g, xb, tape, &yb, ov);
            if (!std::isfinite(tape.loss)) {
                std::ostringstream msg;
                msg << "base training diverged at epoch " << epoch
                    << " iteration " << iteration << ": loss=" << tape.loss;
                throw NumericError(msg.str(), -1);
            }
            for (Tensor& t : grads.grads)
                std::fill(t.data.begin(), t.data.end(), 0.0);
            backward(g, tape, &grads);
            opt.step();
            ++iteration;
        }
    }
    return g;
}

}  // namespace nf
