#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "neuralfuse/dataio.hpp"
#include "neuralfuse/faults.hpp"
#include "neuralfuse/generators.hpp"
#include "neuralfuse/graph.hpp"
#include "neuralfuse/quant.hpp"

namespace nf {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Plain Adam over parallel (value, gradient) tensor lists.
class Adam {
public:
    Adam(std::vector<Tensor*> values, std::vector<Tensor*> grads,
         AdamConfig cfg = {});
    void step();
    int64_t iterations() const { return t_; }

private:
    std::vector<Tensor*> values_, grads_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// A frozen, trained, quantized base model as the training loop sees it:
// the graph itself, its b-bit codes, and the dequantized overlay that the
// clean model M0 runs under.
struct Surrogate {
    Graph* graph = nullptr;  // not owned; parameters are never modified
    QuantizedWeights q;
    ParamOverlay clean;
};
Surrogate make_surrogate(Graph& base, int b);

struct EopmConfig {
    double lambda = 5.0;
    int n_perturbed = 10;
    double ber = 0.01;
    int epochs = 10;
    int batch_size = 25;
    AdamConfig adam;
    uint64_t seed = 0;
    int b = 8;  // surrogate quantization precision
    // Fault patterns per surrogate for the per-epoch validation PA that
    // drives best-checkpoint selection. One pattern is a noisy estimate and
    // can anoint a mediocre epoch; a few average that out.
    int val_streams = 4;

    void validate() const;
};

struct LossBreakdown {
    double total = 0, m0 = 0, mp = 0;
};

struct TrainHistory {
    std::vector<double> loss_m0, loss_mp, loss_total;  // per-epoch means
    std::vector<double> ca_val, pa_val;                // percent
    int best_epoch = -1;
    double best_pa_val = -1.0;

    // CSV: header "epoch,L_M0,L_Mp,L_total,CA_val,PA_val", %.6f cells.
    void write_csv(const std::string& path) const;
};

// The fault-stream sample index used for perturbed model i of surrogate s
// at a given iteration: every (iteration, i, s) triple maps to a distinct
// index, so masks never repeat within a run.
int64_t train_stream_index(int64_t iteration, int n_perturbed, int i, int s,
                           int num_surrogates);

// Composite loss L_M0 + lambda * mean_i L_Mpi on one batch, inference-mode
// transforms and forwards throughout. `models` are the pre-sampled
// perturbed instances of `s`.
LossBreakdown total_loss(const InputTransform& tr, const Surrogate& s,
                         const std::vector<PerturbedModel>& models,
                         const Tensor& x, const std::vector<int>& labels,
                         double lambda);

// One training iteration: freshly samples n_perturbed models per surrogate
// from the "train" stream namespace, aggregates d(L_total)/d(F(x)) over the
// clean and perturbed passes, backpropagates once through the transform,
// and applies one Adam step. Surrogate parameters are never touched.
// Non-finite losses abort with diagnostics (iteration, components).
LossBreakdown eopm_step(InputTransform& tr,
                        const std::vector<Surrogate*>& surrogates,
                        const Tensor& x, const std::vector<int>& labels,
                        const EopmConfig& cfg, int64_t iteration, Adam& opt);

// Classification accuracy (percent) under an optional weight overlay and
// optional input transform (inference semantics).
double model_accuracy(const Graph& g, const Dataset& data,
                      const ParamOverlay* overlay = nullptr,
                      const InputTransform* tr = nullptr, int batch_size = 100);

// Full training loop over epochs: deterministic shuffling, per-epoch
// history, checkpoint selection by perturbed validation accuracy under one
// fixed "val"-namespace fault stream per surrogate. On return `tr` holds
// the best parameters. Works for generators and the UIP baseline alike.
TrainHistory train_transform(const EopmConfig& cfg, InputTransform& tr,
                             const std::vector<Surrogate*>& surrogates,
                             const Dataset& train, const Dataset& val);

// Convenience wrapper returning the trained generator.
std::pair<Generator, TrainHistory> train_generator(
    const EopmConfig& cfg, Generator gen,
    const std::vector<Surrogate*>& surrogates, const Dataset& train,
    const Dataset& val);

struct BaseTrainConfig {
    int epochs = 20;
    int batch_size = 25;
    AdamConfig adam;
    uint64_t seed = 0;
    bool qat = false;  // fake-quantized forward, straight-through gradients
    int b = 8;

    void validate() const;
};

// Standard cross-entropy training of a base classification model from
// scratch. Divergence (non-finite loss) aborts with diagnostics.
Graph train_base(const std::string& arch, const Dataset& train,
                 const BaseTrainConfig& cfg);

}  // namespace nf
