#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "neuralfuse/layers.hpp"
#include "neuralfuse/rng.hpp"
#include "neuralfuse/tensor.hpp"

namespace nf {

enum class ParamRole { weight, bias, bn_scale, bn_shift, bn_mean, bn_var };
const char* role_name(ParamRole role);

struct Param {
    std::string name;
    ParamRole role = ParamRole::weight;
    int node = -1;        // owning node index
    bool trainable = true;
    Tensor value;
};

struct Node {
    LayerSpec spec;
    std::vector<int> inputs;  // node indices; -1 refers to the graph input
    std::vector<int> shape;   // per-sample output shape
    std::vector<int> params;  // registry indices owned by this node
    std::string name;
};

// Static feed-forward graph over per-sample shapes. Activations carry an
// extra leading batch dimension at run time. Nodes must reference earlier
// nodes only, so the insertion order is already topological.
class Graph {
public:
    Graph() = default;
    explicit Graph(std::vector<int> input_shape, std::string name = "graph");

    // Adds a node consuming the listed producers (-1 = graph input). The
    // output shape is inferred immediately; mismatches throw ShapeError at
    // build time. Returns the new node's index.
    int add(const LayerSpec& spec, std::vector<int> inputs,
            std::string node_name = "");

    // Chains from the most recent node (or the graph input if empty).
    int add(const LayerSpec& spec);

    // Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases, unit
    // batchnorm scale / zero shift, running stats (0,1). Streams derive from
    // key/"init"/<node>/<role> so layouts reseed independently.
    void init_params(const StreamKey& key);

    const std::vector<int>& input_shape() const { return input_shape_; }
    const std::vector<int>& output_shape() const;
    int num_nodes() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
    const std::vector<Node>& nodes() const { return nodes_; }

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    int find_param(const std::string& name) const;  // -1 when absent
    int64_t param_count(bool trainable_only = false) const;

    bool ends_with_loss() const;
    // Number of classes fed into the terminal softmax-xent node.
    int num_classes() const;

    const std::string& name() const { return name_; }

private:
    int add_param(int node_index, ParamRole role, Tensor value, bool trainable);

    std::string name_ = "graph";
    std::vector<int> input_shape_;
    std::vector<Node> nodes_;
    std::vector<Param> params_;
};

// Sparse parameter replacement used for perturbed / fake-quantized weights.
// The overlaid tensors must match the registry shapes; the base graph is
// never modified. An overlay must outlive any tape recorded under it.
class ParamOverlay {
public:
    void set(int param_index, Tensor value);
    const Tensor* find(int param_index) const;
    bool empty() const { return values_.empty(); }
    size_t size() const { return values_.size(); }

private:
    std::unordered_map<int, Tensor> values_;
};

// Everything a backward pass needs: the input, every node's output, and
// per-node saved state (batchnorm batch statistics, maxpool argmax indices,
// softmax probabilities). Produced by train-mode forwards.
struct Tape {
    Tensor input;
    std::vector<Tensor> act;
    std::vector<std::vector<double>> aux;
    std::vector<std::vector<int>> arg;
    std::vector<int> labels;
    const ParamOverlay* overlay = nullptr;
    bool training = false;
    int batch = 0;
    double loss = std::numeric_limits<double>::quiet_NaN();
};

// Per-parameter gradients, indexed like Graph::params(). Zero-initialized so
// parameters unreachable from the loss read as zero gradient.
struct GradMap {
    std::vector<Tensor> grads;

    void add_scaled(const GradMap& other, double alpha);
    void scale(double alpha);
};

GradMap make_grads(const Graph& g);

// Train-mode forward: records a tape, batchnorm uses batch statistics (and
// updates running stats unless disabled — disable for frozen-model passes).
// `labels` are required iff the graph terminates in softmax-xent; the return
// value is then the scalar loss tensor, also mirrored in tape.loss.
Tensor forward_train(Graph& g, const Tensor& x, Tape& tape,
                     const std::vector<int>* labels = nullptr,
                     const ParamOverlay* overlay = nullptr,
                     bool update_running_stats = true);

// Eval-mode forward: no tape, batchnorm uses running statistics. On a graph
// ending in softmax-xent, passing no labels skips the terminal node and
// returns the logits; passing labels returns the scalar loss. Pure with
// respect to the graph, so concurrent calls on one graph are safe.
Tensor forward_eval(const Graph& g, const Tensor& x,
                    const std::vector<int>* labels = nullptr,
                    const ParamOverlay* overlay = nullptr);

// Reverse pass over a recorded tape. Returns d(scalar)/d(input); fills
// `grads` (when non-null) for every parameter. Throws StateError unless the
// tape came from a train-mode forward that reached the terminal loss node.
Tensor backward(const Graph& g, const Tape& tape, GradMap* grads = nullptr,
                double upstream = 1.0);

// Reverse pass seeded with an explicit output gradient, for graphs whose
// terminal node is not a loss (e.g. generators ending in tanh).
Tensor backward_from(const Graph& g, const Tape& tape, const Tensor& d_output,
                     GradMap* grads = nullptr);

struct GradcheckOptions {
    double eps = 1e-3;
    int max_params = 10000;              // refusal cap
    std::vector<int> labels;             // required for loss-terminated graphs
    uint64_t coeff_seed = 0x5eedULL;     // weighted-sum coefficients stream
};

// Central-difference check over all trainable parameters. The scalar under
// test is the graph's own loss when it ends in softmax-xent, otherwise a
// fixed random-weighted sum of the outputs. Returns
//   max over checked entries of |analytic - numeric| / max(|a|, |n|, 1e-8).
// Throws ArgumentError when the trainable parameter count exceeds the cap.
double gradcheck(Graph& g, const Tensor& input,
                 const GradcheckOptions& opt = {});

// Distance of the recorded activations from relu/maxpool non-smooth points:
// min over relu inputs of |v| and over maxpool windows of (max - runner-up).
// +inf when the graph has no kinked layers. Tests use this to certify that
// finite differences stay on one side of every kink.
double kink_distance(const Graph& g, const Tape& tape);

}  // namespace nf
