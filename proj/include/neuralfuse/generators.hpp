#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "neuralfuse/checkpoint.hpp"
#include "neuralfuse/graph.hpp"

namespace nf {

// Families: "conv-l", "conv-s", "deconv-l", "deconv-s", "unet-l", "unet-s".
const std::vector<std::string>& generator_families();
bool is_generator_family(const std::string& name);

// An input-transformation generator: the graph realizes G, the arch header
// names how it was built. Output shape always equals the input shape.
struct Generator {
    GeneratorArch arch;
    Graph graph;
};

// Builds the requested family at the given channel scale. Widths scale as
// max(1, round(width * scale)); the output channel count never scales. H and
// W must be divisible by 8 (three encoder halvings).
Generator build_generator(const GeneratorArch& arch);

// Zeroes the last weighted layer so G(x) == 0 at initialization and the
// transform starts as the identity.
void zero_init_output(Generator& gen);

// clip to [-1,1]. The optional mask records where the subgradient passes
// through: strictly inside the open interval only — zero at and beyond the
// boundary.
Tensor clip_unit(const Tensor& pre, std::vector<uint8_t>* pass_mask = nullptr);

// Inference-mode transform F(x) = clip(x + G(x)).
Tensor transform(const Generator& gen, const Tensor& x);

// Universal input perturbation baseline: x_t = clip(x + tanh(u)), the same
// u added to every sample.
Tensor uip_transform(const Tensor& u, const Tensor& x);

// Common trainable-transform interface for the EOPM loop: one train-mode
// application per iteration, then any number of backward() calls that
// accumulate parameter gradients for the recorded state.
class InputTransform {
public:
    virtual ~InputTransform() = default;
    virtual Tensor apply(const Tensor& x) const = 0;  // inference semantics
    virtual Tensor apply_train(const Tensor& x) = 0;  // records backward state
    virtual void backward(const Tensor& d_out) = 0;
    virtual void zero_grads() = 0;
    virtual std::vector<Tensor*> param_values() = 0;
    virtual std::vector<Tensor*> param_grads() = 0;  // parallel to param_values
    virtual int64_t param_count() const = 0;
    virtual std::string label() const = 0;

    // Complete persistent state for checkpointing: the trainable parameters
    // plus anything else inference depends on. For generators that includes
    // batchnorm running statistics — restoring weights alone would pair them
    // with running stats from a different epoch.
    virtual std::vector<Tensor> state() const = 0;
    virtual void set_state(const std::vector<Tensor>& state) = 0;
};

class GeneratorTransform final : public InputTransform {
public:
    explicit GeneratorTransform(Generator gen);

    Tensor apply(const Tensor& x) const override;
    Tensor apply_train(const Tensor& x) override;
    void backward(const Tensor& d_out) override;
    void zero_grads() override;
    std::vector<Tensor*> param_values() override;
    std::vector<Tensor*> param_grads() override;
    int64_t param_count() const override;
    std::string label() const override;
    std::vector<Tensor> state() const override;
    void set_state(const std::vector<Tensor>& state) override;

    Generator& gen() { return gen_; }
    const Generator& gen() const { return gen_; }

private:
    Generator gen_;
    GradMap grads_;
    Tape tape_;
    std::vector<uint8_t> pass_;
    bool armed_ = false;
};

class UipTransform final : public InputTransform {
public:
    explicit UipTransform(std::vector<int> input_shape);

    Tensor apply(const Tensor& x) const override;
    Tensor apply_train(const Tensor& x) override;
    void backward(const Tensor& d_out) override;
    void zero_grads() override;
    std::vector<Tensor*> param_values() override;
    std::vector<Tensor*> param_grads() override;
    int64_t param_count() const override;
    std::string label() const override;
    std::vector<Tensor> state() const override;
    void set_state(const std::vector<Tensor>& state) override;

    Tensor& u() { return u_; }

private:
    std::vector<int> input_shape_;
    Tensor u_;
    Tensor grad_u_;
    Tensor tanh_u_;
    std::vector<uint8_t> pass_;
    int batch_ = 0;
    bool armed_ = false;
};

// Checkpoint plumbing: the graph plus the arch header (and free-form extra).
void save_generator(const std::string& path, const Generator& gen,
                    const nlohmann::json& extra = nullptr);
Generator load_generator(const std::string& path);

}  // namespace nf
