#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neuralfuse/graph.hpp"
#include "neuralfuse/quant.hpp"
#include "neuralfuse/rng.hpp"

namespace nf {

// Bit-error configuration. Mask streams derive from
//   StreamKey(seed) / stream_ns / sample_index / param_name
// so training ("train"), validation ("val") and evaluation ("eval")
// namespaces can never replay each other's masks.
struct BitErrorSpec {
    double p = 0.0;
    uint64_t seed = 0;
    int b = 8;
    std::string stream_ns = "train";

    void validate() const;  // rate in [0,1], precision in [2,8]
};

struct LayerMask {
    std::string param_name;
    std::vector<uint8_t> words;  // one b-bit mask word per weight element
};

// Per-layer Bernoulli bit masks; a set bit means "flip". Immutable after
// sampling and regenerated from seeds on demand (never persisted).
struct FlipMask {
    int b = 8;
    std::vector<LayerMask> layers;

    int64_t total_bits() const;
    int64_t bits_set() const;
};

// Independent Bernoulli(p) per bit over `count` elements of b-bit words.
std::vector<uint8_t> sample_mask_words(int64_t count, const BitErrorSpec& spec,
                                       const StreamKey& stream);

// Single-tensor form: stream addressed by (spec.seed, spec.stream_ns,
// stream_id).
std::vector<uint8_t> sample_flip_mask(const std::vector<int>& shape,
                                      const BitErrorSpec& spec,
                                      uint64_t stream_id);

// Mask covering every quantized layer of q, addressed per layer by
// (spec.seed, spec.stream_ns, sample_index, layer name).
FlipMask sample_model_mask(const QuantizedWeights& q, const BitErrorSpec& spec,
                           uint64_t sample_index);

// XOR each code with its mask word in b-bit two's-complement space and
// reinterpret as signed. Involutive: applying the same mask twice restores q.
QuantizedWeights apply_bit_errors(const QuantizedWeights& q,
                                  const FlipMask& mask);

// A base model plus one sampled fault pattern: forward with
// `overlay` to run M_p. The base graph itself is never modified.
struct PerturbedModel {
    const Graph* base = nullptr;
    QuantizedWeights q;
    FlipMask mask;
    BitErrorSpec spec;
    uint64_t sample_index = 0;
    ParamOverlay overlay;  // dequantized perturbed weights
};

PerturbedModel sample_perturbed_model(const Graph& base,
                                      const QuantizedWeights& q,
                                      const BitErrorSpec& spec,
                                      uint64_t sample_index);

// ---------------------------------------------------------------------------
// Supply-voltage model: piecewise-exponential bit-error rate and
// piecewise-linear energy-per-access through configurable anchors. Defaults
// anchor nominal voltage (1.0 -> ber 0, energy 1.0) and the low-voltage
// operating point (0.83 -> ber 0.01, energy 0.6936).
// ---------------------------------------------------------------------------

struct VoltagePoint {
    double v_ratio = 1.0;
    double ber = 0.0;
    double energy_ratio = 1.0;
};

class VoltageCurve {
public:
    VoltageCurve();  // default anchors above
    explicit VoltageCurve(std::vector<VoltagePoint> anchors);

    // Valid for v_ratio in [0.5, 1.2]; throws ArgumentError outside.
    VoltagePoint at(double v_ratio) const;

    const std::vector<VoltagePoint>& anchors() const { return anchors_; }

private:
    std::vector<VoltagePoint> anchors_;  // sorted by v_ratio ascending
};

}  // namespace nf
