#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neuralfuse/graph.hpp"
#include "neuralfuse/tensor.hpp"

namespace nf {

// One weight tensor after symmetric uniform quantization:
//   s = max|W| / (2^{b-1} - 1),  code = round(W/s)  (half away from zero).
// Codes stay within [-(2^{b-1}-1), 2^{b-1}-1]; the extra two's-complement
// value -2^{b-1} never comes out of quantization but can appear after bit
// errors, and dequantize accepts it.
struct QuantizedLayer {
    std::string param_name;
    int param_index = -1;
    std::vector<int> shape;
    std::vector<int8_t> codes;
    double scale = 1.0;
};

struct QuantizedWeights {
    int b = 8;
    std::vector<QuantizedLayer> layers;

    int64_t total_codes() const;
    const QuantizedLayer* find(const std::string& param_name) const;
};

// Throws ArgumentError unless 2 <= b <= 8.
void check_precision(int b);

QuantizedLayer quantize_tensor(const Tensor& w, int b);

// Quantizes every conv/deconv/linear weight parameter of the graph (weight
// role only; biases and batchnorm parameters stay float).
QuantizedWeights quantize_model(const Graph& g, int b);

Tensor dequantize(const QuantizedLayer& layer);

// Overlay with dequantized values for every quantized layer, ready to feed
// forward passes of the owning graph.
ParamOverlay dequantize_overlay(const QuantizedWeights& q);

// Straight-through fake quantization used for quantization-aware base
// training: returns quantize-then-dequantize of w at precision b. Gradients
// pass through unchanged by construction (callers apply them to the latent
// float weights).
Tensor fake_quantize(const Tensor& w, int b);

// Two's-complement codec. Bit index 0 is the most significant bit, so the
// vector prints in conventional order; "flip bit k" elsewhere refers to
// significance (bit b-1 = sign).
std::vector<uint8_t> encode_bits(int code, int b);
int decode_bits(const std::vector<uint8_t>& bits, int b);

// Reinterprets an unsigned b-bit word as the signed code it represents.
int signed_from_word(uint32_t word, int b);
uint32_t word_from_signed(int code, int b);

}  // namespace nf
