#include "neuralfuse/quant.hpp"

#include <cmath>

#include "neuralfuse/errors.hpp"

namespace nf {

void check_precision(int b) {
    if (b < 2 || b > 8)
        throw ArgumentError("precision b=" + std::to_string(b) +
                            " outside the supported range [2, 8]");
}

int64_t QuantizedWeights::total_codes() const {
    int64_t n = 0;
    for (const auto& l : layers) n += static_cast<int64_t>(l.codes.size());
    return n;
}

const QuantizedLayer* QuantizedWeights::find(
    const std::string& param_name) const {
    for (const auto& l : layers)
        if (l.param_name == param_name) return &l;
    return nullptr;
}

QuantizedLayer quantize_tensor(const Tensor& w, int b) {
    check_precision(b);
    if (!w.all_finite())
        throw ArgumentError("cannot quantize a tensor with non-finite values");
    const int qmax = (1 << (b - 1)) - 1;
    double wmax = 0.0;
    for (double v : w.data) wmax = std::max(wmax, std::abs(v));

    QuantizedLayer out;
    out.shape = w.shape;
    out.codes.resize(w.data.size());
    if (wmax == 0.0) {
        out.scale = 1.0;  // all-zero layer: degenerate scale, all codes zero
        return out;
    }
    out.scale = wmax / static_cast<double>(qmax);
    for (size_t i = 0; i < w.data.size(); ++i) {
        // std::round is round-half-away-from-zero.
        int code = static_cast<int>(std::round(w.data[i] / out.scale));
        if (code > qmax) code = qmax;
        if (code < -qmax) code = -qmax;
        out.codes[i] = static_cast<int8_t>(code);
    }
    return out;
}

QuantizedWeights quantize_model(const Graph& g, int b) {
    check_precision(b);
    QuantizedWeights q;
    q.b = b;
    const auto& params = g.params();
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].role != ParamRole::weight) continue;
        QuantizedLayer l = quantize_tensor(params[i].value, b);
        l.param_name = params[i].name;
        l.param_index = static_cast<int>(i);
        q.layers.push_back(std::move(l));
    }
    return q;
}

Tensor dequantize(const QuantizedLayer& layer) {
    Tensor t = Tensor::zeros(layer.shape);
    for (size_t i = 0; i < layer.codes.size(); ++i)
        t.data[i] = layer.scale * static_cast<double>(layer.codes[i]);
    return t;
}

ParamOverlay dequantize_overlay(const QuantizedWeights& q) {
    ParamOverlay ov;
    for (const auto& l : q.layers) {
        if (l.param_index < 0)
            throw ArgumentError("quantized layer '" + l.param_name +
                                "' is not bound to a parameter index");
        ov.set(l.param_index, dequantize(l));
    }
    return ov;
}

Tensor fake_quantize(const Tensor& w, int b) {
    return dequantize(quantize_tensor(w, b));
}

uint32_t word_from_signed(int code, int b) {
    check_precision(b);
    const int lo = -(1 << (b - 1));
    const int hi = (1 << (b - 1)) - 1;
    if (code < lo || code > hi)
        throw ArgumentError("code " + std::to_string(code) +
                            " outside signed " + std::to_string(b) +
                            "-bit range");
    return static_cast<uint32_t>(code) & ((1u << b) - 1);
}

int signed_from_word(uint32_t word, int b) {
    check_precision(b);
    word &= (1u << b) - 1;
    const uint32_t sign = 1u << (b - 1);
    return word >= sign ? static_cast<int>(word) - (1 << b)
                        : static_cast<int>(word);
}

std::vector<uint8_t> encode_bits(int code, int b) {
    const uint32_t word = word_from_signed(code, b);
    std::vector<uint8_t> bits(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i)
        bits[static_cast<size_t>(i)] =
            static_cast<uint8_t>((word >> (b - 1 - i)) & 1u);  // MSB first
    return bits;
}

int decode_bits(const std::vector<uint8_t>& bits, int b) {
    check_precision(b);
    if (static_cast<int>(bits.size()) != b)
        throw ArgumentError("bit vector length " + std::to_string(bits.size()) +
                            " does not match precision " + std::to_string(b));
    uint32_t word = 0;
    for (int i = 0; i < b; ++i) {
        const uint8_t bit = bits[static_cast<size_t>(i)];
        if (bit > 1)
            throw ArgumentError("bit vector contains a non-binary value");
        word = (word << 1) | bit;
    }
    return signed_from_word(word, b);
}

}  // namespace nf
