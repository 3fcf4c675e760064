#include "neuralfuse/faults.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "neuralfuse/errors.hpp"

namespace nf {

void BitErrorSpec::validate() const {
    if (!(p >= 0.0 && p <= 1.0))
        throw ArgumentError("bit-error rate " + std::to_string(p) +
                            " outside [0, 1]");
    check_precision(b);
}

int64_t FlipMask::total_bits() const {
    int64_t n = 0;
    for (const auto& l : layers)
        n += static_cast<int64_t>(l.words.size()) * b;
    return n;
}

int64_t FlipMask::bits_set() const {
    int64_t n = 0;
    for (const auto& l : layers)
        for (uint8_t w : l.words) n += std::popcount(static_cast<unsigned>(w));
    return n;
}

std::vector<uint8_t> sample_mask_words(int64_t count, const BitErrorSpec& spec,
                                       const StreamKey& stream) {
    spec.validate();
    std::vector<uint8_t> words(static_cast<size_t>(count), 0);
    if (spec.p <= 0.0) return words;
    Rng rng = stream.rng();
    if (spec.p >= 1.0) {
        const uint8_t all = static_cast<uint8_t>((1u << spec.b) - 1);
        std::fill(words.begin(), words.end(), all);
        return words;
    }
    for (auto& w : words)
        for (int j = 0; j < spec.b; ++j)
            if (rng.uniform() < spec.p) w = static_cast<uint8_t>(w | (1u << j));
    return words;
}

std::vector<uint8_t> sample_flip_mask(const std::vector<int>& shape,
                                      const BitErrorSpec& spec,
                                      uint64_t stream_id) {
    return sample_mask_words(numel(shape), spec,
                             StreamKey(spec.seed) / spec.stream_ns / stream_id);
}

FlipMask sample_model_mask(const QuantizedWeights& q, const BitErrorSpec& spec,
                           uint64_t sample_index) {
    spec.validate();
    if (spec.b != q.b)
        throw ArgumentError("mask precision " + std::to_string(spec.b) +
                            " does not match quantized precision " +
                            std::to_string(q.b));
    FlipMask mask;
    mask.b = spec.b;
    for (const auto& layer : q.layers) {
        LayerMask lm;
        lm.param_name = layer.param_name;
        lm.words = sample_mask_words(
            static_cast<int64_t>(layer.codes.size()), spec,
            StreamKey(spec.seed) / spec.stream_ns / sample_index /
                layer.param_name);
        mask.layers.push_back(std::move(lm));
    }
    return mask;
}

QuantizedWeights apply_bit_errors(const QuantizedWeights& q,
                                  const FlipMask& mask) {
    if (mask.b != q.b)
        throw ArgumentError("mask precision does not match quantized weights");
    if (mask.layers.size() != q.layers.size())
        throw ArgumentError("mask layer count does not match quantized weights");
    QuantizedWeights out = q;
    for (size_t i = 0; i < out.layers.size(); ++i) {
        auto& layer = out.layers[i];
        const auto& lm = mask.layers[i];
        if (lm.words.size() != layer.codes.size())
            throw ArgumentError("mask shape does not match layer '" +
                                layer.param_name + "'");
        for (size_t k = 0; k < layer.codes.size(); ++k) {
            const uint32_t word = word_from_signed(layer.codes[k], q.b);
            layer.codes[k] = static_cast<int8_t>(
                signed_from_word(word ^ lm.words[k], q.b));
        }
    }
    return out;
}

PerturbedModel sample_perturbed_model(const Graph& base,
                                      const QuantizedWeights& q,
                                      const BitErrorSpec& spec,
                                      uint64_t sample_index) {
    for (const auto& layer : q.layers)
        if (layer.param_index < 0 ||
            layer.param_index >= static_cast<int>(base.params().size()) ||
            base.params()[static_cast<size_t>(layer.param_index)].name !=
                layer.param_name)
            throw ArgumentError("quantized weights were not derived from this "
                                "graph (layer '" +
                                layer.param_name + "')");
    PerturbedModel pm;
    pm.base = &base;
    pm.spec = spec;
    pm.sample_index = sample_index;
    pm.mask = sample_model_mask(q, spec, sample_index);
    pm.q = apply_bit_errors(q, pm.mask);
    pm.overlay = dequantize_overlay(pm.q);
    return pm;
}

// ---------------------------------------------------------------------------
// Voltage curve
// ---------------------------------------------------------------------------

namespace {

constexpr double kVLow = 0.5;
constexpr double kVHigh = 1.2;
constexpr double kBerFloor = 1e-9;  // stands in for exact zero in log space
constexpr double kBerCeil = 0.5;

double interp_linear(double x, double x1, double y1, double x2, double y2) {
    return y1 + (y2 - y1) * (x - x1) / (x2 - x1);
}

// Log-linear in the ber dimension; zero anchors enter as kBerFloor.
double interp_ber(double x, double x1, double b1, double x2, double b2) {
    const double l1 = std::log(std::max(b1, kBerFloor));
    const double l2 = std::log(std::max(b2, kBerFloor));
    return std::exp(interp_linear(x, x1, l1, x2, l2));
}

}  // namespace

VoltageCurve::VoltageCurve()
    : VoltageCurve({{0.83, 0.01, 0.6936}, {1.0, 0.0, 1.0}}) {}

VoltageCurve::VoltageCurve(std::vector<VoltagePoint> anchors)
    : anchors_(std::move(anchors)) {
    if (anchors_.size() < 2)
        throw ArgumentError("voltage curve needs at least two anchors");
    std::sort(anchors_.begin(), anchors_.end(),
              [](const VoltagePoint& a, const VoltagePoint& b) {
                  return a.v_ratio < b.v_ratio;
              });
    for (size_t i = 1; i < anchors_.size(); ++i) {
        if (anchors_[i].v_ratio == anchors_[i - 1].v_ratio)
            throw ArgumentError("duplicate voltage anchor at v_ratio=" +
                                std::to_string(anchors_[i].v_ratio));
        if (anchors_[i].ber > anchors_[i - 1].ber)
            throw ArgumentError("ber must be non-increasing in v_ratio");
        if (anchors_[i].energy_ratio < anchors_[i - 1].energy_ratio)
            throw ArgumentError("energy must be non-decreasing in v_ratio");
    }
    for (const auto& a : anchors_) {
        if (!(a.ber >= 0.0 && a.ber <= 1.0))
            throw ArgumentError("anchor ber outside [0, 1]");
        if (a.energy_ratio <= 0.0)
            throw ArgumentError("anchor energy ratio must be positive");
        if (a.v_ratio == 1.0 && (a.ber != 0.0 || a.energy_ratio != 1.0))
            throw ArgumentError(
                "the nominal anchor (v_ratio=1) must have ber 0 and energy 1");
    }
}

VoltagePoint VoltageCurve::at(double v_ratio) const {
    if (!(v_ratio >= kVLow && v_ratio <= kVHigh))
        throw ArgumentError("v_ratio " + std::to_string(v_ratio) +
                            " outside [" + std::to_string(kVLow) + ", " +
                            std::to_string(kVHigh) + "]");
    VoltagePoint out;
    out.v_ratio = v_ratio;

    const auto& a = anchors_;
    const size_t n = a.size();
    if (v_ratio >= a[n - 1].v_ratio) {
        // At or above the highest anchor: hold its values (no error revival
        // above nominal voltage).
        out.ber = a[n - 1].ber;
        out.energy_ratio =
            interp_linear(v_ratio, a[n - 2].v_ratio, a[n - 2].energy_ratio,
                          a[n - 1].v_ratio, a[n - 1].energy_ratio);
        if (v_ratio == a[n - 1].v_ratio) out.energy_ratio = a[n - 1].energy_ratio;
        return out;
    }
    size_t hi = 1;
    while (hi < n - 1 && a[hi].v_ratio <= v_ratio) ++hi;
    const auto& p1 = a[hi - 1];
    const auto& p2 = a[hi];
    if (v_ratio == p1.v_ratio) {
        out.ber = p1.ber;
        out.energy_ratio = p1.energy_ratio;
        return out;
    }
    // Below the lowest anchor this extrapolates the first segment.
    out.ber = std::min(kBerCeil, interp_ber(v_ratio, p1.v_ratio, p1.ber,
                                            p2.v_ratio, p2.ber));
    out.energy_ratio = interp_linear(v_ratio, p1.v_ratio, p1.energy_ratio,
                                     p2.v_ratio, p2.energy_ratio);
    return out;
}

}  // namespace nf
