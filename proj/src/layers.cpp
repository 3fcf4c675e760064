#include "neuralfuse/layers.hpp"

#include "neuralfuse/errors.hpp"

namespace nf {

const char* kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::deconv2d: return "deconv2d";
        case LayerKind::maxpool2x2: return "maxpool2x2";
        case LayerKind::upsample2x_nearest: return "upsample2x-nearest";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::tanh_act: return "tanh";
        case LayerKind::linear: return "linear";
        case LayerKind::concat: return "concat";
        case LayerKind::residual_add: return "residual-add";
        case LayerKind::softmax_xent: return "softmax-xent";
    }
    return "?";
}

LayerKind kind_from_name(const std::string& name) {
    for (int k = 0; k <= static_cast<int>(LayerKind::softmax_xent); ++k) {
        const auto kind = static_cast<LayerKind>(k);
        if (name == kind_name(kind)) return kind;
    }
    throw FormatError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv2d(int ci, int co, int k, int s, int p) {
    LayerSpec spec;
    spec.kind = LayerKind::conv2d;
    spec.in_channels = ci;
    spec.out_channels = co;
    spec.kernel = k;
    spec.stride = s;
    spec.pad = p;
    return spec;
}

LayerSpec LayerSpec::deconv2d(int ci, int co, int k, int s, int p) {
    LayerSpec spec;
    spec.kind = LayerKind::deconv2d;
    spec.in_channels = ci;
    spec.out_channels = co;
    spec.kernel = k;
    spec.stride = s;
    spec.pad = p;
    return spec;
}

LayerSpec LayerSpec::maxpool2x2() {
    LayerSpec spec;
    spec.kind = LayerKind::maxpool2x2;
    spec.kernel = 2;
    spec.stride = 2;
    spec.pad = 0;
    return spec;
}

LayerSpec LayerSpec::upsample2x() {
    LayerSpec spec;
    spec.kind = LayerKind::upsample2x_nearest;
    return spec;
}

LayerSpec LayerSpec::batchnorm(int channels, double eps, double momentum) {
    LayerSpec spec;
    spec.kind = LayerKind::batchnorm;
    spec.channels = channels;
    spec.bn_eps = eps;
    spec.bn_momentum = momentum;
    return spec;
}

LayerSpec LayerSpec::relu() {
    LayerSpec spec;
    spec.kind = LayerKind::relu;
    return spec;
}

LayerSpec LayerSpec::tanh_act() {
    LayerSpec spec;
    spec.kind = LayerKind::tanh_act;
    return spec;
}

LayerSpec LayerSpec::linear(int in_features, int out_features) {
    LayerSpec spec;
    spec.kind = LayerKind::linear;
    spec.in_features = in_features;
    spec.out_features = out_features;
    return spec;
}

LayerSpec LayerSpec::concat() {
    LayerSpec spec;
    spec.kind = LayerKind::concat;
    return spec;
}

LayerSpec LayerSpec::residual_add() {
    LayerSpec spec;
    spec.kind = LayerKind::residual_add;
    return spec;
}

LayerSpec LayerSpec::softmax_xent() {
    LayerSpec spec;
    spec.kind = LayerKind::softmax_xent;
    return spec;
}

bool has_weights(LayerKind kind) {
    return kind == LayerKind::conv2d || kind == LayerKind::deconv2d ||
           kind == LayerKind::linear;
}

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

std::vector<int> expect_chw(const LayerSpec& spec, const std::vector<int>& in) {
    require(in.size() == 3, std::string(kind_name(spec.kind)) +
                                ": expected CxHxW input, got " + shape_str(in));
    return in;
}

}  // namespace

std::vector<int> infer_shape(const LayerSpec& spec,
                             const std::vector<std::vector<int>>& inputs) {
    const auto arity_one = [&] {
        require(inputs.size() == 1, std::string(kind_name(spec.kind)) +
                                        ": expected exactly one input");
        return inputs[0];
    };

    switch (spec.kind) {
        case LayerKind::conv2d: {
            const auto in = expect_chw(spec, arity_one());
            require(in[0] == spec.in_channels,
                    "conv2d: input has " + std::to_string(in[0]) +
                        " channels, spec expects " + std::to_string(spec.in_channels));
            const int h = (in[1] + 2 * spec.pad - spec.kernel) / spec.stride + 1;
            const int w = (in[2] + 2 * spec.pad - spec.kernel) / spec.stride + 1;
            require(h >= 1 && w >= 1, "conv2d: output would be empty for input " +
                                          shape_str(in));
            return {spec.out_channels, h, w};
        }
        case LayerKind::deconv2d: {
            const auto in = expect_chw(spec, arity_one());
            require(in[0] == spec.in_channels,
                    "deconv2d: input has " + std::to_string(in[0]) +
                        " channels, spec expects " + std::to_string(spec.in_channels));
            const int h = (in[1] - 1) * spec.stride - 2 * spec.pad + spec.kernel;
            const int w = (in[2] - 1) * spec.stride - 2 * spec.pad + spec.kernel;
            require(h >= 1 && w >= 1, "deconv2d: output would be empty for input " +
                                          shape_str(in));
            return {spec.out_channels, h, w};
        }
        case LayerKind::maxpool2x2: {
            const auto in = expect_chw(spec, arity_one());
            require(in[1] >= 2 && in[2] >= 2,
                    "maxpool2x2: input smaller than the window, " + shape_str(in));
            return {in[0], (in[1] - 2) / 2 + 1, (in[2] - 2) / 2 + 1};
        }
        case LayerKind::upsample2x_nearest: {
            const auto in = expect_chw(spec, arity_one());
            return {in[0], in[1] * 2, in[2] * 2};
        }
        case LayerKind::batchnorm: {
            const auto in = expect_chw(spec, arity_one());
            require(in[0] == spec.channels,
                    "batchnorm: input has " + std::to_string(in[0]) +
                        " channels, spec expects " + std::to_string(spec.channels));
            return in;
        }
        case LayerKind::relu:
        case LayerKind::tanh_act:
            return arity_one();
        case LayerKind::linear: {
            const auto in = arity_one();
            require(numel(in) == spec.in_features,
                    "linear: input " + shape_str(in) + " has " +
                        std::to_string(numel(in)) + " features, spec expects " +
                        std::to_string(spec.in_features));
            return {spec.out_features};
        }
        case LayerKind::concat: {
            require(inputs.size() >= 2, "concat: needs at least two inputs");
            int channels = 0;
            for (const auto& in : inputs) {
                expect_chw(spec, in);
                require(in[1] == inputs[0][1] && in[2] == inputs[0][2],
                        "concat: spatial sizes differ, " + shape_str(in) + " vs " +
                            shape_str(inputs[0]));
                channels += in[0];
            }
            return {channels, inputs[0][1], inputs[0][2]};
        }
        case LayerKind::residual_add: {
            require(inputs.size() == 2, "residual-add: needs exactly two inputs");
            require(inputs[0] == inputs[1],
                    "residual-add: shapes differ, " + shape_str(inputs[0]) + " vs " +
                        shape_str(inputs[1]));
            return inputs[0];
        }
        case LayerKind::softmax_xent: {
            const auto in = arity_one();
            require(in.size() == 1 && in[0] >= 2,
                    "softmax-xent: expects a logit vector with >= 2 classes, got " +
                        shape_str(in));
            return {};  // scalar loss
        }
    }
    throw ShapeError("unhandled layer kind");
}

}  // namespace nf
