#pragma once

#include <string>
#include <vector>

#include "neuralfuse/tensor.hpp"

namespace nf {

// The complete layer vocabulary of the engine. Nothing outside this set is
// representable in a Graph.
enum class LayerKind {
    conv2d,
    deconv2d,
    maxpool2x2,
    upsample2x_nearest,
    batchnorm,
    relu,
    tanh_act,
    linear,
    concat,
    residual_add,
    softmax_xent,
};

const char* kind_name(LayerKind kind);
LayerKind kind_from_name(const std::string& name);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;

    // conv2d / deconv2d
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    // linear
    int in_features = 0;
    int out_features = 0;

    // batchnorm
    int channels = 0;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    // Defaults: conv 3x3/pad 1/stride 1, deconv 4x4/pad 1/stride 2.
    static LayerSpec conv2d(int ci, int co, int k = 3, int s = 1, int p = 1);
    static LayerSpec deconv2d(int ci, int co, int k = 4, int s = 2, int p = 1);
    static LayerSpec maxpool2x2();
    static LayerSpec upsample2x();
    static LayerSpec batchnorm(int channels, double eps = 1e-5, double momentum = 0.1);
    static LayerSpec relu();
    static LayerSpec tanh_act();
    static LayerSpec linear(int in_features, int out_features);
    static LayerSpec concat();
    static LayerSpec residual_add();
    static LayerSpec softmax_xent();
};

// Per-sample output shape from per-sample input shapes. Throws ShapeError on
// any mismatch, so invalid graphs are rejected while they are being built.
// Conv: out = floor((in + 2*pad - k)/stride) + 1.
// Deconv: out = (in - 1)*stride - 2*pad + k.
std::vector<int> infer_shape(const LayerSpec& spec,
                             const std::vector<std::vector<int>>& inputs);

bool has_weights(LayerKind kind);  // conv2d, deconv2d, linear

}  // namespace nf
