#include "neuralfuse/models.hpp"

#include "neuralfuse/errors.hpp"

namespace nf {

namespace {

void check_input(const std::vector<int>& s, int num_classes) {
    if (s.size() != 3)
        throw ArgumentError("base model: input shape must be [C, H, W]");
    if (s[1] % 4 != 0 || s[2] % 4 != 0)
        throw ArgumentError("base model: H and W must be divisible by 4");
    if (num_classes < 2)
        throw ArgumentError("base model: need at least 2 classes");
}

}  // namespace

Graph tiny_cnn_a(const std::vector<int>& input_shape, int num_classes) {
    check_input(input_shape, num_classes);
    const int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    Graph g(input_shape, "tiny-cnn-a");
    g.add(LayerSpec::conv2d(c, 8));
    g.add(LayerSpec::relu());
    g.add(LayerSpec::maxpool2x2());
    g.add(LayerSpec::conv2d(8, 16));
    g.add(LayerSpec::relu());
    g.add(LayerSpec::maxpool2x2());
    g.add(LayerSpec::linear(16 * (h / 4) * (w / 4), num_classes));
    g.add(LayerSpec::softmax_xent());
    return g;
}

Graph tiny_cnn_b(const std::vector<int>& input_shape, int num_classes) {
    check_input(input_shape, num_classes);
    const int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    Graph g(input_shape, "tiny-cnn-b");
    g.add(LayerSpec::conv2d(c, 12));
    const int a1 = g.add(LayerSpec::relu());
    const int c2 = g.add(LayerSpec::conv2d(12, 12));
    g.add(LayerSpec::residual_add(), {c2, a1});
    g.add(LayerSpec::relu());
    g.add(LayerSpec::maxpool2x2());
    g.add(LayerSpec::conv2d(12, 24));
    g.add(LayerSpec::relu());
    g.add(LayerSpec::maxpool2x2());
    g.add(LayerSpec::linear(24 * (h / 4) * (w / 4), num_classes));
    g.add(LayerSpec::softmax_xent());
    return g;
}

Graph tiny_cnn_c(const std::vector<int>& input_shape, int num_classes) {
    check_input(input_shape, num_classes);
    const int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    Graph g(input_shape, "tiny-cnn-c");
    g.add(LayerSpec::conv2d(c, 16));
    g.add(LayerSpec::relu());
    g.add(LayerSpec::maxpool2x2());
    for (int d = 1; d < 6; ++d) {
        g.add(LayerSpec::conv2d(16, 16));
        g.add(LayerSpec::relu());
        if (d == 2) g.add(LayerSpec::maxpool2x2());
    }
    g.add(LayerSpec::linear(16 * (h / 4) * (w / 4), num_classes));
    g.add(LayerSpec::softmax_xent());
    return g;
}

const std::vector<std::string>& base_model_names() {
    static const std::vector<std::string> names = {"tiny-cnn-a", "tiny-cnn-b",
                                                   "tiny-cnn-c"};
    return names;
}

Graph build_base_model(const std::string& name,
                       const std::vector<int>& input_shape, int num_classes) {
    if (name == "tiny-cnn-a") return tiny_cnn_a(input_shape, num_classes);
    if (name == "tiny-cnn-b") return tiny_cnn_b(input_shape, num_classes);
    if (name == "tiny-cnn-c") return tiny_cnn_c(input_shape, num_classes);
    throw ArgumentError("unknown base model '" + name + "'");
}

}  // namespace nf
