#include "neuralfuse/generators.hpp"

#include <cmath>

#include "neuralfuse/errors.hpp"

namespace nf {

namespace {

int sc(int width, double scale) {
    return std::max(1, int(std::llround(width * scale)));
}

// ConvBlock: 3x3 conv (stride 1, pad 1) + batchnorm + relu.
void conv_block(Graph& g, int ci, int co) {
    g.add(LayerSpec::conv2d(ci, co));
    g.add(LayerSpec::batchnorm(co));
    g.add(LayerSpec::relu());
}

// DeConvBlock: 4x4 stride-2 pad-1 deconv + batchnorm + relu.
void deconv_block(Graph& g, int ci, int co) {
    g.add(LayerSpec::deconv2d(ci, co));
    g.add(LayerSpec::batchnorm(co));
    g.add(LayerSpec::relu());
}

// Three-stage encoder shared by the conv/deconv families: `blocks`
// ConvBlocks per stage, then a maxpool. Returns the final width.
int encoder(Graph& g, int cin, const int stages[3], int blocks, double s) {
    int cur = cin;
    for (int i = 0; i < 3; ++i) {
        const int ch = sc(stages[i], s);
        for (int b = 0; b < blocks; ++b) {
            conv_block(g, cur, ch);
            cur = ch;
        }
        g.add(LayerSpec::maxpool2x2());
    }
    return cur;
}

void final_conv_bn_tanh(Graph& g, int cur, int out_c) {
    g.add(LayerSpec::conv2d(cur, out_c));
    g.add(LayerSpec::batchnorm(out_c));
    g.add(LayerSpec::tanh_act());
}

void build_conv_l(Graph& g, int cin, int out_c, double s) {
    static const int enc[3] = {32, 64, 128};
    int cur = encoder(g, cin, enc, 2, s);
    for (int ch : {128, 64, 32}) {
        conv_block(g, cur, sc(ch, s));
        g.add(LayerSpec::upsample2x());
        conv_block(g, sc(ch, s), sc(ch, s));
        cur = sc(ch, s);
    }
    final_conv_bn_tanh(g, cur, out_c);
}

void build_conv_s(Graph& g, int cin, int out_c, double s) {
    static const int enc[3] = {32, 64, 64};
    int cur = encoder(g, cin, enc, 1, s);
    for (int ch : {64, 32, 3}) {
        conv_block(g, cur, sc(ch, s));
        g.add(LayerSpec::upsample2x());
        cur = sc(ch, s);
    }
    final_conv_bn_tanh(g, cur, out_c);
}

void build_deconv_l(Graph& g, int cin, int out_c, double s) {
    static const int enc[3] = {32, 64, 128};
    int cur = encoder(g, cin, enc, 2, s);
    conv_block(g, cur, sc(128, s));
    deconv_block(g, sc(128, s), sc(64, s));
    conv_block(g, sc(64, s), sc(64, s));
    deconv_block(g, sc(64, s), sc(32, s));
    conv_block(g, sc(32, s), sc(32, s));
    // Final stage is the third spatial doubling: deconv + BN + tanh. (A
    // plain conv here would leave the output at half resolution; the deconv
    // reading also lands exactly on the published parameter count.)
    g.add(LayerSpec::deconv2d(sc(32, s), out_c));
    g.add(LayerSpec::batchnorm(out_c));
    g.add(LayerSpec::tanh_act());
}

void build_deconv_s(Graph& g, int cin, int out_c, double s) {
    static const int enc[3] = {32, 64, 64};
    int cur = encoder(g, cin, enc, 1, s);
    deconv_block(g, cur, sc(64, s));
    deconv_block(g, sc(64, s), sc(32, s));
    g.add(LayerSpec::deconv2d(sc(32, s), out_c));
    g.add(LayerSpec::batchnorm(out_c));
    g.add(LayerSpec::tanh_act());
}

// UNet: 4 levels, skip concats, bare 2x2 stride-2 up-convs (padding 0 so
// spatial size doubles and the concat shapes match), final 1x1 conv without
// activation.
void build_unet(Graph& g, int cin, int out_c, const int widths[4], double s) {
    const int c1 = sc(widths[0], s), c2 = sc(widths[1], s);
    const int c3 = sc(widths[2], s), c4 = sc(widths[3], s);

    conv_block(g, cin, c1);
    conv_block(g, c1, c1);
    const int l1 = g.num_nodes() - 1;
    g.add(LayerSpec::maxpool2x2());
    conv_block(g, c1, c2);
    conv_block(g, c2, c2);
    const int l2 = g.num_nodes() - 1;
    g.add(LayerSpec::maxpool2x2());
    conv_block(g, c2, c3);
    conv_block(g, c3, c3);
    const int l3 = g.num_nodes() - 1;
    g.add(LayerSpec::maxpool2x2());
    conv_block(g, c3, c4);
    conv_block(g, c4, c4);

    const int d5 = g.add(LayerSpec::deconv2d(c4, c3, 2, 2, 0));
    g.add(LayerSpec::concat(), {l3, d5});
    conv_block(g, 2 * c3, c3);
    conv_block(g, c3, c3);
    const int d8 = g.add(LayerSpec::deconv2d(c3, c2, 2, 2, 0));
    g.add(LayerSpec::concat(), {l2, d8});
    conv_block(g, 2 * c2, c2);
    conv_block(g, c2, c2);
    const int d11 = g.add(LayerSpec::deconv2d(c2, c1, 2, 2, 0));
    g.add(LayerSpec::concat(), {l1, d11});
    conv_block(g, 2 * c1, c1);
    conv_block(g, c1, c1);
    g.add(LayerSpec::conv2d(c1, out_c, 1, 1, 0));
}

}  // namespace

const std::vector<std::string>& generator_families() {
    static const std::vector<std::string> names = {
        "conv-l", "conv-s", "deconv-l", "deconv-s", "unet-l", "unet-s"};
    return names;
}

bool is_generator_family(const std::string& name) {
    for (const std::string& f : generator_families())
        if (f == name) return true;
    return false;
}

Generator build_generator(const GeneratorArch& arch) {
    if (!is_generator_family(arch.family))
        throw ArgumentError("unknown generator family '" + arch.family + "'");
    if (arch.input_shape.size() != 3)
        throw ArgumentError("generator input shape must be [C, H, W]");
    const int c = arch.input_shape[0];
    const int h = arch.input_shape[1], w = arch.input_shape[2];
    if (h % 8 != 0 || w % 8 != 0)
        throw ArgumentError("generator input H and W must be divisible by 8, got " +
                            std::to_string(h) + "x" + std::to_string(w));
    if (!(arch.scale > 0))
        throw ArgumentError("generator channel scale must be positive");

    Generator gen;
    gen.arch = arch;
    gen.graph = Graph(arch.input_shape, arch.family);
    static const int unet_l[4] = {16, 32, 64, 128};
    static const int unet_s[4] = {8, 16, 32, 64};
    if (arch.family == "conv-l") build_conv_l(gen.graph, c, c, arch.scale);
    else if (arch.family == "conv-s") build_conv_s(gen.graph, c, c, arch.scale);
    else if (arch.family == "deconv-l") build_deconv_l(gen.graph, c, c, arch.scale);
    else if (arch.family == "deconv-s") build_deconv_s(gen.graph, c, c, arch.scale);
    else if (arch.family == "unet-l") build_unet(gen.graph, c, c, unet_l, arch.scale);
    else build_unet(gen.graph, c, c, unet_s, arch.scale);

    if (gen.graph.output_shape() != arch.input_shape)
        throw StateError("generator output shape does not match its input shape");
    return gen;
}

void zero_init_output(Generator& gen) {
    // Last weighted node; its conv/deconv weights and bias go to zero. The
    // families ending in BN+tanh still emit exactly zero: a zero pre-BN batch
    // normalizes to zero in both train and eval mode (fresh running stats),
    // and tanh(0) = 0.
    for (int i = gen.graph.num_nodes() - 1; i >= 0; --i) {
        const Node& n = gen.graph.node(i);
        if (!has_weights(n.spec.kind)) continue;
        for (int pi : n.params) {
            Tensor& v = gen.graph.params()[size_t(pi)].value;
            std::fill(v.data.begin(), v.data.end(), 0.0);
        }
        return;
    }
    throw StateError("generator has no weighted layers");
}

Tensor clip_unit(const Tensor& pre, std::vector<uint8_t>* pass_mask) {
    Tensor out = pre;
    if (pass_mask) pass_mask->assign(pre.data.size(), 0);
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double v = out.data[i];
        if (v > 1.0) out.data[i] = 1.0;
        else if (v < -1.0) out.data[i] = -1.0;
        else if (pass_mask && v > -1.0 && v < 1.0) (*pass_mask)[i] = 1;
    }
    return out;
}

Tensor transform(const Generator& gen, const Tensor& x) {
    Tensor gx = forward_eval(gen.graph, x);
    Tensor pre = x;
    for (size_t i = 0; i < pre.data.size(); ++i) pre.data[i] += gx.data[i];
    return clip_unit(pre);
}

Tensor uip_transform(const Tensor& u, const Tensor& x) {
    if (x.ndim() != int(u.ndim()) + 1)
        throw ArgumentError("uip_transform: x must be batched [N, ...]");
    const int64_t per = u.size();
    if (x.size() % per != 0 || numel(std::vector<int>(x.shape.begin() + 1, x.shape.end())) != per)
        throw ArgumentError("uip_transform: shape mismatch between u and x");
    Tensor pre = x;
    for (int n = 0; n < x.dim(0); ++n)
        for (int64_t i = 0; i < per; ++i)
            pre.data[size_t(n) * per + i] += std::tanh(u.data[size_t(i)]);
    return clip_unit(pre);
}

// ---------------------------------------------------------------- Generator

GeneratorTransform::GeneratorTransform(Generator gen) : gen_(std::move(gen)) {
    grads_ = make_grads(gen_.graph);
}

Tensor GeneratorTransform::apply(const Tensor& x) const {
    return transform(gen_, x);
}

Tensor GeneratorTransform::apply_train(const Tensor& x) {
    tape_ = Tape{};
    Tensor gx = forward_train(gen_.graph, x, tape_);
    Tensor pre = x;
    for (size_t i = 0; i < pre.data.size(); ++i) pre.data[i] += gx.data[i];
    Tensor fx = clip_unit(pre, &pass_);
    armed_ = true;
    return fx;
}

void GeneratorTransform::backward(const Tensor& d_out) {
    if (!armed_) throw StateError("transform backward without apply_train");
    if (d_out.data.size() != pass_.size())
        throw ArgumentError("transform backward: gradient shape mismatch");
    Tensor d_gx = d_out;
    for (size_t i = 0; i < pass_.size(); ++i)
        if (!pass_[i]) d_gx.data[i] = 0.0;
    backward_from(gen_.graph, tape_, d_gx, &grads_);
}

void GeneratorTransform::zero_grads() {
    for (Tensor& t : grads_.grads)
        std::fill(t.data.begin(), t.data.end(), 0.0);
}

std::vector<Tensor*> GeneratorTransform::param_values() {
    std::vector<Tensor*> out;
    for (Param& p : gen_.graph.params())
        if (p.trainable) out.push_back(&p.value);
    return out;
}

std::vector<Tensor*> GeneratorTransform::param_grads() {
    std::vector<Tensor*> out;
    const std::vector<Param>& ps = gen_.graph.params();
    for (size_t i = 0; i < ps.size(); ++i)
        if (ps[i].trainable) out.push_back(&grads_.grads[i]);
    return out;
}

int64_t GeneratorTransform::param_count() const {
    return gen_.graph.param_count(/*trainable_only=*/true);
}

std::string GeneratorTransform::label() const {
    return gen_.arch.family + "@" + std::to_string(gen_.arch.scale);
}

std::vector<Tensor> GeneratorTransform::state() const {
    std::vector<Tensor> out;
    for (const Param& p : gen_.graph.params()) out.push_back(p.value);
    return out;
}

void GeneratorTransform::set_state(const std::vector<Tensor>& state) {
    std::vector<Param>& ps = gen_.graph.params();
    if (state.size() != ps.size())
        throw ArgumentError("generator state: expected " +
                            std::to_string(ps.size()) + " tensors, got " +
                            std::to_string(state.size()));
    for (size_t i = 0; i < ps.size(); ++i) ps[i].value = state[i];
}

// ---------------------------------------------------------------------- UIP

UipTransform::UipTransform(std::vector<int> input_shape)
    : input_shape_(std::move(input_shape)) {
    if (input_shape_.empty())
        throw ArgumentError("uip: empty input shape");
    u_ = Tensor::zeros(input_shape_);
    grad_u_ = Tensor::zeros(input_shape_);
}

Tensor UipTransform::apply(const Tensor& x) const {
    return nf::uip_transform(u_, x);
}

Tensor UipTransform::apply_train(const Tensor& x) {
    if (x.ndim() != int(input_shape_.size()) + 1 ||
        std::vector<int>(x.shape.begin() + 1, x.shape.end()) != input_shape_)
        throw ArgumentError("uip: shape mismatch between u and x");
    batch_ = x.dim(0);
    tanh_u_ = u_;
    for (double& v : tanh_u_.data) v = std::tanh(v);
    Tensor pre = x;
    const int64_t per = u_.size();
    for (int n = 0; n < batch_; ++n)
        for (int64_t i = 0; i < per; ++i)
            pre.data[size_t(n) * per + i] += tanh_u_.data[size_t(i)];
    Tensor out = clip_unit(pre, &pass_);
    armed_ = true;
    return out;
}

void UipTransform::backward(const Tensor& d_out) {
    if (!armed_) throw StateError("uip backward without apply_train");
    if (d_out.data.size() != pass_.size())
        throw ArgumentError("uip backward: gradient shape mismatch");
    const int64_t per = u_.size();
    for (int n = 0; n < batch_; ++n) {
        for (int64_t i = 0; i < per; ++i) {
            const size_t j = size_t(n) * per + i;
            if (!pass_[j]) continue;
            const double t = tanh_u_.data[size_t(i)];
            grad_u_.data[size_t(i)] += d_out.data[j] * (1.0 - t * t);
        }
    }
}

void UipTransform::zero_grads() {
    std::fill(grad_u_.data.begin(), grad_u_.data.end(), 0.0);
}

std::vector<Tensor*> UipTransform::param_values() { return {&u_}; }
std::vector<Tensor*> UipTransform::param_grads() { return {&grad_u_}; }
int64_t UipTransform::param_count() const { return u_.size(); }
std::string UipTransform::label() const { return "uip"; }

std::vector<Tensor> UipTransform::state() const { return {u_}; }

void UipTransform::set_state(const std::vector<Tensor>& state) {
    if (state.size() != 1)
        throw ArgumentError("uip state: expected 1 tensor, got " +
                            std::to_string(state.size()));
    u_ = state[0];
}

// --------------------------------------------------------------- persistence

void save_generator(const std::string& path, const Generator& gen,
                    const nlohmann::json& extra) {
    save_checkpoint(path, gen.graph, nullptr, &gen.arch, extra);
}

Generator load_generator(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (!ck.generator)
        throw FormatError("checkpoint lacks a generator arch header: " + path);
    Generator gen;
    gen.arch = *ck.generator;
    gen.graph = std::move(ck.graph);
    if (gen.graph.output_shape() != gen.arch.input_shape)
        throw FormatError("generator checkpoint output shape mismatch: " + path);
    return gen;
}

}  // namespace nf
