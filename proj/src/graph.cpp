#include "neuralfuse/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "neuralfuse/errors.hpp"

namespace nf {

const char* role_name(ParamRole role) {
    switch (role) {
        case ParamRole::weight: return "w";
        case ParamRole::bias: return "b";
        case ParamRole::bn_scale: return "gamma";
        case ParamRole::bn_shift: return "beta";
        case ParamRole::bn_mean: return "rmean";
        case ParamRole::bn_var: return "rvar";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

Graph::Graph(std::vector<int> input_shape, std::string name)
    : name_(std::move(name)), input_shape_(std::move(input_shape)) {
    if (input_shape_.empty())
        throw ShapeError("graph input shape must have at least one extent");
    for (int d : input_shape_)
        if (d < 1)
            throw ShapeError("graph input shape has non-positive extent: " +
                             shape_str(input_shape_));
}

int Graph::add_param(int node_index, ParamRole role, Tensor value,
                     bool trainable) {
    Param p;
    p.name = nodes_[static_cast<size_t>(node_index)].name + "." + role_name(role);
    p.role = role;
    p.node = node_index;
    p.trainable = trainable;
    p.value = std::move(value);
    params_.push_back(std::move(p));
    const int index = static_cast<int>(params_.size()) - 1;
    nodes_[static_cast<size_t>(node_index)].params.push_back(index);
    return index;
}

int Graph::add(const LayerSpec& spec, std::vector<int> inputs,
               std::string node_name) {
    if (input_shape_.empty()) throw StateError("graph has no input shape");
    const int index = static_cast<int>(nodes_.size());
    if (!nodes_.empty() &&
        nodes_.back().spec.kind == LayerKind::softmax_xent)
        throw StateError("cannot add nodes after the terminal loss");

    std::vector<std::vector<int>> in_shapes;
    for (int src : inputs) {
        if (src < -1 || src >= index)
            throw ShapeError("node input index " + std::to_string(src) +
                             " out of range while adding node " +
                             std::to_string(index));
        in_shapes.push_back(src < 0 ? input_shape_
                                    : nodes_[static_cast<size_t>(src)].shape);
    }

    Node node;
    node.spec = spec;
    node.inputs = std::move(inputs);
    node.shape = infer_shape(spec, in_shapes);
    node.name = node_name.empty()
                    ? std::string(kind_name(spec.kind)) + "_" + std::to_string(index)
                    : std::move(node_name);
    nodes_.push_back(std::move(node));

    switch (spec.kind) {
        case LayerKind::conv2d:
            add_param(index, ParamRole::weight,
                      Tensor::zeros({spec.out_channels, spec.in_channels,
                                     spec.kernel, spec.kernel}),
                      true);
            add_param(index, ParamRole::bias, Tensor::zeros({spec.out_channels}),
                      true);
            break;
        case LayerKind::deconv2d:
            add_param(index, ParamRole::weight,
                      Tensor::zeros({spec.in_channels, spec.out_channels,
                                     spec.kernel, spec.kernel}),
                      true);
            add_param(index, ParamRole::bias, Tensor::zeros({spec.out_channels}),
                      true);
            break;
        case LayerKind::linear:
            add_param(index, ParamRole::weight,
                      Tensor::zeros({spec.out_features, spec.in_features}), true);
            add_param(index, ParamRole::bias, Tensor::zeros({spec.out_features}),
                      true);
            break;
        case LayerKind::batchnorm:
            add_param(index, ParamRole::bn_scale, Tensor::full({spec.channels}, 1.0),
                      true);
            add_param(index, ParamRole::bn_shift, Tensor::zeros({spec.channels}),
                      true);
            add_param(index, ParamRole::bn_mean, Tensor::zeros({spec.channels}),
                      false);
            add_param(index, ParamRole::bn_var, Tensor::full({spec.channels}, 1.0),
                      false);
            break;
        default:
            break;
    }
    return index;
}

int Graph::add(const LayerSpec& spec) {
    return add(spec, {static_cast<int>(nodes_.size()) - 1});
}

void Graph::init_params(const StreamKey& key) {
    for (auto& node : nodes_) {
        for (int pid : node.params) {
            Param& p = params_[static_cast<size_t>(pid)];
            if (p.role != ParamRole::weight) continue;  // non-weights keep defaults
            int fan_in = 0;
            switch (node.spec.kind) {
                case LayerKind::conv2d:
                case LayerKind::deconv2d:
                    fan_in = node.spec.in_channels * node.spec.kernel *
                             node.spec.kernel;
                    break;
                case LayerKind::linear:
                    fan_in = node.spec.in_features;
                    break;
                default:
                    break;
            }
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            Rng rng = (key / "init" / p.name).rng();
            for (auto& v : p.value.data) v = (rng.uniform() * 2.0 - 1.0) * bound;
        }
    }
}

const std::vector<int>& Graph::output_shape() const {
    if (nodes_.empty()) throw StateError("graph has no nodes");
    return nodes_.back().shape;
}

int Graph::find_param(const std::string& name) const {
    for (size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return static_cast<int>(i);
    return -1;
}

int64_t Graph::param_count(bool trainable_only) const {
    int64_t total = 0;
    for (const auto& p : params_)
        if (!trainable_only || p.trainable) total += p.value.size();
    return total;
}

bool Graph::ends_with_loss() const {
    return !nodes_.empty() &&
           nodes_.back().spec.kind == LayerKind::softmax_xent;
}

int Graph::num_classes() const {
    if (!ends_with_loss())
        throw StateError("graph does not terminate in softmax-xent");
    const Node& last = nodes_.back();
    const int src = last.inputs.at(0);
    const auto& in_shape =
        src < 0 ? input_shape_ : nodes_[static_cast<size_t>(src)].shape;
    return in_shape.at(0);
}

// ---------------------------------------------------------------------------
// Overlay / gradients
// ---------------------------------------------------------------------------

void ParamOverlay::set(int param_index, Tensor value) {
    values_[param_index] = std::move(value);
}

const Tensor* ParamOverlay::find(int param_index) const {
    auto it = values_.find(param_index);
    return it == values_.end() ? nullptr : &it->second;
}

void GradMap::add_scaled(const GradMap& other, double alpha) {
    if (grads.size() != other.grads.size())
        throw ArgumentError("gradient maps come from different graphs");
    for (size_t i = 0; i < grads.size(); ++i) {
        auto& dst = grads[i].data;
        const auto& src = other.grads[i].data;
        for (size_t j = 0; j < dst.size(); ++j) dst[j] += alpha * src[j];
    }
}

void GradMap::scale(double alpha) {
    for (auto& t : grads)
        for (auto& v : t.data) v *= alpha;
}

GradMap make_grads(const Graph& g) {
    GradMap m;
    m.grads.reserve(g.params().size());
    for (const auto& p : g.params()) m.grads.push_back(Tensor::zeros(p.value.shape));
    return m;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

void check_finite(const Tensor& t, const char* pass, const Node& node,
                  int index) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw NumericError("non-finite value in " + std::string(pass) +
                                   " of node " + std::to_string(index) + " (" +
                                   node.name + ")",
                               index);
}

// Valid o-range such that 0 <= o*s - p + kk <= limit-1, clipped to [0, out-1].
inline void valid_span(int limit, int out, int s, int p, int kk, int& o0,
                       int& o1) {
    const int lo = p - kk;
    o0 = lo <= 0 ? 0 : (lo + s - 1) / s;
    const int hi = limit - 1 + p - kk;
    o1 = hi < 0 ? -1 : hi / s;
    if (o0 < 0) o0 = 0;
    if (o1 > out - 1) o1 = out - 1;
}

struct ConvDims {
    int n, ci, h, w, co, ho, wo, k, s, p;
};

void conv_forward(const ConvDims& d, const double* x, const double* wgt,
                  const double* bias, double* y) {
    const int64_t plane_in = static_cast<int64_t>(d.h) * d.w;
    const int64_t plane_out = static_cast<int64_t>(d.ho) * d.wo;
    for (int n = 0; n < d.n; ++n)
        for (int co = 0; co < d.co; ++co) {
            double* yc = y + (static_cast<int64_t>(n) * d.co + co) * plane_out;
            std::fill(yc, yc + plane_out, bias[co]);
        }
    for (int n = 0; n < d.n; ++n)
        for (int co = 0; co < d.co; ++co) {
            double* yc = y + (static_cast<int64_t>(n) * d.co + co) * plane_out;
            for (int ci = 0; ci < d.ci; ++ci) {
                const double* xc =
                    x + (static_cast<int64_t>(n) * d.ci + ci) * plane_in;
                const double* wk =
                    wgt + (static_cast<int64_t>(co) * d.ci + ci) * d.k * d.k;
                for (int kh = 0; kh < d.k; ++kh) {
                    int ho0, ho1;
                    valid_span(d.h, d.ho, d.s, d.p, kh, ho0, ho1);
                    for (int kw = 0; kw < d.k; ++kw) {
                        const double wv = wk[kh * d.k + kw];
                        if (wv == 0.0) continue;
                        int wo0, wo1;
                        valid_span(d.w, d.wo, d.s, d.p, kw, wo0, wo1);
                        for (int ho = ho0; ho <= ho1; ++ho) {
                            const double* xrow =
                                xc + static_cast<int64_t>(ho * d.s - d.p + kh) * d.w;
                            double* yrow = yc + static_cast<int64_t>(ho) * d.wo;
                            if (d.s == 1) {
                                const double* xr = xrow - d.p + kw;
                                for (int wo = wo0; wo <= wo1; ++wo)
                                    yrow[wo] += wv * xr[wo];
                            } else {
                                for (int wo = wo0; wo <= wo1; ++wo)
                                    yrow[wo] += wv * xrow[wo * d.s - d.p + kw];
                            }
                        }
                    }
                }
            }
        }
}

void conv_backward(const ConvDims& d, const double* x, const double* wgt,
                   const double* dy, double* dx, double* dw, double* db) {
    const int64_t plane_in = static_cast<int64_t>(d.h) * d.w;
    const int64_t plane_out = static_cast<int64_t>(d.ho) * d.wo;
    if (db)
        for (int n = 0; n < d.n; ++n)
            for (int co = 0; co < d.co; ++co) {
                const double* dyc =
                    dy + (static_cast<int64_t>(n) * d.co + co) * plane_out;
                double acc = 0.0;
                for (int64_t i = 0; i < plane_out; ++i) acc += dyc[i];
                db[co] += acc;
            }
    if (!dx && !dw) return;
    for (int n = 0; n < d.n; ++n)
        for (int co = 0; co < d.co; ++co) {
            const double* dyc =
                dy + (static_cast<int64_t>(n) * d.co + co) * plane_out;
            for (int ci = 0; ci < d.ci; ++ci) {
                const double* xc =
                    x + (static_cast<int64_t>(n) * d.ci + ci) * plane_in;
                double* dxc =
                    dx ? dx + (static_cast<int64_t>(n) * d.ci + ci) * plane_in
                       : nullptr;
                const int64_t wbase = (static_cast<int64_t>(co) * d.ci + ci) *
                                      d.k * d.k;
                for (int kh = 0; kh < d.k; ++kh) {
                    int ho0, ho1;
                    valid_span(d.h, d.ho, d.s, d.p, kh, ho0, ho1);
                    for (int kw = 0; kw < d.k; ++kw) {
                        const double wv = wgt[wbase + kh * d.k + kw];
                        double acc = 0.0;
                        int wo0, wo1;
                        valid_span(d.w, d.wo, d.s, d.p, kw, wo0, wo1);
                        for (int ho = ho0; ho <= ho1; ++ho) {
                            const int h = ho * d.s - d.p + kh;
                            const double* dyrow =
                                dyc + static_cast<int64_t>(ho) * d.wo;
                            const double* xrow =
                                xc + static_cast<int64_t>(h) * d.w;
                            double* dxrow =
                                dxc ? dxc + static_cast<int64_t>(h) * d.w : nullptr;
                            if (dx && dw) {
                                for (int wo = wo0; wo <= wo1; ++wo) {
                                    const int w = wo * d.s - d.p + kw;
                                    const double g = dyrow[wo];
                                    acc += xrow[w] * g;
                                    dxrow[w] += wv * g;
                                }
                            } else if (dx) {
                                for (int wo = wo0; wo <= wo1; ++wo)
                                    dxrow[wo * d.s - d.p + kw] += wv * dyrow[wo];
                            } else {
                                for (int wo = wo0; wo <= wo1; ++wo)
                                    acc += xrow[wo * d.s - d.p + kw] * dyrow[wo];
                            }
                        }
                        if (dw) dw[wbase + kh * d.k + kw] += acc;
                    }
                }
            }
        }
}

// Transposed convolution: y[oh,ow] += w[ci,co,kh,kw] * x[ih,iw] with
// oh = ih*s - p + kh. Weight layout [Ci, Co, k, k].
void deconv_forward(const ConvDims& d, const double* x, const double* wgt,
                    const double* bias, double* y) {
    const int64_t plane_in = static_cast<int64_t>(d.h) * d.w;
    const int64_t plane_out = static_cast<int64_t>(d.ho) * d.wo;
    for (int n = 0; n < d.n; ++n)
        for (int co = 0; co < d.co; ++co) {
            double* yc = y + (static_cast<int64_t>(n) * d.co + co) * plane_out;
            std::fill(yc, yc + plane_out, bias[co]);
        }
    for (int n = 0; n < d.n; ++n)
        for (int ci = 0; ci < d.ci; ++ci) {
            const double* xc =
                x + (static_cast<int64_t>(n) * d.ci + ci) * plane_in;
            for (int co = 0; co < d.co; ++co) {
                double* yc =
                    y + (static_cast<int64_t>(n) * d.co + co) * plane_out;
                const double* wk =
                    wgt + (static_cast<int64_t>(ci) * d.co + co) * d.k * d.k;
                for (int kh = 0; kh < d.k; ++kh) {
                    int ih0, ih1;
                    valid_span(d.ho, d.h, d.s, d.p, kh, ih0, ih1);
                    for (int kw = 0; kw < d.k; ++kw) {
                        const double wv = wk[kh * d.k + kw];
                        if (wv == 0.0) continue;
                        int iw0, iw1;
                        valid_span(d.wo, d.w, d.s, d.p, kw, iw0, iw1);
                        for (int ih = ih0; ih <= ih1; ++ih) {
                            const double* xrow = xc + static_cast<int64_t>(ih) * d.w;
                            double* yrow =
                                yc +
                                static_cast<int64_t>(ih * d.s - d.p + kh) * d.wo;
                            if (d.s == 1) {
                                double* yr = yrow - d.p + kw;
                                for (int iw = iw0; iw <= iw1; ++iw)
                                    yr[iw] += wv * xrow[iw];
                            } else {
                                for (int iw = iw0; iw <= iw1; ++iw)
                                    yrow[iw * d.s - d.p + kw] += wv * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
}

void deconv_backward(const ConvDims& d, const double* x, const double* wgt,
                     const double* dy, double* dx, double* dw, double* db) {
    const int64_t plane_in = static_cast<int64_t>(d.h) * d.w;
    const int64_t plane_out = static_cast<int64_t>(d.ho) * d.wo;
    if (db)
        for (int n = 0; n < d.n; ++n)
            for (int co = 0; co < d.co; ++co) {
                const double* dyc =
                    dy + (static_cast<int64_t>(n) * d.co + co) * plane_out;
                double acc = 0.0;
                for (int64_t i = 0; i < plane_out; ++i) acc += dyc[i];
                db[co] += acc;
            }
    if (!dx && !dw) return;
    for (int n = 0; n < d.n; ++n)
        for (int ci = 0; ci < d.ci; ++ci) {
            const double* xc =
                x + (static_cast<int64_t>(n) * d.ci + ci) * plane_in;
            double* dxc =
                dx ? dx + (static_cast<int64_t>(n) * d.ci + ci) * plane_in
                   : nullptr;
            for (int co = 0; co < d.co; ++co) {
                const double* dyc =
                    dy + (static_cast<int64_t>(n) * d.co + co) * plane_out;
                const int64_t wbase =
                    (static_cast<int64_t>(ci) * d.co + co) * d.k * d.k;
                for (int kh = 0; kh < d.k; ++kh) {
                    int ih0, ih1;
                    valid_span(d.ho, d.h, d.s, d.p, kh, ih0, ih1);
                    for (int kw = 0; kw < d.k; ++kw) {
                        const double wv = wgt[wbase + kh * d.k + kw];
                        double acc = 0.0;
                        int iw0, iw1;
                        valid_span(d.wo, d.w, d.s, d.p, kw, iw0, iw1);
                        for (int ih = ih0; ih <= ih1; ++ih) {
                            const double* xrow = xc + static_cast<int64_t>(ih) * d.w;
                            double* dxrow =
                                dxc ? dxc + static_cast<int64_t>(ih) * d.w : nullptr;
                            const double* dyrow =
                                dyc +
                                static_cast<int64_t>(ih * d.s - d.p + kh) * d.wo;
                            if (dx && dw) {
                                for (int iw = iw0; iw <= iw1; ++iw) {
                                    const double g = dyrow[iw * d.s - d.p + kw];
                                    acc += xrow[iw] * g;
                                    dxrow[iw] += wv * g;
                                }
                            } else if (dx) {
                                for (int iw = iw0; iw <= iw1; ++iw)
                                    dxrow[iw] += wv * dyrow[iw * d.s - d.p + kw];
                            } else {
                                for (int iw = iw0; iw <= iw1; ++iw)
                                    acc += xrow[iw] * dyrow[iw * d.s - d.p + kw];
                            }
                        }
                        if (dw) dw[wbase + kh * d.k + kw] += acc;
                    }
                }
            }
        }
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

const Tensor& overlay_value(const Graph& g, const ParamOverlay* overlay,
                            int pid) {
    const Param& p = g.params()[static_cast<size_t>(pid)];
    if (overlay)
        if (const Tensor* t = overlay->find(pid)) {
            if (t->shape != p.value.shape)
                throw ArgumentError("overlay for parameter '" + p.name +
                                    "' has shape " + shape_str(t->shape) +
                                    ", expected " + shape_str(p.value.shape));
            return *t;
        }
    return p.value;
}

struct ForwardCtx {
    const Graph& g;
    Graph* mutable_g;  // non-null only for train mode with running-stat updates
    const Tensor& x;
    const ParamOverlay* overlay;
    bool training;
    int batch;
};

void node_forward(ForwardCtx& ctx, int i, std::vector<Tensor>& acts,
                  std::vector<std::vector<double>>& aux,
                  std::vector<std::vector<int>>& arg,
                  const std::vector<int>* labels, double* loss_out) {
    const Node& nd = ctx.g.node(i);
    const auto src_act = [&](int j) -> const Tensor& {
        const int s = nd.inputs[static_cast<size_t>(j)];
        return s < 0 ? ctx.x : acts[static_cast<size_t>(s)];
    };
    const auto pv = [&](int slot) -> const Tensor& {
        return overlay_value(ctx.g, ctx.overlay, nd.params[static_cast<size_t>(slot)]);
    };
    const int N = ctx.batch;

    std::vector<int> out_shape = nd.shape;
    out_shape.insert(out_shape.begin(), N);
    if (nd.spec.kind == LayerKind::softmax_xent) out_shape = {};
    Tensor out = Tensor::zeros(out_shape);

    switch (nd.spec.kind) {
        case LayerKind::conv2d: {
            const Tensor& in = src_act(0);
            ConvDims d{N, nd.spec.in_channels, in.dim(2), in.dim(3),
                       nd.spec.out_channels, nd.shape[1], nd.shape[2],
                       nd.spec.kernel, nd.spec.stride, nd.spec.pad};
            conv_forward(d, in.data.data(), pv(0).data.data(), pv(1).data.data(),
                         out.data.data());
            break;
        }
        case LayerKind::deconv2d: {
            const Tensor& in = src_act(0);
            ConvDims d{N, nd.spec.in_channels, in.dim(2), in.dim(3),
                       nd.spec.out_channels, nd.shape[1], nd.shape[2],
                       nd.spec.kernel, nd.spec.stride, nd.spec.pad};
            deconv_forward(d, in.data.data(), pv(0).data.data(),
                           pv(1).data.data(), out.data.data());
            break;
        }
        case LayerKind::maxpool2x2: {
            const Tensor& in = src_act(0);
            const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
            const int Ho = nd.shape[1], Wo = nd.shape[2];
            auto& amax = arg[static_cast<size_t>(i)];
            amax.assign(out.data.size(), 0);
            int64_t o = 0;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const int64_t base =
                        (static_cast<int64_t>(n) * C + c) * H * W;
                    for (int ho = 0; ho < Ho; ++ho)
                        for (int wo = 0; wo < Wo; ++wo, ++o) {
                            const int h = ho * 2, w = wo * 2;
                            int64_t best = base + static_cast<int64_t>(h) * W + w;
                            double bv = in.data[static_cast<size_t>(best)];
                            const int64_t cand[3] = {
                                base + static_cast<int64_t>(h) * W + w + 1,
                                base + static_cast<int64_t>(h + 1) * W + w,
                                base + static_cast<int64_t>(h + 1) * W + w + 1};
                            for (int64_t idx : cand) {
                                const double v = in.data[static_cast<size_t>(idx)];
                                if (v > bv) {  // strict: first max wins ties
                                    bv = v;
                                    best = idx;
                                }
                            }
                            out.data[static_cast<size_t>(o)] = bv;
                            amax[static_cast<size_t>(o)] = static_cast<int>(best);
                        }
                }
            break;
        }
        case LayerKind::upsample2x_nearest: {
            const Tensor& in = src_act(0);
            const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const int64_t ib = (static_cast<int64_t>(n) * C + c) * H * W;
                    const int64_t ob =
                        (static_cast<int64_t>(n) * C + c) * (2 * H) * (2 * W);
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const double v =
                                in.data[static_cast<size_t>(ib + static_cast<int64_t>(h) * W + w)];
                            const int64_t r0 = ob + static_cast<int64_t>(2 * h) * 2 * W + 2 * w;
                            const int64_t r1 = r0 + 2 * W;
                            out.data[static_cast<size_t>(r0)] = v;
                            out.data[static_cast<size_t>(r0 + 1)] = v;
                            out.data[static_cast<size_t>(r1)] = v;
                            out.data[static_cast<size_t>(r1 + 1)] = v;
                        }
                }
            break;
        }
        case LayerKind::batchnorm: {
            const Tensor& in = src_act(0);
            const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
            const int64_t plane = static_cast<int64_t>(H) * W;
            const double cnt = static_cast<double>(N) * plane;
            const Tensor& gamma = pv(0);
            const Tensor& beta = pv(1);
            auto& stats = aux[static_cast<size_t>(i)];
            if (ctx.training) {
                stats.assign(static_cast<size_t>(2 * C), 0.0);
                for (int c = 0; c < C; ++c) {
                    double sum = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const double* xc =
                            in.data.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t k = 0; k < plane; ++k) sum += xc[k];
                    }
                    const double mean = sum / cnt;
                    double var = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const double* xc =
                            in.data.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t k = 0; k < plane; ++k) {
                            const double dlt = xc[k] - mean;
                            var += dlt * dlt;
                        }
                    }
                    var /= cnt;  // population variance
                    stats[static_cast<size_t>(c)] = mean;
                    stats[static_cast<size_t>(C + c)] = var;
                    const double inv = 1.0 / std::sqrt(var + nd.spec.bn_eps);
                    const double a = gamma.data[static_cast<size_t>(c)] * inv;
                    const double b =
                        beta.data[static_cast<size_t>(c)] - a * mean;
                    for (int n = 0; n < N; ++n) {
                        const double* xc =
                            in.data.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        double* yc =
                            out.data.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t k = 0; k < plane; ++k) yc[k] = a * xc[k] + b;
                    }
                    if (ctx.mutable_g) {
                        auto& reg = ctx.mutable_g->params();
                        Tensor& rmean =
                            reg[static_cast<size_t>(nd.params[2])].value;
                        Tensor& rvar =
                            reg[static_cast<size_t>(nd.params[3])].value;
                        const double mom = nd.spec.bn_momentum;
                        rmean.data[static_cast<size_t>(c)] =
                            (1.0 - mom) * rmean.data[static_cast<size_t>(c)] +
                            mom * mean;
                        rvar.data[static_cast<size_t>(c)] =
                            (1.0 - mom) * rvar.data[static_cast<size_t>(c)] +
                            mom * var;
                    }
                }
            } else {
                const Tensor& rmean = pv(2);
                const Tensor& rvar = pv(3);
                for (int c = 0; c < C; ++c) {
                    const double inv =
                        1.0 / std::sqrt(rvar.data[static_cast<size_t>(c)] +
                                        nd.spec.bn_eps);
                    const double a = gamma.data[static_cast<size_t>(c)] * inv;
                    const double b = beta.data[static_cast<size_t>(c)] -
                                     a * rmean.data[static_cast<size_t>(c)];
                    for (int n = 0; n < N; ++n) {
                        const double* xc =
                            in.data.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        double* yc =
                            out.data.data() + (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t k = 0; k < plane; ++k) yc[k] = a * xc[k] + b;
                    }
                }
            }
            break;
        }
        case LayerKind::relu: {
            const Tensor& in = src_act(0);
            for (size_t k = 0; k < in.data.size(); ++k)
                out.data[k] = in.data[k] > 0.0 ? in.data[k] : 0.0;
            break;
        }
        case LayerKind::tanh_act: {
            const Tensor& in = src_act(0);
            for (size_t k = 0; k < in.data.size(); ++k)
                out.data[k] = std::tanh(in.data[k]);
            break;
        }
        case LayerKind::linear: {
            const Tensor& in = src_act(0);
            const int I = nd.spec.in_features, O = nd.spec.out_features;
            const double* wgt = pv(0).data.data();
            const double* bias = pv(1).data.data();
            for (int n = 0; n < N; ++n) {
                const double* xr = in.data.data() + static_cast<int64_t>(n) * I;
                double* yr = out.data.data() + static_cast<int64_t>(n) * O;
                for (int o = 0; o < O; ++o) {
                    const double* wr = wgt + static_cast<int64_t>(o) * I;
                    double acc = bias[o];
                    for (int k = 0; k < I; ++k) acc += wr[k] * xr[k];
                    yr[o] = acc;
                }
            }
            break;
        }
        case LayerKind::concat: {
            const int H = nd.shape[1], W = nd.shape[2];
            const int64_t plane = static_cast<int64_t>(H) * W;
            const int Cout = nd.shape[0];
            for (int n = 0; n < N; ++n) {
                int64_t off = static_cast<int64_t>(n) * Cout * plane;
                for (size_t j = 0; j < nd.inputs.size(); ++j) {
                    const Tensor& in = src_act(static_cast<int>(j));
                    const int Cj = in.dim(1);
                    const int64_t block = static_cast<int64_t>(Cj) * plane;
                    std::copy(in.data.begin() + static_cast<int64_t>(n) * block,
                              in.data.begin() + static_cast<int64_t>(n + 1) * block,
                              out.data.begin() + off);
                    off += block;
                }
            }
            break;
        }
        case LayerKind::residual_add: {
            const Tensor& a = src_act(0);
            const Tensor& b = src_act(1);
            for (size_t k = 0; k < a.data.size(); ++k)
                out.data[k] = a.data[k] + b.data[k];
            break;
        }
        case LayerKind::softmax_xent: {
            const Tensor& in = src_act(0);
            const int K = in.dim(1);
            auto& probs = aux[static_cast<size_t>(i)];
            probs.assign(in.data.size(), 0.0);
            double total = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* z = in.data.data() + static_cast<int64_t>(n) * K;
                double* p = probs.data() + static_cast<int64_t>(n) * K;
                double zmax = z[0];
                for (int k = 1; k < K; ++k) zmax = std::max(zmax, z[k]);
                double sum = 0.0;
                for (int k = 0; k < K; ++k) {
                    p[k] = std::exp(z[k] - zmax);
                    sum += p[k];
                }
                for (int k = 0; k < K; ++k) p[k] /= sum;
                total -= std::log(p[(*labels)[static_cast<size_t>(n)]]);
            }
            const double loss = total / N;
            out.data[0] = loss;
            if (loss_out) *loss_out = loss;
            break;
        }
    }
    check_finite(out, "forward output", nd, i);
    acts[static_cast<size_t>(i)] = std::move(out);
}

Tensor run_forward(const Graph& g, Graph* mutable_g, const Tensor& x,
                   Tape* tape, bool training,
                   const std::vector<int>* labels,
                   const ParamOverlay* overlay) {
    if (g.num_nodes() == 0) throw StateError("forward on an empty graph");
    const auto& ishape = g.input_shape();
    if (x.ndim() != static_cast<int>(ishape.size()) + 1)
        throw ShapeError("forward input must be batched " + shape_str(ishape) +
                         ", got " + shape_str(x.shape));
    for (size_t i = 0; i < ishape.size(); ++i)
        if (x.dim(static_cast<int>(i) + 1) != ishape[i])
            throw ShapeError("forward input shape " + shape_str(x.shape) +
                             " does not match graph input " + shape_str(ishape));
    const int N = x.dim(0);
    if (N < 1) throw ShapeError("forward needs a non-empty batch");
    if (!x.all_finite())
        throw NumericError("non-finite value in graph input", -1);

    const bool loss_graph = g.ends_with_loss();
    if (labels && !loss_graph)
        throw ArgumentError("labels supplied to a graph without softmax-xent");
    if (training && loss_graph && !labels)
        throw ArgumentError(
            "train-mode forward on a loss-terminated graph requires labels");
    if (labels) {
        if (static_cast<int>(labels->size()) != N)
            throw ArgumentError("label count " + std::to_string(labels->size()) +
                                " does not match batch " + std::to_string(N));
        const int K = g.num_classes();
        for (int v : *labels)
            if (v < 0 || v >= K)
                throw ArgumentError("label " + std::to_string(v) +
                                    " outside [0, " + std::to_string(K) + ")");
    }

    const int node_count = g.num_nodes();
    const int stop = (loss_graph && !labels) ? node_count - 2 : node_count - 1;

    std::vector<Tensor> acts(static_cast<size_t>(node_count));
    std::vector<std::vector<double>> aux(static_cast<size_t>(node_count));
    std::vector<std::vector<int>> arg(static_cast<size_t>(node_count));

    ForwardCtx ctx{g, mutable_g, x, overlay, training, N};
    double loss = std::numeric_limits<double>::quiet_NaN();
    for (int i = 0; i <= stop; ++i)
        node_forward(ctx, i, acts, aux, arg, labels, &loss);

    Tensor out = stop < 0 ? x : acts[static_cast<size_t>(stop)];

    if (tape) {
        *tape = Tape{};
        tape->input = x;
        tape->act = std::move(acts);
        tape->aux = std::move(aux);
        tape->arg = std::move(arg);
        if (labels) tape->labels = *labels;
        tape->overlay = overlay;
        tape->training = training;
        tape->batch = N;
        tape->loss = loss;
    }
    return out;
}

}  // namespace

Tensor forward_train(Graph& g, const Tensor& x, Tape& tape,
                     const std::vector<int>* labels,
                     const ParamOverlay* overlay, bool update_running_stats) {
    return run_forward(g, update_running_stats ? &g : nullptr, x, &tape, true,
                       labels, overlay);
}

Tensor forward_eval(const Graph& g, const Tensor& x,
                    const std::vector<int>* labels,
                    const ParamOverlay* overlay) {
    return run_forward(g, nullptr, x, nullptr, false, labels, overlay);
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {

Tensor run_backward(const Graph& g, const Tape& tape, const Tensor* d_out,
                    double upstream, GradMap* grads) {
    if (!tape.training)
        throw StateError("backward requires a tape from a train-mode forward");
    const int node_count = g.num_nodes();
    if (static_cast<int>(tape.act.size()) != node_count ||
        tape.act.empty() || tape.act.back().data.empty())
        throw StateError("tape does not match this graph (stale or partial)");
    if (grads && static_cast<int>(grads->grads.size()) !=
                     static_cast<int>(g.params().size()))
        throw ArgumentError("gradient map does not match the graph registry");

    const int last = node_count - 1;
    std::vector<Tensor> dacts(static_cast<size_t>(node_count));
    if (d_out) {
        if (d_out->shape != tape.act[static_cast<size_t>(last)].shape)
            throw ShapeError("output gradient shape " + shape_str(d_out->shape) +
                             " does not match terminal activation " +
                             shape_str(tape.act[static_cast<size_t>(last)].shape));
        dacts[static_cast<size_t>(last)] = *d_out;
    } else {
        if (!g.ends_with_loss())
            throw StateError(
                "backward without an output gradient requires a softmax-xent "
                "terminal");
        if (tape.labels.empty())
            throw StateError("tape has no labels; loss was never evaluated");
        dacts[static_cast<size_t>(last)] = Tensor::full({}, upstream);
    }

    Tensor dinput = Tensor::zeros(tape.input.shape);
    const int N = tape.batch;

    const auto src_act = [&](const Node& nd, int j) -> const Tensor& {
        const int s = nd.inputs[static_cast<size_t>(j)];
        return s < 0 ? tape.input : tape.act[static_cast<size_t>(s)];
    };
    const auto src_dact = [&](const Node& nd, int j) -> Tensor& {
        const int s = nd.inputs[static_cast<size_t>(j)];
        if (s < 0) return dinput;
        Tensor& t = dacts[static_cast<size_t>(s)];
        if (t.data.empty()) t = Tensor::zeros(tape.act[static_cast<size_t>(s)].shape);
        return t;
    };
    const auto pgrad = [&](const Node& nd, int slot) -> double* {
        if (!grads) return nullptr;
        return grads->grads[static_cast<size_t>(nd.params[static_cast<size_t>(slot)])]
            .data.data();
    };
    const auto pval = [&](const Node& nd, int slot) -> const Tensor& {
        return overlay_value(g, tape.overlay,
                             nd.params[static_cast<size_t>(slot)]);
    };

    for (int i = last; i >= 0; --i) {
        Tensor& dy = dacts[static_cast<size_t>(i)];
        if (dy.data.empty()) continue;  // node does not feed the output
        const Node& nd = g.node(i);
        switch (nd.spec.kind) {
            case LayerKind::conv2d: {
                const Tensor& in = src_act(nd, 0);
                Tensor& dx = src_dact(nd, 0);
                ConvDims d{N, nd.spec.in_channels, in.dim(2), in.dim(3),
                           nd.spec.out_channels, nd.shape[1], nd.shape[2],
                           nd.spec.kernel, nd.spec.stride, nd.spec.pad};
                conv_backward(d, in.data.data(), pval(nd, 0).data.data(),
                              dy.data.data(), dx.data.data(), pgrad(nd, 0),
                              pgrad(nd, 1));
                break;
            }
            case LayerKind::deconv2d: {
                const Tensor& in = src_act(nd, 0);
                Tensor& dx = src_dact(nd, 0);
                ConvDims d{N, nd.spec.in_channels, in.dim(2), in.dim(3),
                           nd.spec.out_channels, nd.shape[1], nd.shape[2],
                           nd.spec.kernel, nd.spec.stride, nd.spec.pad};
                deconv_backward(d, in.data.data(), pval(nd, 0).data.data(),
                                dy.data.data(), dx.data.data(), pgrad(nd, 0),
                                pgrad(nd, 1));
                break;
            }
            case LayerKind::maxpool2x2: {
                Tensor& dx = src_dact(nd, 0);
                const auto& amax = tape.arg[static_cast<size_t>(i)];
                for (size_t o = 0; o < dy.data.size(); ++o)
                    dx.data[static_cast<size_t>(amax[o])] += dy.data[o];
                break;
            }
            case LayerKind::upsample2x_nearest: {
                const Tensor& in = src_act(nd, 0);
                Tensor& dx = src_dact(nd, 0);
                const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const int64_t ib =
                            (static_cast<int64_t>(n) * C + c) * H * W;
                        const int64_t ob =
                            (static_cast<int64_t>(n) * C + c) * (2 * H) * (2 * W);
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w) {
                                const int64_t r0 =
                                    ob + static_cast<int64_t>(2 * h) * 2 * W + 2 * w;
                                const int64_t r1 = r0 + 2 * W;
                                dx.data[static_cast<size_t>(ib + static_cast<int64_t>(h) * W + w)] +=
                                    dy.data[static_cast<size_t>(r0)] +
                                    dy.data[static_cast<size_t>(r0 + 1)] +
                                    dy.data[static_cast<size_t>(r1)] +
                                    dy.data[static_cast<size_t>(r1 + 1)];
                            }
                    }
                break;
            }
            case LayerKind::batchnorm: {
                const Tensor& in = src_act(nd, 0);
                Tensor& dx = src_dact(nd, 0);
                const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
                const int64_t plane = static_cast<int64_t>(H) * W;
                const double cnt = static_cast<double>(N) * plane;
                const auto& stats = tape.aux[static_cast<size_t>(i)];
                if (stats.empty())
                    throw StateError("batchnorm tape is missing batch statistics");
                const Tensor& gamma = pval(nd, 0);
                double* dgamma = pgrad(nd, 0);
                double* dbeta = pgrad(nd, 1);
                for (int c = 0; c < C; ++c) {
                    const double mean = stats[static_cast<size_t>(c)];
                    const double var = stats[static_cast<size_t>(C + c)];
                    const double inv = 1.0 / std::sqrt(var + nd.spec.bn_eps);
                    double sum_dy = 0.0, sum_dyx = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const int64_t base =
                            (static_cast<int64_t>(n) * C + c) * plane;
                        const double* xc = in.data.data() + base;
                        const double* gyc = dy.data.data() + base;
                        for (int64_t k = 0; k < plane; ++k) {
                            sum_dy += gyc[k];
                            sum_dyx += gyc[k] * (xc[k] - mean) * inv;
                        }
                    }
                    if (dgamma) dgamma[c] += sum_dyx;
                    if (dbeta) dbeta[c] += sum_dy;
                    const double gc = gamma.data[static_cast<size_t>(c)];
                    const double mean_dy = sum_dy / cnt;
                    const double mean_dyx = sum_dyx / cnt;
                    for (int n = 0; n < N; ++n) {
                        const int64_t base =
                            (static_cast<int64_t>(n) * C + c) * plane;
                        const double* xc = in.data.data() + base;
                        const double* gyc = dy.data.data() + base;
                        double* dxc = dx.data.data() + base;
                        for (int64_t k = 0; k < plane; ++k) {
                            const double xhat = (xc[k] - mean) * inv;
                            dxc[k] += gc * inv *
                                      (gyc[k] - mean_dy - xhat * mean_dyx);
                        }
                    }
                }
                break;
            }
            case LayerKind::relu: {
                const Tensor& in = src_act(nd, 0);
                Tensor& dx = src_dact(nd, 0);
                for (size_t k = 0; k < dy.data.size(); ++k)
                    if (in.data[k] > 0.0) dx.data[k] += dy.data[k];
                break;
            }
            case LayerKind::tanh_act: {
                const Tensor& y = tape.act[static_cast<size_t>(i)];
                Tensor& dx = src_dact(nd, 0);
                for (size_t k = 0; k < dy.data.size(); ++k)
                    dx.data[k] += dy.data[k] * (1.0 - y.data[k] * y.data[k]);
                break;
            }
            case LayerKind::linear: {
                const Tensor& in = src_act(nd, 0);
                Tensor& dx = src_dact(nd, 0);
                const int I = nd.spec.in_features, O = nd.spec.out_features;
                const double* wgt = pval(nd, 0).data.data();
                double* dw = pgrad(nd, 0);
                double* db = pgrad(nd, 1);
                for (int n = 0; n < N; ++n) {
                    const double* xr = in.data.data() + static_cast<int64_t>(n) * I;
                    const double* gyr = dy.data.data() + static_cast<int64_t>(n) * O;
                    double* dxr = dx.data.data() + static_cast<int64_t>(n) * I;
                    for (int o = 0; o < O; ++o) {
                        const double gy = gyr[o];
                        if (db) db[o] += gy;
                        const double* wr = wgt + static_cast<int64_t>(o) * I;
                        if (dw) {
                            double* dwr = dw + static_cast<int64_t>(o) * I;
                            for (int k = 0; k < I; ++k) {
                                dwr[k] += gy * xr[k];
                                dxr[k] += gy * wr[k];
                            }
                        } else {
                            for (int k = 0; k < I; ++k) dxr[k] += gy * wr[k];
                        }
                    }
                }
                break;
            }
            case LayerKind::concat: {
                const int H = nd.shape[1], W = nd.shape[2];
                const int64_t plane = static_cast<int64_t>(H) * W;
                const int Cout = nd.shape[0];
                for (int n = 0; n < N; ++n) {
                    int64_t off = static_cast<int64_t>(n) * Cout * plane;
                    for (size_t j = 0; j < nd.inputs.size(); ++j) {
                        const Tensor& in = src_act(nd, static_cast<int>(j));
                        Tensor& dx = src_dact(nd, static_cast<int>(j));
                        const int Cj = in.dim(1);
                        const int64_t block = static_cast<int64_t>(Cj) * plane;
                        double* dst =
                            dx.data.data() + static_cast<int64_t>(n) * block;
                        const double* src = dy.data.data() + off;
                        for (int64_t k = 0; k < block; ++k) dst[k] += src[k];
                        off += block;
                    }
                }
                break;
            }
            case LayerKind::residual_add: {
                Tensor& da = src_dact(nd, 0);
                Tensor& db2 = src_dact(nd, 1);
                for (size_t k = 0; k < dy.data.size(); ++k) {
                    da.data[k] += dy.data[k];
                    db2.data[k] += dy.data[k];
                }
                break;
            }
            case LayerKind::softmax_xent: {
                const Tensor& in = src_act(nd, 0);
                Tensor& dx = src_dact(nd, 0);
                const int K = in.dim(1);
                const auto& probs = tape.aux[static_cast<size_t>(i)];
                const double u = dy.data[0] / N;
                for (int n = 0; n < N; ++n) {
                    const double* p = probs.data() + static_cast<int64_t>(n) * K;
                    double* dxr = dx.data.data() + static_cast<int64_t>(n) * K;
                    const int y = tape.labels[static_cast<size_t>(n)];
                    for (int k = 0; k < K; ++k)
                        dxr[k] += u * (p[k] - (k == y ? 1.0 : 0.0));
                }
                break;
            }
        }
        if (!dy.data.empty()) check_finite(dy, "backward input gradient", nd, i);
    }

    if (!dinput.all_finite())
        throw NumericError("non-finite value in input gradient", -1);
    if (grads)
        for (size_t pi = 0; pi < grads->grads.size(); ++pi)
            if (!grads->grads[pi].all_finite())
                throw NumericError("non-finite gradient for parameter '" +
                                       g.params()[pi].name + "'",
                                   g.params()[pi].node);
    return dinput;
}

}  // namespace

Tensor backward(const Graph& g, const Tape& tape, GradMap* grads,
                double upstream) {
    return run_backward(g, tape, nullptr, upstream, grads);
}

Tensor backward_from(const Graph& g, const Tape& tape, const Tensor& d_output,
                     GradMap* grads) {
    return run_backward(g, tape, &d_output, 1.0, grads);
}

// ---------------------------------------------------------------------------
// Gradcheck
// ---------------------------------------------------------------------------

double gradcheck(Graph& g, const Tensor& input, const GradcheckOptions& opt) {
    const int64_t trainable = g.param_count(true);
    if (trainable > opt.max_params)
        throw ArgumentError("gradcheck refused: " + std::to_string(trainable) +
                            " trainable parameters exceed the cap of " +
                            std::to_string(opt.max_params));

    const bool loss_graph = g.ends_with_loss();
    const std::vector<int>* labels = nullptr;
    if (loss_graph) {
        if (opt.labels.empty())
            throw ArgumentError(
                "gradcheck on a loss-terminated graph requires labels");
        labels = &opt.labels;
    }

    // Scalar under test: the loss itself, or a fixed random-weighted sum of
    // the outputs.
    Tape tape;
    Tensor out = forward_train(g, input, tape, labels, nullptr, false);
    Tensor coeff;
    if (!loss_graph) {
        coeff = Tensor::zeros(out.shape);
        Rng rng = (StreamKey(opt.coeff_seed) / "gradcheck-coeff").rng();
        for (auto& v : coeff.data) v = rng.uniform() * 2.0 - 1.0;
    }
    const auto scalar_of = [&](const Tensor& y) {
        if (loss_graph) return y.data[0];
        double acc = 0.0;
        for (size_t k = 0; k < y.data.size(); ++k)
            acc += coeff.data[k] * y.data[k];
        return acc;
    };

    GradMap analytic = make_grads(g);
    if (loss_graph)
        backward(g, tape, &analytic, 1.0);
    else
        backward_from(g, tape, coeff, &analytic);

    double worst = 0.0;
    Tape scratch;
    for (size_t pi = 0; pi < g.params().size(); ++pi) {
        if (!g.params()[pi].trainable) continue;
        Tensor& value = g.params()[pi].value;
        for (size_t k = 0; k < value.data.size(); ++k) {
            const double orig = value.data[k];
            value.data[k] = orig + opt.eps;
            const double lp =
                scalar_of(forward_train(g, input, scratch, labels, nullptr, false));
            value.data[k] = orig - opt.eps;
            const double lm =
                scalar_of(forward_train(g, input, scratch, labels, nullptr, false));
            value.data[k] = orig;
            const double numeric = (lp - lm) / (2.0 * opt.eps);
            const double a = analytic.grads[pi].data[k];
            const double rel = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

double kink_distance(const Graph& g, const Tape& tape) {
    double dist = std::numeric_limits<double>::infinity();
    for (int i = 0; i < g.num_nodes(); ++i) {
        const Node& nd = g.node(i);
        if (tape.act[static_cast<size_t>(i)].data.empty()) continue;
        const int s = nd.inputs.empty() ? -1 : nd.inputs[0];
        const Tensor& in =
            s < 0 ? tape.input : tape.act[static_cast<size_t>(s)];
        if (nd.spec.kind == LayerKind::relu) {
            for (double v : in.data) dist = std::min(dist, std::abs(v));
        } else if (nd.spec.kind == LayerKind::maxpool2x2) {
            const int N = tape.batch, C = in.dim(1), H = in.dim(2), W = in.dim(3);
            const int Ho = nd.shape[1], Wo = nd.shape[2];
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const int64_t base = (static_cast<int64_t>(n) * C + c) * H * W;
                    for (int ho = 0; ho < Ho; ++ho)
                        for (int wo = 0; wo < Wo; ++wo) {
                            const int h = ho * 2, w = wo * 2;
                            double vals[4] = {
                                in.data[static_cast<size_t>(base + static_cast<int64_t>(h) * W + w)],
                                in.data[static_cast<size_t>(base + static_cast<int64_t>(h) * W + w + 1)],
                                in.data[static_cast<size_t>(base + static_cast<int64_t>(h + 1) * W + w)],
                                in.data[static_cast<size_t>(base + static_cast<int64_t>(h + 1) * W + w + 1)]};
                            std::sort(vals, vals + 4);
                            // A 0-0 tie comes from an upstream clamp (relu
                            // zeros); both stay pinned under small nudges,
                            // and the relu term already guards their
                            // preactivations. Only a tie at a nonzero value
                            // is a genuine selection kink.
                            if (vals[3] == 0.0 && vals[2] == 0.0) continue;
                            dist = std::min(dist, vals[3] - vals[2]);
                        }
                }
        }
    }
    return dist;
}

}  // namespace nf
