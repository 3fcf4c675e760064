#include "neuralfuse/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "neuralfuse/errors.hpp"

namespace nf {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'N', 'F', 'C', 'K'};
constexpr uint16_t kVersion = 1;

void put_u16(std::vector<unsigned char>& out, uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back(v >> 8);
}

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void put_f32(std::vector<unsigned char>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

// Bounds-checked little-endian reader over the file image.
struct Cursor {
    const std::vector<unsigned char>& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw FormatError("checkpoint: truncated file: " + path);
    }
    uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = buf[pos] | uint16_t(buf[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

json spec_to_json(const LayerSpec& s) {
    json j;
    j["kind"] = kind_name(s.kind);
    switch (s.kind) {
        case LayerKind::conv2d:
        case LayerKind::deconv2d:
            j["in_channels"] = s.in_channels;
            j["out_channels"] = s.out_channels;
            j["kernel"] = s.kernel;
            j["stride"] = s.stride;
            j["pad"] = s.pad;
            break;
        case LayerKind::linear:
            j["in_features"] = s.in_features;
            j["out_features"] = s.out_features;
            break;
        case LayerKind::batchnorm:
            j["channels"] = s.channels;
            j["eps"] = s.bn_eps;
            j["momentum"] = s.bn_momentum;
            break;
        default:
            break;
    }
    return j;
}

LayerSpec spec_from_json(const json& j) {
    const LayerKind kind = kind_from_name(j.at("kind").get<std::string>());
    switch (kind) {
        case LayerKind::conv2d:
            return LayerSpec::conv2d(j.at("in_channels"), j.at("out_channels"),
                                     j.at("kernel"), j.at("stride"), j.at("pad"));
        case LayerKind::deconv2d:
            return LayerSpec::deconv2d(j.at("in_channels"), j.at("out_channels"),
                                       j.at("kernel"), j.at("stride"),
                                       j.at("pad"));
        case LayerKind::linear:
            return LayerSpec::linear(j.at("in_features"), j.at("out_features"));
        case LayerKind::batchnorm:
            return LayerSpec::batchnorm(j.at("channels"), j.at("eps"),
                                        j.at("momentum"));
        case LayerKind::maxpool2x2:
            return LayerSpec::maxpool2x2();
        case LayerKind::upsample2x_nearest:
            return LayerSpec::upsample2x();
        case LayerKind::relu:
            return LayerSpec::relu();
        case LayerKind::tanh_act:
            return LayerSpec::tanh_act();
        case LayerKind::concat:
            return LayerSpec::concat();
        case LayerKind::residual_add:
            return LayerSpec::residual_add();
        case LayerKind::softmax_xent:
            return LayerSpec::softmax_xent();
    }
    throw FormatError("checkpoint: unknown layer kind");
}

json build_manifest(const Graph& g, const QuantizedWeights* q,
                    const GeneratorArch* arch, const json& extra) {
    json nodes = json::array();
    for (const Node& n : g.nodes()) {
        json jn = spec_to_json(n.spec);
        jn["name"] = n.name;
        jn["inputs"] = n.inputs;
        nodes.push_back(std::move(jn));
    }
    json params = json::array();
    for (const Param& p : g.params()) {
        params.push_back({{"name", p.name},
                          {"role", role_name(p.role)},
                          {"shape", p.value.shape},
                          {"trainable", p.trainable}});
    }
    json m = {{"format", 1},
              {"graph", {{"name", g.name()},
                         {"input_shape", g.input_shape()},
                         {"nodes", std::move(nodes)}}},
              {"params", std::move(params)}};
    if (q) {
        json layers = json::array();
        for (const QuantizedLayer& l : q->layers)
            layers.push_back({{"param", l.param_name}, {"shape", l.shape}});
        m["quantized"] = {{"b", q->b}, {"layers", std::move(layers)}};
    }
    if (arch) {
        m["generator"] = {{"family", arch->family},
                          {"scale", arch->scale},
                          {"input_shape", arch->input_shape}};
    }
    if (!extra.is_null()) m["extra"] = extra;
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Graph& graph,
                     const QuantizedWeights* quantized,
                     const GeneratorArch* generator,
                     const nlohmann::json& extra) {
    if (quantized) {
        for (const QuantizedLayer& l : quantized->layers) {
            const int idx = graph.find_param(l.param_name);
            if (idx < 0 || l.param_index != idx)
                throw ArgumentError(
                    "save_checkpoint: quantized layer '" + l.param_name +
                    "' is not bound to this graph");
            if (graph.params()[size_t(idx)].value.shape != l.shape)
                throw ArgumentError("save_checkpoint: quantized shape mismatch for '" +
                                    l.param_name + "'");
        }
    }

    const std::string manifest =
        build_manifest(graph, quantized, generator, extra).dump();
    if (manifest.size() > 0xffffffffu)
        throw ArgumentError("save_checkpoint: manifest too large");

    std::vector<unsigned char> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, kVersion);
    put_u32(out, uint32_t(manifest.size()));
    out.insert(out.end(), manifest.begin(), manifest.end());

    for (const Param& p : graph.params())
        for (double v : p.value.data) put_f32(out, float(v));

    if (quantized) {
        for (const QuantizedLayer& l : quantized->layers) {
            out.push_back(uint8_t(quantized->b));
            put_f32(out, float(l.scale));
            for (int8_t c : l.codes) out.push_back(uint8_t(c));
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("checkpoint: cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), long(out.size()));
    if (!f) throw FormatError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: missing or unreadable file: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    Cursor cur{buf, 0, path};

    cur.need(4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    cur.pos = 4;
    const uint16_t version = cur.u16();
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " +
                          std::to_string(version) + " in " + path);

    const uint32_t mlen = cur.u32();
    cur.need(mlen);
    json m;
    try {
        m = json::parse(buf.begin() + long(cur.pos), buf.begin() + long(cur.pos + mlen));
    } catch (const json::exception& e) {
        throw FormatError("checkpoint: bad manifest in " + path + ": " + e.what());
    }
    cur.pos += mlen;

    Graph g;
    try {
        const json& jg = m.at("graph");
        g = Graph(jg.at("input_shape").get<std::vector<int>>(),
                  jg.at("name").get<std::string>());
        for (const json& jn : jg.at("nodes")) {
            g.add(spec_from_json(jn), jn.at("inputs").get<std::vector<int>>(),
                  jn.at("name").get<std::string>());
        }
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError("checkpoint: inconsistent manifest in " + path + ": " +
                          e.what());
    }

    // The rebuilt registry must agree with the manifest's parameter table.
    const json& jp = m.at("params");
    if (jp.size() != g.params().size())
        throw FormatError("checkpoint: parameter count mismatch in " + path);
    for (size_t i = 0; i < jp.size(); ++i) {
        Param& p = g.params()[i];
        if (jp[i].at("name") != p.name ||
            jp[i].at("role").get<std::string>() != role_name(p.role) ||
            jp[i].at("shape").get<std::vector<int>>() != p.value.shape)
            throw FormatError("checkpoint: parameter table mismatch at '" +
                              p.name + "' in " + path);
        p.trainable = jp[i].at("trainable").get<bool>();
        for (double& v : p.value.data) v = cur.f32();
    }

    Checkpoint ck(std::move(g));
    ck.version = version;

    if (m.contains("quantized")) {
        const json& jq = m.at("quantized");
        QuantizedWeights q;
        q.b = jq.at("b").get<int>();
        check_precision(q.b);
        for (const json& jl : jq.at("layers")) {
            QuantizedLayer l;
            l.param_name = jl.at("param").get<std::string>();
            l.shape = jl.at("shape").get<std::vector<int>>();
            l.param_index = ck.graph.find_param(l.param_name);
            if (l.param_index < 0)
                throw FormatError("checkpoint: quantized section names unknown parameter '" +
                                  l.param_name + "' in " + path);
            if (ck.graph.params()[size_t(l.param_index)].value.shape != l.shape)
                throw FormatError("checkpoint: quantized shape mismatch for '" +
                                  l.param_name + "' in " + path);
            const int b = cur.u8();
            if (b != q.b)
                throw FormatError("checkpoint: per-layer precision disagrees with manifest in " +
                                  path);
            l.scale = cur.f32();
            if (!(l.scale > 0))
                throw FormatError("checkpoint: non-positive quantization scale in " + path);
            const int64_t n = numel(l.shape);
            cur.need(size_t(n));
            l.codes.resize(size_t(n));
            for (int64_t i = 0; i < n; ++i)
                l.codes[size_t(i)] = int8_t(buf[cur.pos++]);
            q.layers.push_back(std::move(l));
        }
        ck.quantized = std::move(q);
    }

    if (m.contains("generator")) {
        const json& ja = m.at("generator");
        GeneratorArch arch;
        arch.family = ja.at("family").get<std::string>();
        arch.scale = ja.at("scale").get<double>();
        arch.input_shape = ja.at("input_shape").get<std::vector<int>>();
        ck.generator = std::move(arch);
    }
    if (m.contains("extra")) ck.extra = m.at("extra");

    if (cur.pos != buf.size())
        throw FormatError("checkpoint: trailing bytes in " + path);
    return ck;
}

}  // namespace nf
