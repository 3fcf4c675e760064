#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "neuralfuse/checkpoint.hpp"
#include "neuralfuse/errors.hpp"
#include "neuralfuse/faults.hpp"

using namespace nf;
namespace fs = std::filesystem;

namespace {

Graph demo_graph() {
    Graph g({3, 8, 8}, "demo");
    g.add(LayerSpec::conv2d(3, 4));
    g.add(LayerSpec::batchnorm(4));
    g.add(LayerSpec::relu());
    g.add(LayerSpec::maxpool2x2());
    g.add(LayerSpec::linear(4 * 4 * 4, 5));
    g.add(LayerSpec::softmax_xent());
    g.init_params(StreamKey(2024) / "params");
    return g;
}

fs::path tmp_path(const std::string& name) {
    fs::create_directories("ck_fixture");
    return fs::path("ck_fixture") / name;
}

std::vector<unsigned char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), long(bytes.size()));
}

}  // namespace

TEST_CASE("round trip preserves topology and f32-rounded parameters") {
    Graph g = demo_graph();
    // Make running stats non-default so their persistence is visible.
    Rng xr = (StreamKey(7) / "x").rng();
    Tensor x = Tensor::randn({6, 3, 8, 8}, xr);
    for (double& v : x.data) v *= 0.5;
    Tape tape;
    std::vector<int> labels = {0, 1, 2, 3, 4, 0};
    forward_train(g, x, tape, &labels);
    g.params()[1].trainable = false;  // freeze conv bias

    const fs::path p = tmp_path("plain.nfck");
    save_checkpoint(p.string(), g);
    Checkpoint ck = load_checkpoint(p.string());

    CHECK(ck.version == 1);
    CHECK(ck.graph.name() == "demo");
    CHECK(ck.graph.input_shape() == g.input_shape());
    REQUIRE(ck.graph.num_nodes() == g.num_nodes());
    for (int i = 0; i < g.num_nodes(); ++i) {
        CHECK(ck.graph.node(i).spec.kind == g.node(i).spec.kind);
        CHECK(ck.graph.node(i).name == g.node(i).name);
        CHECK(ck.graph.node(i).inputs == g.node(i).inputs);
    }
    REQUIRE(ck.graph.params().size() == g.params().size());
    for (size_t i = 0; i < g.params().size(); ++i) {
        const Param& a = g.params()[i];
        const Param& b = ck.graph.params()[i];
        CHECK(a.name == b.name);
        CHECK(a.trainable == b.trainable);
        REQUIRE(a.value.shape == b.value.shape);
        for (size_t j = 0; j < a.value.data.size(); ++j) {
            // Exactly the f32 rounding of the original double, nothing else.
            CHECK(b.value.data[j] == double(float(a.value.data[j])));
        }
    }
    CHECK(!ck.quantized.has_value());
    CHECK(!ck.generator.has_value());

    // Behavioral equivalence at f32 precision.
    Tensor ya = forward_eval(g, x);
    Tensor yb = forward_eval(ck.graph, x);
    REQUIRE(ya.shape == yb.shape);
    for (size_t i = 0; i < ya.data.size(); ++i)
        CHECK(ya.data[i] == doctest::Approx(yb.data[i]).epsilon(1e-5));
}

TEST_CASE("saving twice yields byte-identical files") {
    Graph g = demo_graph();
    const fs::path a = tmp_path("det_a.nfck");
    const fs::path b = tmp_path("det_b.nfck");
    save_checkpoint(a.string(), g, nullptr, nullptr, {{"note", "x"}});
    save_checkpoint(b.string(), g, nullptr, nullptr, {{"note", "x"}});
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("quantized section round trips codes, scales, and binding") {
    Graph g = demo_graph();
    QuantizedWeights q = quantize_model(g, 4);
    const fs::path p = tmp_path("quant.nfck");
    save_checkpoint(p.string(), g, &q);
    Checkpoint ck = load_checkpoint(p.string());

    REQUIRE(ck.quantized.has_value());
    const QuantizedWeights& r = *ck.quantized;
    CHECK(r.b == 4);
    REQUIRE(r.layers.size() == q.layers.size());
    for (size_t i = 0; i < q.layers.size(); ++i) {
        CHECK(r.layers[i].param_name == q.layers[i].param_name);
        CHECK(r.layers[i].codes == q.layers[i].codes);
        CHECK(r.layers[i].scale == double(float(q.layers[i].scale)));
        CHECK(r.layers[i].param_index ==
              ck.graph.find_param(q.layers[i].param_name));
    }

    // The reloaded pair must drive the fault machinery unchanged.
    BitErrorSpec spec;
    spec.p = 0.05;
    spec.seed = 9;
    spec.b = 4;
    FlipMask m1 = sample_model_mask(q, spec, 0);
    FlipMask m2 = sample_model_mask(r, spec, 0);
    for (size_t i = 0; i < m1.layers.size(); ++i)
        CHECK(m1.layers[i].words == m2.layers[i].words);
}

TEST_CASE("generator arch header and extra JSON round trip") {
    Graph g({3, 8, 8}, "gen");
    g.add(LayerSpec::conv2d(3, 3));
    g.add(LayerSpec::tanh_act());
    g.init_params(StreamKey(5) / "params");
    GeneratorArch arch{"conv-s", 0.25, {3, 8, 8}};
    nlohmann::json extra = {{"epoch", 12}, {"lambda", 5.0}};

    const fs::path p = tmp_path("gen.nfck");
    save_checkpoint(p.string(), g, nullptr, &arch, extra);
    Checkpoint ck = load_checkpoint(p.string());

    REQUIRE(ck.generator.has_value());
    CHECK(ck.generator->family == "conv-s");
    CHECK(ck.generator->scale == 0.25);
    CHECK(ck.generator->input_shape == std::vector<int>{3, 8, 8});
    CHECK(ck.extra.at("epoch") == 12);
    CHECK(ck.extra.at("lambda") == 5.0);
}

TEST_CASE("corrupt files raise format errors naming the file") {
    Graph g = demo_graph();
    const fs::path p = tmp_path("base.nfck");
    save_checkpoint(p.string(), g);
    const std::vector<unsigned char> good = slurp(p);

    SUBCASE("missing file") {
        CHECK_THROWS_WITH_AS(load_checkpoint("ck_fixture/nope.nfck"),
                             doctest::Contains("nope.nfck"), FormatError);
    }
    SUBCASE("bad magic") {
        auto bad = good;
        bad[0] = 'X';
        const fs::path bp = tmp_path("magic.nfck");
        spit(bp, bad);
        CHECK_THROWS_WITH_AS(load_checkpoint(bp.string()),
                             doctest::Contains("magic"), FormatError);
    }
    SUBCASE("unsupported version") {
        auto bad = good;
        bad[4] = 0x7f;
        const fs::path bp = tmp_path("version.nfck");
        spit(bp, bad);
        CHECK_THROWS_WITH_AS(load_checkpoint(bp.string()),
                             doctest::Contains("version"), FormatError);
    }
    SUBCASE("truncated parameter blob") {
        auto bad = good;
        bad.pop_back();
        const fs::path bp = tmp_path("trunc.nfck");
        spit(bp, bad);
        CHECK_THROWS_WITH_AS(load_checkpoint(bp.string()),
                             doctest::Contains("truncated"), FormatError);
    }
    SUBCASE("trailing bytes") {
        auto bad = good;
        bad.push_back(0);
        const fs::path bp = tmp_path("trail.nfck");
        spit(bp, bad);
        CHECK_THROWS_WITH_AS(load_checkpoint(bp.string()),
                             doctest::Contains("trailing"), FormatError);
    }
    SUBCASE("mangled manifest JSON") {
        auto bad = good;
        bad[10] = '!';  // first manifest byte; breaks JSON parsing
        const fs::path bp = tmp_path("manifest.nfck");
        spit(bp, bad);
        CHECK_THROWS_WITH_AS(load_checkpoint(bp.string()),
                             doctest::Contains("manifest"), FormatError);
    }
}

TEST_CASE("unbound quantized weights are rejected at save time") {
    Graph g = demo_graph();
    QuantizedWeights q = quantize_model(g, 8);
    Graph other = demo_graph();
    q.layers[0].param_name = "not_a_param.w";
    CHECK_THROWS_AS(save_checkpoint(tmp_path("x.nfck").string(), other, &q),
                    ArgumentError);
}
