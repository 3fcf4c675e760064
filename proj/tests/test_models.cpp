#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "neuralfuse/errors.hpp"
#include "neuralfuse/models.hpp"

using namespace nf;

namespace {

Tensor bounded_input(const std::vector<int>& shape, uint64_t seed) {
    Rng rng = (StreamKey(seed) / "x").rng();
    Tensor x = Tensor::zeros(shape);
    for (double& v : x.data) v = 2.0 * rng.uniform() - 1.0;
    return x;
}

}  // namespace

TEST_CASE("tiny-cnn-a: structure and parameter count") {
    Graph g = tiny_cnn_a({3, 32, 32}, 10);
    CHECK(g.name() == "tiny-cnn-a");
    CHECK(g.ends_with_loss());
    CHECK(g.num_classes() == 10);
    // conv 3->8 (224) + conv 8->16 (1168) + linear 1024->10 (10250)
    CHECK(g.param_count(true) == 11642);
    CHECK(g.param_count(true) <= 100000);

    g.init_params(StreamKey(1) / "params");
    Tensor x = bounded_input({4, 3, 32, 32}, 2);
    Tensor logits = forward_eval(g, x);
    CHECK(logits.shape == std::vector<int>{4, 10});

    std::vector<int> labels = {0, 3, 9, 5};
    Tensor loss = forward_eval(g, x, &labels);
    CHECK(loss.ndim() == 0);
    CHECK(std::isfinite(loss.data[0]));
}

TEST_CASE("tiny-cnn-b: distinct topology with a residual block") {
    Graph g = tiny_cnn_b({3, 32, 32}, 10);
    CHECK(g.name() == "tiny-cnn-b");
    CHECK(g.param_count(true) == 19630);
    CHECK(g.param_count(true) <= 100000);

    bool has_residual = false;
    for (const Node& n : g.nodes())
        has_residual |= n.spec.kind == LayerKind::residual_add;
    CHECK(has_residual);

    Graph a = tiny_cnn_a({3, 32, 32}, 10);
    CHECK(a.num_nodes() != g.num_nodes());

    g.init_params(StreamKey(3) / "params");
    Tensor x = bounded_input({2, 3, 16, 16}, 4);
    Graph g16 = tiny_cnn_b({3, 16, 16}, 4);
    g16.init_params(StreamKey(3) / "params");
    CHECK(forward_eval(g16, x).shape == std::vector<int>{2, 4});
}

TEST_CASE("tiny-cnn-c: deep plain stack") {
    Graph g = tiny_cnn_c({3, 32, 32}, 10);
    CHECK(g.name() == "tiny-cnn-c");
    // conv 3->16 (448) + 5x conv 16->16 (2320 each) + linear 1024->10 (10250)
    CHECK(g.param_count(true) == 22298);
    CHECK(g.param_count(true) <= 100000);

    int convs = 0;
    for (const Node& n : g.nodes())
        convs += n.spec.kind == LayerKind::conv2d;
    CHECK(convs == 6);

    Graph g16 = tiny_cnn_c({3, 16, 16}, 4);
    g16.init_params(StreamKey(5) / "params");
    Tensor x = bounded_input({2, 3, 16, 16}, 6);
    CHECK(forward_eval(g16, x).shape == std::vector<int>{2, 4});
}

TEST_CASE("model gradients agree with finite differences") {
    // Small instances so the finite-difference sweep stays fast; retry seeds
    // until every relu/maxpool preactivation clears the kink margin.
    // Whole models have hundreds of relu preactivations, so a 10*eps kink
    // margin is only attainable with a smaller step; eps=1e-4 keeps central
    // differences far above roundoff while the margin shrinks to 1e-3.
    for (const std::string& name : base_model_names()) {
        Graph g = build_base_model(name, {3, 8, 8}, 2);
        double err = -1.0;
        for (uint64_t seed = 1; seed <= 200; ++seed) {
            g.init_params(StreamKey(seed) / "params");
            Tensor x = bounded_input({2, 3, 8, 8}, seed * 131);
            GradcheckOptions opt;
            opt.eps = 1e-4;
            opt.max_params = 20000;  // tiny-cnn-c has ~12k at 8x8/2-class
            opt.labels = {0, 1};
            Tape probe;
            forward_train(g, x, probe, &opt.labels, nullptr, false);
            if (kink_distance(g, probe) < 10 * opt.eps) continue;
            err = gradcheck(g, x, opt);
            break;
        }
        REQUIRE(err >= 0.0);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("builder dispatch and validation") {
    CHECK_THROWS_AS(build_base_model("resnet18", {3, 32, 32}, 10), ArgumentError);
    CHECK_THROWS_AS(tiny_cnn_a({3, 30, 30}, 10), ArgumentError);  // not /4
    CHECK_THROWS_AS(tiny_cnn_a({3, 32}, 10), ArgumentError);
    CHECK_THROWS_AS(tiny_cnn_a({3, 32, 32}, 1), ArgumentError);
    CHECK(build_base_model("tiny-cnn-a", {3, 16, 16}, 4).num_classes() == 4);
    CHECK(base_model_names().size() == 3);
}
