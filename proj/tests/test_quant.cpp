#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "neuralfuse/errors.hpp"
#include "neuralfuse/quant.hpp"

using namespace nf;

TEST_CASE("scale and codes for W=[-2,1,3]") {
    const Tensor w = Tensor::from({3}, {-2.0, 1.0, 3.0});
    SUBCASE("b=8") {
        // s = 3/127; codes: -2/s = -84.67 -> -85, 1/s = 42.33 -> 42, 3/s = 127.
        const QuantizedLayer q = quantize_tensor(w, 8);
        CHECK(q.scale == doctest::Approx(3.0 / 127.0).epsilon(1e-15));
        CHECK(q.codes == std::vector<int8_t>{-85, 42, 127});
    }
    SUBCASE("b=2") {
        const QuantizedLayer q = quantize_tensor(w, 2);
        CHECK(q.scale == doctest::Approx(3.0).epsilon(1e-15));
        CHECK(q.codes == std::vector<int8_t>{-1, 0, 1});
    }
}

TEST_CASE("all-zero tensors quantize to scale 1, codes 0") {
    const QuantizedLayer q = quantize_tensor(Tensor::zeros({2, 3}), 8);
    CHECK(q.scale == 1.0);
    for (int8_t c : q.codes) CHECK(c == 0);
}

TEST_CASE("rounding is half away from zero") {
    // s = 1 here, so codes are round(W) directly.
    const Tensor w = Tensor::from({4}, {3.0, 1.5, -1.5, 2.5});
    const QuantizedLayer q = quantize_tensor(w, 3);
    CHECK(q.scale == doctest::Approx(1.0));
    CHECK(q.codes == std::vector<int8_t>{3, 2, -2, 3});
}

TEST_CASE("precision bounds are enforced") {
    const Tensor w = Tensor::from({1}, {1.0});
    CHECK_THROWS_AS(quantize_tensor(w, 1), ArgumentError);
    CHECK_THROWS_AS(quantize_tensor(w, 9), ArgumentError);
    for (int b = 2; b <= 8; ++b) CHECK_NOTHROW(quantize_tensor(w, b));
}

TEST_CASE("dequantize error bound and saturation, random tensors") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng = (StreamKey(seed) / "qt").rng();
        const Tensor w = Tensor::randn({4, 5, 3, 3}, rng, 0.7);
        for (int b : {2, 4, 8}) {
            const QuantizedLayer q = quantize_tensor(w, b);
            CHECK(q.scale > 0.0);
            const Tensor back = dequantize(q);
            int maxcode = 0;
            for (int8_t c : q.codes) maxcode = std::max(maxcode, std::abs(int(c)));
            CHECK(maxcode == (1 << (b - 1)) - 1);  // saturation at max|W|
            for (size_t i = 0; i < w.data.size(); ++i)
                CHECK(std::abs(w.data[i] - back.data[i]) <= q.scale / 2 + 1e-12);
        }
    }
}

TEST_CASE("codes [127] with s=3/127 dequantize to exactly 3") {
    QuantizedLayer q;
    q.shape = {1};
    q.codes = {127};
    q.scale = 3.0 / 127.0;
    CHECK(dequantize(q).data[0] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("post-fault code -128 dequantizes without complaint") {
    QuantizedLayer q;
    q.shape = {1};
    q.codes = {static_cast<int8_t>(-128)};
    q.scale = 1.0;
    CHECK(dequantize(q).data[0] == -128.0);
}

TEST_CASE("encode_bits matches the documented examples") {
    CHECK(encode_bits(3, 8) ==
          std::vector<uint8_t>{0, 0, 0, 0, 0, 0, 1, 1});
    CHECK(encode_bits(-125, 8) ==
          std::vector<uint8_t>{1, 0, 0, 0, 0, 0, 1, 1});
    CHECK(encode_bits(-1, 4) == std::vector<uint8_t>{1, 1, 1, 1});
    CHECK_THROWS_AS(encode_bits(128, 8), ArgumentError);
    CHECK_THROWS_AS(encode_bits(-129, 8), ArgumentError);
    CHECK_THROWS_AS(decode_bits({1, 0}, 3), ArgumentError);
}

TEST_CASE("decode(encode(code)) is the identity, exhaustively for b in 2..8") {
    for (int b = 2; b <= 8; ++b) {
        const int lo = -(1 << (b - 1));
        const int hi = (1 << (b - 1)) - 1;
        for (int code = lo; code <= hi; ++code)
            CHECK(decode_bits(encode_bits(code, b), b) == code);
    }
}

TEST_CASE("quantize_model touches only weight-role parameters") {
    Graph g({3, 8, 8});
    g.add(LayerSpec::conv2d(3, 4));
    g.add(LayerSpec::batchnorm(4));
    g.add(LayerSpec::relu());
    g.add(LayerSpec::linear(4 * 8 * 8, 2));
    g.init_params(StreamKey(3) / "params");
    const QuantizedWeights q = quantize_model(g, 8);
    REQUIRE(q.layers.size() == 2);  // conv weight + linear weight
    CHECK(q.layers[0].param_name == "conv2d_0.w");
    CHECK(q.layers[1].param_name == "linear_3.w");
    CHECK(q.total_codes() == 4 * 3 * 3 * 3 + 2 * 4 * 8 * 8);
    // Overlay round trip: eval outputs match dequantized weights exactly.
    const ParamOverlay ov = dequantize_overlay(q);
    CHECK(ov.size() == 2);
}

TEST_CASE("fake_quantize equals quantize-then-dequantize") {
    Rng rng = (StreamKey(5) / "fq").rng();
    const Tensor w = Tensor::randn({20}, rng);
    const Tensor fq = fake_quantize(w, 4);
    const QuantizedLayer q = quantize_tensor(w, 4);
    const Tensor dq = dequantize(q);
    CHECK(fq.data == dq.data);
}
