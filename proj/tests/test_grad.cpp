// Finite-difference checks of the hand-written backward passes.

#include "grad_oracle.hpp"

#include "doctest.h"

using namespace paro;
using namespace paro::oracle;

namespace {

void check_gradient(const char* what, std::vector<double>& params, const std::vector<double>& analytic,
                    const std::function<double()>& loss) {
    const GradCheck r = compare_gradient(what, params, analytic, loss);
    INFO(r.first_failure);
    CHECK_EQ(r.failures, 0u);
}

void check_linear(std::uint64_t seed, WeightMode mode, int bits) {
    const GradCheck r = check_linear_case(seed, mode, bits);
    INFO(r.first_failure);
    CHECK_EQ(r.failures, 0u);
    CHECK_GT(r.checked, 0u);
}

}  // namespace

TEST_CASE("LinearBackward.FloatModeMatchesFiniteDifferences") {
    for (std::uint64_t seed : {1u, 2u}) check_linear(seed, WeightMode::Float, 4);
}

TEST_CASE("LinearBackward.DynamicQuantMatchesFrozenSurrogate") {
    for (std::uint64_t seed : {3u, 4u, 5u}) check_linear(seed, WeightMode::Dynamic, 4);
    check_linear(6, WeightMode::Dynamic, 2);
}

TEST_CASE("LinearBackward.StaticQuantMatchesFrozenSurrogate") {
    for (std::uint64_t seed : {7u, 8u, 9u}) check_linear(seed, WeightMode::Static, 3);
}

TEST_CASE("LinearBackward.IdentityTransformOnExactWeightsHasZeroTransformGradient") {
    // With the loss minimized (pred == target), every gradient vanishes.
    Rng rng(10);
    Matrix w = random_matrix(8, 4, rng);
    QuantLinear lin = QuantLinear::make(w, {}, make_bundle(8, {8, 2, 4}, rng), QuantSpec{4, 8});
    const Matrix x = random_matrix(5, 8, rng);
    LinearTape tape;
    const Matrix y = linear_forward(lin, x, &tape);
    const LossResult l = huber_loss(y, y);
    const LinearGrads g = linear_backward(lin, tape, l.grad, {true, true, false, true});
    for (double v : g.transform.angles) CHECK_EQ(v, 0.0);
    for (double v : g.transform.alpha) CHECK_EQ(v, 0.0);
}

TEST_CASE("LayerBackward.MatchesFrozenSurrogateThroughSiluAndResidual") {
    Rng rng(11);
    const std::size_t D = 16, H = 24, T = 5;
    ToyDecoderLayer fl;
    fl.up_weight = random_matrix(D, H, rng, 0.3);
    fl.down_weight = random_matrix(H, D, rng, 0.3);
    fl.up_bias.assign(H, 0.05f);
    fl.down_bias.assign(D, -0.02f);
    QuantLayer layer =
        make_quant_layer(fl, random_bundle(D, {8, 2, 4}, rng), random_bundle(H, {8, 2, 4}, rng), QuantSpec{4, 8});
    const Matrix x = random_matrix(T, D, rng);
    const Matrix gy = random_matrix(T, D, rng);
    LayerTape tape;
    layer_forward(layer, x, &tape);
    const LayerGrads g = layer_backward(layer, tape, gy, {true, true, false, true});

    DLinear up = to_double(layer.up, tape.up);
    DLinear down = to_double(layer.down, tape.down);
    DMat dx(x);
    const DMat dgy(gy);
    auto loss = [&] {
        DMat h = surrogate_linear(up, dx);
        for (double& v : h.v) v = dsilu(v);
        DMat y = surrogate_linear(down, h);
        for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += dx.v[i];
        return dot(y, dgy);
    };
    check_gradient("up.alpha", up.alpha, g.up.transform.alpha, loss);
    check_gradient("up.angles", up.angles, g.up.transform.angles, loss);
    check_gradient("down.alpha", down.alpha, g.down.transform.alpha, loss);
    check_gradient("down.angles", down.angles, g.down.transform.angles, loss);
    check_gradient("up.weight", up.weight.v, flat(g.up.weight), loss);
    check_gradient("down.weight", down.weight.v, flat(g.down.weight), loss);
    check_gradient("input", dx.v, flat(g.input), loss);
}
