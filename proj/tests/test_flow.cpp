#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "ssos/flow.hpp"
#include "ssos/rng.hpp"

using namespace ssos;

namespace {

// random parameters in every net layer, including the zero-initialized outputs
void randomize_flow(CouplingFlow& flow, uint64_t seed, double scale = 0.5) {
    Rng rng(seed);
    for (auto& layer : flow.layers)
        for (DenseNet* net : {&layer.scale_net, &layer.translate_net})
            for (auto& l : net->layers) {
                for (auto& w : l.weight) w = rng.normal(0.0, scale);
                for (auto& b : l.bias) b = rng.normal(0.0, scale);
            }
}

// log |det| of the numerically differentiated Jacobian of the forward map
double fd_log_abs_det(const CouplingFlow& flow, const std::vector<double>& v, double step) {
    const int d = flow.dim;
    std::vector<std::vector<double>> jac(d, std::vector<double>(d));
    for (int j = 0; j < d; ++j) {
        std::vector<double> hi = v, lo = v;
        hi[j] += step;
        lo[j] -= step;
        auto fhi = flow_forward(flow, hi).latent;
        auto flo = flow_forward(flow, lo).latent;
        for (int i = 0; i < d; ++i) jac[i][j] = (fhi[i] - flo[i]) / (2 * step);
    }
    // LU decomposition with partial pivoting for the determinant
    double log_det = 0.0;
    for (int col = 0; col < d; ++col) {
        int pivot = col;
        for (int r = col + 1; r < d; ++r)
            if (std::abs(jac[r][col]) > std::abs(jac[pivot][col])) pivot = r;
        if (pivot != col) std::swap(jac[pivot], jac[col]);
        log_det += std::log(std::abs(jac[col][col]));
        for (int r = col + 1; r < d; ++r) {
            double factor = jac[r][col] / jac[col][col];
            for (int c = col; c < d; ++c) jac[r][c] -= factor * jac[col][c];
        }
    }
    return log_det;
}

}  // namespace

TEST_SUITE("flow") {

TEST_CASE("zero-initialized flow is the identity") {
    CouplingFlow flow = make_coupling_flow(4, 4, 8, 3);
    std::vector<double> v{0.5, -1.0, 2.0, 0.0};
    FlowResult r = flow_forward(flow, v);
    CHECK(r.latent == v);
    CHECK(r.log_det == 0.0);
    CHECK(flow_inverse(flow, v) == v);
}

TEST_CASE("single layer log-det equals the applied scale") {
    // one coupling layer over d=2, nets are constant (bias-only), so the
    // transformed dim is scaled by exp(s) with s = cap * tanh(bias / cap)
    CouplingFlow flow = make_coupling_flow(2, 1, 4, 1);
    double raw = 0.7;
    flow.layers[0].scale_net.layers.back().bias.assign(2, raw);
    double s = 2.0 * std::tanh(raw / 2.0);
    std::vector<double> v{1.3, -0.4};
    FlowResult r = flow_forward(flow, v);
    CHECK(r.log_det == doctest::Approx(s).epsilon(1e-12));
    // masked dim (first half) passes through
    CHECK(r.latent[0] == v[0]);
    CHECK(r.latent[1] == doctest::Approx(v[1] * std::exp(s)).epsilon(1e-12));
}

TEST_CASE("log-det matches the finite-difference Jacobian") {
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        for (int d : {2, 3, 5, 8}) {
            CouplingFlow flow = make_coupling_flow(d, 4, 8, seed);
            randomize_flow(flow, seed * 101 + d);
            Rng rng(seed + d);
            std::vector<double> v(d);
            for (auto& x : v) x = rng.normal();
            FlowResult r = flow_forward(flow, v);
            double fd = fd_log_abs_det(flow, v, 1e-5);
            CHECK(oracle::grad_rel_err(r.log_det, fd) < 1e-4);
        }
    }
}

TEST_CASE("round trips") {
    for (uint64_t seed : {10ull, 20ull, 30ull}) {
        CouplingFlow flow = make_coupling_flow(6, 4, 16, seed);
        randomize_flow(flow, seed + 7);
        Rng rng(seed);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> v(6);
            for (auto& x : v) x = rng.normal();
            std::vector<double> back = flow_inverse(flow, flow_forward(flow, v).latent);
            for (int i = 0; i < 6; ++i) CHECK(std::abs(back[i] - v[i]) < 1e-6);

            std::vector<double> xi(6);
            for (auto& x : xi) x = rng.normal();
            std::vector<double> fwd = flow_forward(flow, flow_inverse(flow, xi)).latent;
            for (int i = 0; i < 6; ++i) CHECK(std::abs(fwd[i] - xi[i]) < 1e-6);
        }
    }
    CouplingFlow flow = make_coupling_flow(2, 2, 4, 0);
    CHECK_THROWS_AS(flow_forward(flow, {std::nan(""), 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(flow_forward(flow, {0.0}), std::invalid_argument);
}

TEST_CASE("identity-flow nll closed forms") {
    CouplingFlow flow1 = make_coupling_flow(1, 2, 4, 0);
    CHECK(flow_nll(flow1, {{0.0}}) == doctest::Approx(0.5 * std::log(2 * M_PI)).epsilon(1e-12));

    // expectation over standard-normal data in d=2 is d/2 (1 + log 2 pi)
    CouplingFlow flow2 = make_coupling_flow(2, 2, 4, 0);
    Rng rng(2024);
    std::vector<std::vector<double>> batch;
    for (int i = 0; i < 512; ++i) batch.push_back({rng.normal(), rng.normal()});
    double expected = 1.0 + std::log(2 * M_PI);
    CHECK(std::abs(flow_nll(flow2, batch) - expected) < 0.05);

    CHECK_THROWS_AS(flow_nll(flow1, {}), std::invalid_argument);
}

TEST_CASE("nll gradient matches finite differences") {
    CouplingFlow flow = make_coupling_flow(3, 2, 4, 9);
    randomize_flow(flow, 99, 0.3);
    Rng rng(50);
    std::vector<std::vector<double>> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({rng.normal(), rng.normal(), rng.normal()});

    FlowGrads grads;
    grads.init_like(flow);
    flow_nll(flow, batch, &grads);
    auto loss = [&]() { return flow_nll(flow, batch); };

    for (size_t li = 0; li < flow.layers.size(); ++li) {
        for (auto [net, g] : {std::pair{&flow.layers[li].scale_net, &grads.scale[li]},
                              std::pair{&flow.layers[li].translate_net, &grads.translate[li]}}) {
            for (size_t l = 0; l < net->layers.size(); ++l) {
                for (size_t wi = 0; wi < net->layers[l].weight.size(); ++wi) {
                    double fd = oracle::central_diff(loss, net->layers[l].weight[wi], 1e-5);
                    CHECK(oracle::grad_rel_err(g->weight[l][wi], fd) < 1e-4);
                }
                for (size_t bi = 0; bi < net->layers[l].bias.size(); ++bi) {
                    double fd = oracle::central_diff(loss, net->layers[l].bias[bi], 1e-5);
                    CHECK(oracle::grad_rel_err(g->bias[l][bi], fd) < 1e-4);
                }
            }
        }
    }
}

TEST_CASE("outlier selection is the top of the norm ordering") {
    CouplingFlow flow = make_coupling_flow(4, 4, 8, 5);

    SUBCASE("identity flow returns the largest-norm latents unchanged") {
        auto all = sample_flow_outliers(flow, 100, 100, 77);
        auto picked = sample_flow_outliers(flow, 100, 3, 77);
        std::vector<double> norms;
        for (const auto& s : all) {
            double n = 0;
            for (double x : s) n += x * x;
            norms.push_back(n);
        }
        std::sort(norms.begin(), norms.end(), std::greater<>());
        for (size_t i = 0; i < picked.size(); ++i) {
            double n = 0;
            for (double x : picked[i]) n += x * x;
            CHECK(n == doctest::Approx(norms[i]).epsilon(1e-12));
        }
    }

    SUBCASE("selection through a trained flow still follows the latent norm") {
        randomize_flow(flow, 123, 0.3);
        auto picked = sample_flow_outliers(flow, 50, 5, 31);
        auto all = sample_flow_outliers(flow, 50, 50, 31);
        // map everything back to the latent space and compare densities
        std::vector<double> all_norms;
        for (const auto& s : all) {
            auto xi = flow_forward(flow, s).latent;
            double n = 0;
            for (double x : xi) n += x * x;
            all_norms.push_back(n);
        }
        std::sort(all_norms.begin(), all_norms.end(), std::greater<>());
        for (size_t i = 0; i < picked.size(); ++i) {
            auto xi = flow_forward(flow, picked[i]).latent;
            double n = 0;
            for (double x : xi) n += x * x;
            CHECK(n == doctest::Approx(all_norms[i]).epsilon(1e-5));
        }
    }

    CHECK_THROWS_AS(sample_flow_outliers(flow, 0, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_flow_outliers(flow, 3, 4, 1), std::invalid_argument);
}

TEST_CASE("training on a 2-d mixture reduces the nll") {
    Rng rng(7);
    std::vector<std::vector<double>> data;
    for (int i = 0; i < 512; ++i) {
        double cx = (i % 2 == 0) ? -2.0 : 2.0;
        data.push_back({rng.normal(cx, 0.5), rng.normal(-cx, 0.5)});
    }
    CouplingFlow flow = make_coupling_flow(2, 4, 16, 77);
    SgdState sgd;
    sgd.learning_rate = 0.01;
    sgd.weight_decay = 0.0;
    sgd.warmup_iters = 0;
    sgd.decay_epochs = {};

    std::vector<double> history;
    Rng batch_rng(13);
    for (int step = 0; step < 200; ++step) {
        std::vector<std::vector<double>> batch;
        for (int i = 0; i < 64; ++i) batch.push_back(data[batch_rng.uniform_int(data.size())]);
        FlowGrads grads;
        grads.init_like(flow);
        history.push_back(flow_nll(flow, batch, &grads));
        sgd_step(flow, grads, sgd, step + 1, 0);
    }
    auto mean20 = [&](size_t start) {
        double s = 0;
        for (size_t i = start; i < start + 20; ++i) s += history[i];
        return s / 20.0;
    };
    CHECK(mean20(180) < mean20(0));

    // invertibility still holds after training
    Rng check_rng(99);
    for (int i = 0; i < 10; ++i) {
        std::vector<double> v{check_rng.normal(), check_rng.normal()};
        auto back = flow_inverse(flow, flow_forward(flow, v).latent);
        CHECK(std::abs(back[0] - v[0]) < 1e-6);
        CHECK(std::abs(back[1] - v[1]) < 1e-6);
    }
}

}  // TEST_SUITE
