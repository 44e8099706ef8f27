#include "covdet/detection.hpp"
#include "covdet/model.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace covdet;
using Vec = RVector<double>;

TEST_CASE("true gamma is recovered exactly at half the gain")
{
    SystemConfig cfg;
    cfg.N = 40;
    cfg.K = 9;
    cfg.Q = 4;
    cfg.gain = {0.3};
    Engine rng(2);
    const auto truth = sample_activity<double>(cfg, rng);
    const auto res = detect(truth.gamma_true, 0.15, cfg.Q);
    CHECK(res.decision == truth.selected);
    CHECK(res.theta == 0.15);
    CHECK(res.devices() == 40);
    const auto rep = score(res, truth.selected);
    CHECK(rep.missed + rep.false_alarm + rep.data_error == 0);
    CHECK(rep.error_rate() == 0.0);
}

TEST_CASE("zero gamma declares everyone inactive")
{
    const auto res = detect(Vec::Zero(12), 0.0, 3);
    CHECK(res.decision == std::vector<Index>(4, -1));
}

TEST_CASE("argmax picks the larger sequence and ties go to the smallest index")
{
    Vec g(2);
    g << 0.4, 0.6;
    CHECK(detect(g, 0.5, 2).decision == std::vector<Index>{1});
    g << 0.7, 0.7;
    CHECK(detect(g, 0.5, 2).decision == std::vector<Index>{0});
    // Strictly greater than the threshold.
    g << 0.5, 0.5;
    CHECK(detect(g, 0.5, 2).decision == std::vector<Index>{-1});
}

TEST_CASE("detect rejects bad arguments")
{
    CHECK_THROWS_AS(detect(Vec::Zero(4), -1.0, 2), std::invalid_argument);
    CHECK_THROWS_AS(detect(Vec::Zero(5), 0.5, 2), std::invalid_argument);
    CHECK_THROWS_AS(detect(Vec::Zero(4), 0.5, 0), std::invalid_argument);
}

TEST_CASE("score counts each error kind")
{
    DetectionResult all_off{std::vector<Index>(5, -1), 0.5};
    DetectionResult three_on{{0, -1, 1, -1, 0}, 0.5};
    const std::vector<Index> silent(5, -1);
    const std::vector<Index> truth{0, 1, -1, -1, 1};

    CHECK(score(three_on, silent).false_alarm == 3);
    const auto missed = score(all_off, truth);
    CHECK(missed.missed == 3);
    CHECK(missed.missed_rate() == doctest::Approx(0.6));

    const auto mixed = score(three_on, truth);
    CHECK(mixed.missed == 1);      // device 1
    CHECK(mixed.false_alarm == 1); // device 2
    CHECK(mixed.data_error == 1);  // device 4
    CHECK(mixed.error_rate() == doctest::Approx(0.6));
    CHECK(mixed.devices == 5);

    CHECK_THROWS_AS(score(three_on, std::vector<Index>(4, -1)), std::invalid_argument);
    CHECK(ErrorReport{}.error_rate() == 0.0);
}

TEST_CASE("detection is invariant to a common rescaling")
{
    Engine rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        Vec g(30);
        for (Index j = 0; j < 30; ++j) g[j] = u(rng) < 0.5 ? 0.0 : u(rng);
        const double theta = u(rng);
        for (double c : {0.125, 3.0, 1024.0}) {
            CHECK(detect(g, theta, 3).decision == detect(c * g, c * theta, 3).decision);
        }
    }
}

TEST_CASE("permuting devices permutes attributions but not counts")
{
    Engine rng(6);
    const Index N = 25, Q = 2;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec g(N * Q);
    for (Index j = 0; j < N * Q; ++j) g[j] = u(rng);
    std::vector<Index> truth(static_cast<std::size_t>(N));
    for (auto& q : truth) q = u(rng) < 0.3 ? static_cast<Index>(u(rng) * Q) : -1;

    std::vector<Index> perm(static_cast<std::size_t>(N));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Vec g2(N * Q);
    std::vector<Index> truth2(static_cast<std::size_t>(N));
    for (Index n = 0; n < N; ++n) {
        const Index from = perm[static_cast<std::size_t>(n)];
        g2.segment(n * Q, Q) = g.segment(from * Q, Q);
        truth2[static_cast<std::size_t>(n)] = truth[static_cast<std::size_t>(from)];
    }

    const auto d1 = detect(g, 0.5, Q);
    const auto d2 = detect(g2, 0.5, Q);
    for (Index n = 0; n < N; ++n) {
        CHECK(d2.decision[static_cast<std::size_t>(n)] == d1.decision[static_cast<std::size_t>(perm[static_cast<std::size_t>(n)])]);
    }
    const auto r1 = score(d1, truth);
    const auto r2 = score(d2, truth2);
    CHECK(r1.missed == r2.missed);
    CHECK(r1.false_alarm == r2.false_alarm);
    CHECK(r1.data_error == r2.data_error);
}

TEST_CASE("rates stay within [0, 1]")
{
    Engine rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 30; ++t) {
        Vec g(20);
        for (Index j = 0; j < 20; ++j) g[j] = u(rng);
        std::vector<Index> truth(10);
        for (auto& q : truth) q = u(rng) < 0.5 ? (u(rng) < 0.5 ? 0 : 1) : -1;
        const auto rep = score(detect(g, 0.5, 2), truth);
        for (double r : {rep.missed_rate(), rep.false_alarm_rate(), rep.data_error_rate(), rep.error_rate()}) {
            CHECK(r >= 0.0);
            CHECK(r <= 1.0);
        }
    }
}
