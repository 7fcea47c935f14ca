#include <doctest.h>

#include <cmath>
#include <complex>

#include "gridfall/power_flow.hpp"
#include "test_util.hpp"

using namespace gridfall;

namespace {

// Closed-form 2-bus solution: with V1 = 1+0j and net injection S = P+jQ at
// bus 2 behind z = r+jx, writing V2 = a+jb gives b = xP - rQ and
// a^2 - a + (b^2 - rP - xQ) = 0, taking the high-voltage root.
struct TwoBusOracle {
    bool feasible = false;
    double v = 0.0;
    double theta = 0.0;
};

TwoBusOracle two_bus_solution(double r, double x, double p, double q) {
    TwoBusOracle o;
    const double b = x * p - r * q;
    const double disc = 1.0 - 4.0 * (b * b - r * p - x * q);
    if (disc < 0.0) return o;
    const double a = 0.5 * (1.0 + std::sqrt(disc));
    o.feasible = true;
    o.v = std::hypot(a, b);
    o.theta = std::atan2(b, a);
    return o;
}

}  // namespace

TEST_CASE("ybus single branch") {
    const GridModel g = gftest::two_bus_grid(0.0, 0.1);
    GridModel g2 = g;
    g2.branches[0].r_pu = 0.0;  // pure reactance
    const Ybus y = build_ybus(g2);
    // off-diagonal = -1/(j0.1) = +10j
    CHECK(std::abs(y[0][1]) == doctest::Approx(10.0));
    CHECK(y[0][1].imag() == doctest::Approx(10.0));
    CHECK(y[0][1].real() == doctest::Approx(0.0));
    CHECK(y[0][1] == y[1][0]);
    CHECK(y[0][0] == -y[0][1]);
}

TEST_CASE("ybus shunt goes on the diagonal only") {
    GridModel g = gftest::two_bus_grid(0.01, 0.1);
    g.branches[0].b_pu = 0.04;
    const Ybus y = build_ybus(g);
    const std::complex<double> ys = 1.0 / std::complex<double>(0.01, 0.1);
    CHECK(std::abs(y[0][1] + ys) < 1e-12);
    CHECK(std::abs(y[0][0] - (ys + std::complex<double>(0, 0.02))) < 1e-12);
}

TEST_CASE("flat case: no load, no injection") {
    const GridModel g = gftest::two_bus_grid(0.01, 0.05);
    const ScaledGrid sg = apply_scenario(g, {1, 1, 1});
    const PfSolution sol = solve_pf(sg, Dispatch::zeros(0));
    CHECK(sol.converged);
    CHECK(sol.iterations <= 1);
    CHECK(sol.v_pu[0] == 1.0);
    CHECK(sol.v_pu[1] == doctest::Approx(1.0));
    CHECK(sol.theta_rad[1] == doctest::Approx(0.0));
}

TEST_CASE("two-bus analytic oracle") {
    const double r = 0.02, x = 0.08;
    struct Case {
        double load_p, load_q, gen_p, gen_q;
    };
    const Case cases[] = {
        {1.5, 0.5, 0.0, 0.0},   // pure load
        {0.0, 0.0, 2.0, 0.0},   // pure generation
        {0.5, 0.1, 3.0, 1.0},   // net export
        {2.0, 0.8, 1.0, -0.5},  // net import with inductive DER
    };
    for (const Case& c : cases) {
        CAPTURE(c.load_p);
        CAPTURE(c.gen_p);
        const GridModel g = gftest::two_bus_grid(r, x, c.load_p, c.load_q, true);
        const ScaledGrid sg = apply_scenario(g, {1, 1, 1});
        Dispatch d = Dispatch::zeros(1);
        d.p_mw[0] = c.gen_p;
        d.q_mvar[0] = c.gen_q;
        const PfSolution sol = solve_pf(sg, d);
        REQUIRE(sol.converged);
        const auto oracle = two_bus_solution(r, x, c.gen_p - c.load_p, c.gen_q - c.load_q);
        REQUIRE(oracle.feasible);
        CHECK(sol.v_pu[1] == doctest::Approx(oracle.v).epsilon(1e-6));
        CHECK(sol.theta_rad[1] == doctest::Approx(oracle.theta).epsilon(1e-6));
    }
}

TEST_CASE("overload beyond the maximum power point diverges") {
    const double r = 0.01, x = 0.1;
    // Analytic loadability bound for pure active load P (Q = 0):
    // disc = 1 - 4 (x^2 P^2 - r P) < 0.
    double p_load = 1.0;
    while (two_bus_solution(r, x, -p_load, 0.0).feasible) p_load += 0.5;
    const GridModel g = gftest::two_bus_grid(r, x, p_load, 0.0);
    const ScaledGrid sg = apply_scenario(g, {1, 1, 1});
    const PfSolution sol = solve_pf(sg, Dispatch::zeros(0));
    CHECK_FALSE(sol.converged);
}

TEST_CASE("power balance and slack identity") {
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {1.0, 1.0, 0.6});
    Dispatch d = Dispatch::zeros(2);
    d.p_mw[0] = sg.der_p_avail_mw[0];
    d.p_mw[1] = 1.5;
    d.q_mvar[1] = 0.4;
    const PfSolution sol = solve_pf(sg, d);
    REQUIRE(sol.converged);
    CHECK(sol.max_mismatch_pu < 1e-8);

    // losses from branch currents
    const Ybus y = build_ybus(g);
    std::vector<std::complex<double>> v(g.bus_count());
    for (int i = 0; i < g.bus_count(); ++i)
        v[i] = std::polar(sol.v_pu[i], sol.theta_rad[i]);
    double losses = 0.0;
    for (const auto& br : g.branches) {
        const int i = br.from_bus - 1, j = br.to_bus - 1;
        const std::complex<double> zinv = 1.0 / std::complex<double>(br.r_pu, br.x_pu);
        const std::complex<double> current = (v[i] - v[j]) * zinv;
        losses += std::norm(current) * br.r_pu;
    }
    double load_sum = 0.0, gen_sum = 0.0;
    for (int i = 0; i < g.bus_count(); ++i) load_sum += sg.load_p_mw[i];
    for (std::size_t k = 0; k < d.p_mw.size(); ++k) gen_sum += d.p_mw[k];
    CHECK(sol.slack_p_pu == doctest::Approx(load_sum - gen_sum + losses).epsilon(1e-8));
}

TEST_CASE("determinism: identical inputs give bit-identical solutions") {
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {0.8, 0.2, 0.9});
    Dispatch d = Dispatch::zeros(2);
    d.p_mw[0] = sg.der_p_avail_mw[0];
    d.p_mw[1] = 2.0;
    d.q_mvar[1] = -0.7;
    const PfSolution a = solve_pf(sg, d);
    const PfSolution b = solve_pf(sg, d);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    for (int i = 0; i < g.bus_count(); ++i) {
        CHECK(a.v_pu[i] == b.v_pu[i]);
        CHECK(a.theta_rad[i] == b.theta_rad[i]);
    }
    CHECK(a.iterations == b.iterations);
}

TEST_CASE("warm start reaches the same fixed point") {
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {1.0, 0.0, 1.0});
    Dispatch d = Dispatch::zeros(2);
    d.p_mw[1] = 3.0;
    const PfSolution cold = solve_pf(sg, d);
    REQUIRE(cold.converged);

    const ScaledGrid sg2 = apply_scenario(g, {0.95, 0.0, 1.0});
    PfOptions opts;
    opts.warm_start = &cold;
    const PfSolution warm = solve_pf(sg2, d, opts);
    const PfSolution cold2 = solve_pf(sg2, d);
    REQUIRE(warm.converged);
    REQUIRE(cold2.converged);
    for (int i = 0; i < g.bus_count(); ++i)
        CHECK(warm.v_pu[i] == doctest::Approx(cold2.v_pu[i]).epsilon(1e-9));
    CHECK(warm.iterations <= cold2.iterations);
}
