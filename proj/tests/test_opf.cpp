#include <doctest.h>

#include <cmath>
#include <random>

#include "gridfall/capability.hpp"
#include "gridfall/opf.hpp"
#include "gridfall/regression.hpp"
#include "test_util.hpp"

using namespace gridfall;

TEST_CASE("voltage penalty dead-band") {
    CHECK(voltage_penalty(1.000, 0.01) == 0.0);
    // decimal boundary: |1.010 - 1| exceeds 0.01 by one ulp, so at worst a
    // cube of rounding noise leaks through
    CHECK(voltage_penalty(1.010, 0.01) < 1e-45);
    CHECK(voltage_penalty(0.990, 0.01) < 1e-45);
    // binary-exact boundary is exactly zero
    CHECK(voltage_penalty(1.0 + 0.015625, 0.015625) == 0.0);
    CHECK(voltage_penalty(1.020, 0.01) == doctest::Approx(1e-6));
    CHECK(voltage_penalty(0.980, 0.01) == doctest::Approx(1e-6));
    CHECK(voltage_penalty(1.05, 0.0) == doctest::Approx(1.25e-4));
}

TEST_CASE("voltage penalty is C2 at the dead-band edge") {
    // numeric first and second derivatives approach zero from outside
    const double db = 0.01, h = 1e-5;
    auto f = [&](double v) { return voltage_penalty(v, db); };
    const double edge = 1.0 + db;
    const double d1 = (f(edge + h) - f(edge - h)) / (2 * h);
    const double d2 = (f(edge + h) - 2 * f(edge) + f(edge - h)) / (h * h);
    CHECK(std::abs(d1) < 1e-8);
    CHECK(std::abs(d2) < 1e-3);
    // third derivative jumps; the cube is the lowest power that keeps C2
    const double far1 = (f(edge + 2 * h) - f(edge)) / (2 * h);
    CHECK(far1 > 0.0);
}

namespace {

PfSolution flat_pf(int n) {
    PfSolution pf;
    pf.converged = true;
    pf.v_pu.assign(n, 1.0);
    pf.theta_rad.assign(n, 0.0);
    return pf;
}

}  // namespace

TEST_CASE("total cost zero case") {
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {1, 1, 1});
    const Dispatch d = full_feed_dispatch(sg);
    CHECK(total_cost(g, flat_pf(4), d, sg.der_p_avail_mw, CostParams{}) == 0.0);
}

TEST_CASE("total cost: 10% curtailment of one DER costs c_p * 0.01") {
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {1, 1, 1});
    Dispatch d = full_feed_dispatch(sg);
    d.p_mw[1] -= 0.1 * g.ders[1].s_max_mva;
    const double cost = total_cost(g, flat_pf(4), d, sg.der_p_avail_mw, CostParams{});
    CHECK(cost == doctest::Approx(1e6 * 0.01));
}

TEST_CASE("total cost on a hand-evaluated state") {
    // 4 buses at 1.00 / 1.03 / 0.97 / 1.005; controllable DER (S=4) at
    // 3.0 MW of 4.0 available with 0.8 Mvar.
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {1, 1, 1});
    PfSolution pf = flat_pf(4);
    pf.v_pu = {1.0, 1.03, 0.97, 1.005};
    Dispatch d = full_feed_dispatch(sg);
    d.p_mw[1] = 3.0;
    d.q_mvar[1] = 0.8;

    CostParams params;  // c_v 2e3, c_q 1e4, c_p 1e6, db 0.01
    // by hand: f_v = (0.03-0.01)^3 + (0.03-0.01)^3 = 2 * 8e-6; bus 4 inside band
    const double cv = 2e3 * (8e-6 + 8e-6);
    const double cq = 1e4 * (0.8 / 4.0) * (0.8 / 4.0);
    const double cp = 1e6 * (1.0 / 4.0) * (1.0 / 4.0);
    CHECK(total_cost(g, pf, d, sg.der_p_avail_mw, params) ==
          doctest::Approx(cv + cq + cp).epsilon(1e-12));
}

TEST_CASE("total cost rejects a non-converged power flow") {
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {1, 1, 1});
    PfSolution pf = flat_pf(4);
    pf.converged = false;
    CHECK_THROWS_AS(total_cost(g, pf, full_feed_dispatch(sg), sg.der_p_avail_mw, CostParams{}),
                    std::invalid_argument);
}

TEST_CASE("opf: zero load, zero generation") {
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {0.0, 0.0, 0.0});
    const OpfResult r = solve_opf(sg, CostParams{}, full_feed_dispatch(sg));
    REQUIRE(r.converged);
    CHECK(r.setpoints[0].p_pct == 0.0);
    CHECK(r.setpoints[0].q_pct == 0.0);
    CHECK(r.cost == doctest::Approx(0.0));
}

TEST_CASE("opf: in-band voltages keep full feed-in and zero Q") {
    // tiny impedances: voltages stay inside the dead-band at full feed-in,
    // so any Q or curtailment strictly increases the cost
    GridModel g = gftest::four_bus_feeder();
    for (auto& br : g.branches) {
        br.r_pu *= 0.01;
        br.x_pu *= 0.01;
    }
    const ScaledGrid sg = apply_scenario(g, {1.0, 1.0, 1.0});
    const OpfResult r = solve_opf(sg, CostParams{}, full_feed_dispatch(sg));
    REQUIRE(r.converged);
    CHECK(r.setpoints[0].p_pct == doctest::Approx(100.0));
    CHECK(std::abs(r.setpoints[0].q_pct) < 0.2);
}

namespace {

// Exhaustive dispatch lattice: 10% P steps, 9 Q levels per controllable
// DER, one power flow per point.
double brute_force_best_cost(const ScaledGrid& sg, const CostParams& params) {
    const GridModel& g = *sg.grid;
    const auto ctrl = g.controllable_ders();
    REQUIRE(ctrl.size() == 1);  // feeder grid has one controllable DER
    const int di = ctrl[0];
    const double avail = sg.der_p_avail_mw[di];
    const double s_max = g.ders[di].s_max_mva;

    double best = std::numeric_limits<double>::infinity();
    for (int ip = 0; ip <= 10; ++ip) {
        const double p = avail * ip / 10.0;
        const double qlim = q_limit(p, s_max);
        for (int iq = 0; iq <= 8; ++iq) {
            const double q = -qlim + 2.0 * qlim * iq / 8.0;
            Dispatch d = full_feed_dispatch(sg);
            d.p_mw[di] = p;
            d.q_mvar[di] = q;
            const PfSolution pf = solve_pf(sg, d);
            if (!pf.converged) continue;
            best = std::min(best, total_cost(g, pf, d, sg.der_p_avail_mw, params));
        }
    }
    return best;
}

}  // namespace

TEST_CASE("opf dominates the brute-force dispatch lattice") {
    const GridModel g = gftest::four_bus_feeder();
    CostParams params;
    params.c_v = 5e6;  // voltage-heavy weighting so the optimum is interior
    const Scenario scenarios[] = {{1.0, 0.0, 1.0}, {0.0, 1.0, 1.0}, {0.5, 0.5, 0.5},
                                  {1.0, 1.0, 0.2}, {0.2, 0.6, 0.8}};
    for (const Scenario& sc : scenarios) {
        CAPTURE(sc.load_factor);
        CAPTURE(sc.wind_factor);
        const ScaledGrid sg = apply_scenario(g, sc);
        const OpfResult r = solve_opf(sg, params, full_feed_dispatch(sg));
        REQUIRE(r.converged);
        const double best = brute_force_best_cost(sg, params);
        CHECK(r.cost <= best * 1.01 + 1e-9);
    }
}

TEST_CASE("opf respects the capability constraints") {
    const GridModel g = gftest::four_bus_feeder();
    CostParams params;
    params.c_v = 5e6;
    for (const Scenario& sc : {Scenario{1.0, 0.0, 1.0}, Scenario{0.0, 0.5, 0.6}}) {
        const ScaledGrid sg = apply_scenario(g, sc);
        const OpfResult r = solve_opf(sg, params, full_feed_dispatch(sg));
        REQUIRE(r.converged);
        for (const auto& sp : r.setpoints) {
            const double avail_pct =
                100.0 * sg.der_p_avail_mw[sp.der_index] / g.ders[sp.der_index].s_max_mva;
            CHECK(sp.p_pct >= -1e-6);
            CHECK(sp.p_pct <= avail_pct + 1e-6);
            CHECK(sp.p_pct * sp.p_pct + sp.q_pct * sp.q_pct <= 100.0 * 100.0 + 1e-6);
            CHECK(std::abs(sp.q_pct) <= sp.p_pct * tan_phi_max() + 1e-6);
        }
    }
}

TEST_CASE("raising c_p never increases total curtailment") {
    const GridModel g = gftest::four_bus_feeder();
    CostParams cheap;
    cheap.c_v = 1e8;  // strong voltage pressure makes curtailment attractive
    cheap.c_p = 1e4;
    CostParams dear = cheap;
    dear.c_p = 1e5;
    for (const Scenario& sc : {Scenario{0.0, 1.0, 1.0}, Scenario{0.2, 0.8, 1.0},
                               Scenario{0.1, 0.4, 0.9}}) {
        const ScaledGrid sg = apply_scenario(g, sc);
        const OpfResult a = solve_opf(sg, cheap, full_feed_dispatch(sg));
        const OpfResult b = solve_opf(sg, dear, full_feed_dispatch(sg));
        REQUIRE(a.converged);
        REQUIRE(b.converged);
        double curt_a = 0.0, curt_b = 0.0;
        for (std::size_t k = 0; k < a.setpoints.size(); ++k) {
            const int di = a.setpoints[k].der_index;
            curt_a += sg.der_p_avail_mw[di] - a.dispatch.p_mw[di];
            curt_b += sg.der_p_avail_mw[di] - b.dispatch.p_mw[di];
        }
        CHECK(curt_b <= curt_a + 1e-6);
    }
}

TEST_CASE("opf determinism") {
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {0.6, 0.4, 0.8});
    CostParams params;
    params.c_v = 5e6;
    const OpfResult a = solve_opf(sg, params, full_feed_dispatch(sg));
    const OpfResult b = solve_opf(sg, params, full_feed_dispatch(sg));
    CHECK(a.cost == b.cost);
    CHECK(a.setpoints[0].p_pct == b.setpoints[0].p_pct);
    CHECK(a.setpoints[0].q_pct == b.setpoints[0].q_pct);
    CHECK(a.evaluations == b.evaluations);
}

TEST_CASE("sweep covers the full lattice and partitions buckets") {
    const GridModel g = gftest::four_bus_feeder();
    const SweepResult sweep = run_sweep(g, CostParams{}, 2);
    CHECK(sweep.report.total == 9261);
    CHECK(sweep.report.converged == 9261);
    REQUIRE(sweep.training.size() == 1);
    CHECK(sweep.training[0].size() == 9261);

    // scenario (0,0,0) is the first lexicographic entry and costs nothing
    CHECK(sweep.results[0].scenario == Scenario{0.0, 0.0, 0.0});
    CHECK(sweep.results[0].cost == doctest::Approx(0.0));

    // per-DER samples partition into exactly 21 operating-point buckets of
    // 441 samples each (wind DER keyed by the wind factor)
    const TrainingStore store =
        TrainingStore::from_sweep(1, DerKind::Wind, sweep.training[0]);
    for (int op : TrainingStore::operating_points())
        CHECK(store.joint(op).size() == 441);
}

TEST_CASE("sweep order is independent of the job count") {
    const GridModel g = gftest::four_bus_feeder();
    CostParams params;  // defaults; fast because the optimum is at the seed
    const SweepResult s1 = run_sweep(g, params, 1);
    const SweepResult s4 = run_sweep(g, params, 4);
    REQUIRE(s1.results.size() == s4.results.size());
    for (std::size_t i = 0; i < s1.results.size(); i += 97) {
        CHECK(s1.results[i].cost == s4.results[i].cost);
        CHECK(s1.results[i].setpoints[0].p_pct == s4.results[i].setpoints[0].p_pct);
        CHECK(s1.results[i].setpoints[0].q_pct == s4.results[i].setpoints[0].q_pct);
    }
}

TEST_CASE("training csv round trip") {
    const GridModel g = gftest::four_bus_feeder();
    const ScaledGrid sg = apply_scenario(g, {0.5, 0.5, 0.5});
    const OpfResult r = solve_opf(sg, CostParams{}, full_feed_dispatch(sg));
    std::vector<TrainingRow> rows{{r.scenario, r.pf.v_pu[3], r.pf.theta_rad[3],
                                   r.setpoints[0].p_pct, r.setpoints[0].q_pct, r.cost, true}};
    const std::string path = gftest::write_temp("training.csv", "");
    write_training_csv(path, rows);
    const auto back = read_training_csv(path);
    REQUIRE(back.size() == 1);
    CHECK(back[0].v_pu == rows[0].v_pu);
    CHECK(back[0].p_sp_pct == rows[0].p_sp_pct);
    CHECK(back[0].q_sp_pct == rows[0].q_sp_pct);
    CHECK(back[0].scenario == rows[0].scenario);
}
