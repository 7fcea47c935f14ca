#include "gridfall/power_flow.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace gridfall {

Ybus build_ybus(const GridModel& grid) {
    const int n = grid.bus_count();
    Ybus y(n, std::vector<std::complex<double>>(n, {0.0, 0.0}));
    for (const auto& br : grid.branches) {
        const int i = br.from_bus - 1;
        const int j = br.to_bus - 1;
        const std::complex<double> ys = 1.0 / std::complex<double>(br.r_pu, br.x_pu);
        const std::complex<double> ysh(0.0, br.b_pu / 2.0);
        y[i][j] -= ys;
        y[j][i] -= ys;
        y[i][i] += ys + ysh;
        y[j][j] += ys + ysh;
    }
    return y;
}

std::vector<std::complex<double>> bus_injections_pu(const ScaledGrid& grid,
                                                    const Dispatch& dispatch) {
    const GridModel& g = *grid.grid;
    const double sb = g.s_base_mva;
    std::vector<std::complex<double>> s(g.bus_count(), {0.0, 0.0});
    for (int i = 0; i < g.bus_count(); ++i)
        s[i] = std::complex<double>(-grid.load_p_mw[i] / sb, -grid.load_q_mvar[i] / sb);
    for (std::size_t d = 0; d < g.ders.size(); ++d) {
        const int b = g.ders[d].bus - 1;
        s[b] += std::complex<double>(dispatch.p_mw[d] / sb, dispatch.q_mvar[d] / sb);
    }
    return s;
}

PfSolution solve_pf(const ScaledGrid& grid, const Dispatch& dispatch, const PfOptions& opts) {
    const GridModel& g = *grid.grid;
    const int n = g.bus_count();

    Ybus local_y;
    if (!opts.ybus) local_y = build_ybus(g);
    const Ybus& y = opts.ybus ? *opts.ybus : local_y;

    const auto s_spec = bus_injections_pu(grid, dispatch);

    PfSolution sol;
    sol.v_pu.assign(n, 1.0);
    sol.theta_rad.assign(n, 0.0);
    if (opts.warm_start && static_cast<int>(opts.warm_start->v_pu.size()) == n) {
        sol.v_pu = opts.warm_start->v_pu;
        sol.theta_rad = opts.warm_start->theta_rad;
    }
    sol.v_pu[0] = 1.0;       // slack held exactly at nominal
    sol.theta_rad[0] = 0.0;

    // Unknowns: theta and V at every non-slack bus (all PQ).
    const int m = n - 1;
    Eigen::MatrixXd jac(2 * m, 2 * m);
    Eigen::VectorXd rhs(2 * m);

    std::vector<double> p_calc(n), q_calc(n);
    auto compute_injections = [&]() {
        for (int i = 0; i < n; ++i) {
            double pi = 0.0, qi = 0.0;
            for (int k = 0; k < n; ++k) {
                const double gik = y[i][k].real();
                const double bik = y[i][k].imag();
                if (gik == 0.0 && bik == 0.0) continue;
                const double dth = sol.theta_rad[i] - sol.theta_rad[k];
                const double c = std::cos(dth), s = std::sin(dth);
                pi += sol.v_pu[k] * (gik * c + bik * s);
                qi += sol.v_pu[k] * (gik * s - bik * c);
            }
            p_calc[i] = sol.v_pu[i] * pi;
            q_calc[i] = sol.v_pu[i] * qi;
        }
    };

    auto max_mismatch = [&]() {
        double mm = 0.0;
        for (int i = 1; i < n; ++i) {
            mm = std::max(mm, std::abs(p_calc[i] - s_spec[i].real()));
            mm = std::max(mm, std::abs(q_calc[i] - s_spec[i].imag()));
        }
        return mm;
    };

    for (int iter = 0; iter <= opts.max_iter; ++iter) {
        compute_injections();
        sol.max_mismatch_pu = max_mismatch();
        sol.iterations = iter;
        if (sol.max_mismatch_pu < opts.tol) {
            sol.converged = true;
            break;
        }
        if (iter == opts.max_iter) break;

        // Standard polar-form Jacobian. Rows: P then Q per non-slack bus;
        // columns: dtheta then dV.
        for (int i = 1; i < n; ++i) {
            const double vi = sol.v_pu[i];
            const double pi = p_calc[i], qi = q_calc[i];
            for (int k = 1; k < n; ++k) {
                const double gik = y[i][k].real();
                const double bik = y[i][k].imag();
                const int r = i - 1, c = k - 1;
                if (i == k) {
                    jac(r, c) = -qi - bik * vi * vi;
                    jac(r, m + c) = pi / vi + gik * vi;
                    jac(m + r, c) = pi - gik * vi * vi;
                    jac(m + r, m + c) = qi / vi - bik * vi;
                } else {
                    const double vk = sol.v_pu[k];
                    const double dth = sol.theta_rad[i] - sol.theta_rad[k];
                    const double cs = std::cos(dth), sn = std::sin(dth);
                    jac(r, c) = vi * vk * (gik * sn - bik * cs);
                    jac(r, m + c) = vi * (gik * cs + bik * sn);
                    jac(m + r, c) = -vi * vk * (gik * cs + bik * sn);
                    jac(m + r, m + c) = vi * (gik * sn - bik * cs);
                }
            }
            rhs(i - 1) = s_spec[i].real() - p_calc[i];
            rhs(m + i - 1) = s_spec[i].imag() - q_calc[i];
        }

        Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
        const Eigen::VectorXd dx = lu.solve(rhs);
        if (!dx.allFinite()) {
            sol.converged = false;
            break;
        }
        for (int i = 1; i < n; ++i) {
            sol.theta_rad[i] += dx(i - 1);
            sol.v_pu[i] += dx(m + i - 1);
            if (sol.v_pu[i] < 1e-3) sol.v_pu[i] = 1e-3;  // keep Jacobian finite
        }
    }

    compute_injections();
    sol.slack_p_pu = p_calc[0] + grid.load_p_mw[0] / g.s_base_mva;
    sol.slack_q_pu = q_calc[0] + grid.load_q_mvar[0] / g.s_base_mva;
    // Subtract any DER sitting on the slack bus so the reported value is the
    // upstream grid exchange alone.
    for (std::size_t d = 0; d < g.ders.size(); ++d) {
        if (g.ders[d].bus == 1) {
            sol.slack_p_pu -= dispatch.p_mw[d] / g.s_base_mva;
            sol.slack_q_pu -= dispatch.q_mvar[d] / g.s_base_mva;
        }
    }
    return sol;
}

}  // namespace gridfall
