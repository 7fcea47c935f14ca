#pragma once

#include <complex>
#include <vector>

#include "gridfall/grid_model.hpp"

namespace gridfall {

/// Per-DER active/reactive injections in MW/Mvar, index-aligned with
/// GridModel::ders. Sign convention: q_mvar > 0 injects reactive power
/// (capacitive, voltage-raising). Feasibility against the apparent-power
/// and power-factor limits is the caller's job.
struct Dispatch {
    std::vector<double> p_mw;
    std::vector<double> q_mvar;

    static Dispatch zeros(std::size_t n) { return Dispatch{std::vector<double>(n, 0.0),
                                                           std::vector<double>(n, 0.0)}; }
};

struct PfSolution {
    std::vector<double> v_pu;
    std::vector<double> theta_rad;
    bool converged = false;
    int iterations = 0;
    double max_mismatch_pu = 0.0;

    /// Slack net injection in per unit (generation positive), valid at convergence.
    double slack_p_pu = 0.0;
    double slack_q_pu = 0.0;
};

using Ybus = std::vector<std::vector<std::complex<double>>>;

/// Nodal admittance matrix in per unit. Off-diagonal (i,j) = -y_series(i,j);
/// diagonal = sum of incident series admittances plus half shunts.
Ybus build_ybus(const GridModel& grid);

struct PfOptions {
    double tol = 1e-8;   // max power mismatch, pu
    int max_iter = 20;
    const PfSolution* warm_start = nullptr;  // flat start when null
    const Ybus* ybus = nullptr;              // rebuilt from the grid when null
};

/// Newton-Raphson solve of the nodal power balance for the scaled grid plus
/// a DER dispatch. Never throws on divergence; inspect .converged.
PfSolution solve_pf(const ScaledGrid& grid, const Dispatch& dispatch,
                    const PfOptions& opts = {});

/// Net specified injection per bus in pu (generation minus load) for the
/// given dispatch. Exposed for cost evaluation and testing.
std::vector<std::complex<double>> bus_injections_pu(const ScaledGrid& grid,
                                                    const Dispatch& dispatch);

}  // namespace gridfall
