#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gridfall/grid_model.hpp"
#include "gridfall/power_flow.hpp"

namespace gridfall {

/// Weights of the dispatch cost. Powers inside the cost are normalized to
/// fractions of each DER's S_max, so the weights are grid-size independent.
struct CostParams {
    double c_v = 2e3;
    double c_q = 1e4;
    double c_p = 1e6;
    double deadband_pu = 0.01;
};

/// Cubic voltage-band penalty: zero inside the dead-band around 1.0 pu,
/// (|v-1| - deadband)^3 outside. First and second derivatives vanish at
/// the boundary, so the objective stays C2 for derivative-based solvers.
double voltage_penalty(double v_pu, double deadband_pu);

/// Evaluate the dispatch cost on a converged power-flow state:
/// c_v * sum_buses f_v(V) + c_q * sum_ctrl (Q/S_max)^2
/// + c_p * sum_ctrl ((P'_max - P)/S_max)^2.
/// avail_mw is the scenario-scaled P'_max per DER (aligned with grid.ders).
/// Throws std::invalid_argument if pf did not converge.
double total_cost(const GridModel& grid, const PfSolution& pf, const Dispatch& dispatch,
                  const std::vector<double>& avail_mw, const CostParams& params);

struct DerSetpointPct {
    int der_index = 0;   // into GridModel::ders
    double p_pct = 0.0;  // percent of S_max
    double q_pct = 0.0;
};

struct OpfResult {
    Scenario scenario;
    std::vector<DerSetpointPct> setpoints;  // controllable DERs only
    Dispatch dispatch;                      // all DERs, MW/Mvar
    PfSolution pf;
    double cost = 0.0;
    bool converged = false;
    int evaluations = 0;
};

/// Centralized OPF over the controllable DER setpoints. Reduced-space
/// search: the power flow is an inner evaluation, the outer minimization
/// runs over (P, Q) of the controllable DERs reparameterized onto a box so
/// the power-factor cone and apparent-power circle are satisfied by
/// construction. Deterministic for identical inputs.
OpfResult solve_opf(const ScaledGrid& grid, const CostParams& params, const Dispatch& init);

/// Convenience init: every DER at full available P, zero Q.
Dispatch full_feed_dispatch(const ScaledGrid& grid);

struct TrainingRow {
    Scenario scenario;
    double v_pu = 0.0;
    double theta_rad = 0.0;
    double p_sp_pct = 0.0;
    double q_sp_pct = 0.0;
    double cost = 0.0;
    bool converged = false;
};

struct SweepReport {
    int total = 0;
    int converged = 0;
    std::vector<int> failed_indices;
};

struct SweepResult {
    std::vector<OpfResult> results;                    // lexicographic by (load, pv, wind)
    std::vector<std::vector<TrainingRow>> training;    // per controllable DER
    SweepReport report;
};

/// Run the OPF for every scenario on the 21^3 lattice. Scenarios are
/// distributed over `jobs` workers; result order is independent of the
/// worker count. progress, when set, is called from the main thread.
SweepResult run_sweep(const GridModel& grid, const CostParams& params, int jobs = 1,
                      const std::function<void(int done, int total)>& progress = nullptr);

void write_training_csv(const std::string& path, const std::vector<TrainingRow>& rows);
std::vector<TrainingRow> read_training_csv(const std::string& path);
void write_sweep_report(const std::string& path, const SweepReport& report);

}  // namespace gridfall
