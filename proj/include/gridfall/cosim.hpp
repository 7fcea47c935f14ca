#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gridfall/grid_model.hpp"
#include "gridfall/ied_control.hpp"
#include "gridfall/opf.hpp"
#include "gridfall/power_flow.hpp"
#include "gridfall/regression.hpp"

namespace gridfall {

enum class ControlCase { NoControl, CentralOpf, OpfPlusRegression, OpfPlusQv };
const char* control_case_name(ControlCase c);
std::optional<ControlCase> parse_control_case(const std::string& s);
int control_case_number(ControlCase c);  // conventional numbering 1..4

struct FailureWindow {
    double start_s = 0.0;
    double end_s = 0.0;  // half-open [start, end)
};

/// In-process deterministic message bus. Zero latency; delivery fails
/// exactly inside injected failure windows.
class MessageBus {
  public:
    void add_failure_window(const FailureWindow& w);
    bool in_failure(double t) const;
    /// True when a message sent at time t reaches the other side.
    bool deliver(double t);
    int delivered() const { return delivered_; }
    int dropped() const { return dropped_; }

  private:
    std::vector<FailureWindow> windows_;
    int delivered_ = 0;
    int dropped_ = 0;
};

void inject_failure(MessageBus& bus, const FailureWindow& window);

struct SimConfig {
    std::string grid_path;
    std::string profile_path;
    CostParams train_params;                   // optimized by the online OPF
    CostParams eval_params{2e3, 1e4, 1e6, 0.0};  // evaluated on the realized state
    double timestep_s = 30.0;
    int horizon_steps = 0;  // 0 means the whole profile
    double se_cycle_s = 10.0;
    double opf_cycle_s = 30.0;
    double regression_cycle_s = 30.0;
    int transition_steps = 5;
    double stale_after_s = 60.0;
    std::vector<FailureWindow> failure_windows;
    ControlCase control_case = ControlCase::CentralOpf;
    unsigned seed = 42;
    int jobs = 1;

    void validate(std::size_t profile_len) const;
};

struct StepRecord {
    double t = 0.0;
    Scenario scenario;
    std::vector<double> v_pu;         // per bus
    std::vector<double> p_cmd_pct;    // per controllable DER
    std::vector<double> q_cmd_pct;
    std::vector<IedMode> modes;
    double cost = 0.0;
    bool comm_ok = true;
};

struct DecisionRow {
    double t = 0.0;
    int der_index = 0;
    IedMode mode = IedMode::Remote;
    double p_cmd_pct = 0.0;
    double q_cmd_pct = 0.0;
    double v_pu = 0.0;
    std::string reason;
};

struct RunReport {
    ControlCase control_case = ControlCase::CentralOpf;
    int steps = 0;
    double mean_cost = 0.0;
    int violations = 0;         // steps with any bus outside [0.95, 1.05]
    int messages_delivered = 0;
    int messages_dropped = 0;
};

struct RunResult {
    RunReport report;
    std::vector<StepRecord> steps;
    std::vector<std::vector<DecisionRow>> decisions;  // per controllable DER
};

struct SimInputs {
    const GridModel* grid = nullptr;
    const ProfileSeries* profiles = nullptr;
    /// Per controllable DER, aligned with GridModel::controllable_ders().
    std::vector<std::shared_ptr<const RegressionModelSet>> models;
    /// When set, field IEDs ingest received setpoints into these stores.
    std::vector<TrainingStore>* stores = nullptr;
};

struct PhysicsDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Deterministic time-stepped run of grid + controller IED + field IEDs +
/// message bus for one control case. Failure windows apply to the cases
/// with a local fallback (regression, Q(V)); the central-OPF case is the
/// normal-operation reference and the no-control case has no
/// communication at all. Throws PhysicsDivergence when a step's power
/// flow cannot be solved.
RunResult run_simulation(const SimConfig& cfg, const SimInputs& in);

struct CaseComparison {
    std::vector<RunReport> reports;
    std::vector<ControlCase> cases;
    /// Percent differences vs case 1 and case 2; NaN when the reference
    /// case is not part of the run.
    std::vector<double> diff_to_case1_pct;
    std::vector<double> diff_to_case2_pct;
};

CaseComparison compare_cases(const SimConfig& base, const SimInputs& in,
                             const std::vector<ControlCase>& cases);

struct RetrainingOutcome {
    RunReport central;            // case A: central OPF under the new params
    RunReport stale_fallback;     // case B: fallback with the original models
    RunReport retrained_fallback; // case C: fallback with the retrained models
    std::vector<RegressionModelSet> retrained_sets;  // per controllable DER
    double stale_gap_pct = 0.0;
    double retrained_gap_pct = 0.0;
};

/// The offline-learning experiment: the OPF switches to new cost
/// parameters, field IEDs ingest the new setpoints online, the models are
/// retrained from the updated buckets, and the stale vs retrained fallback
/// runs are compared against the new central OPF.
RetrainingOutcome retraining_experiment(const SimConfig& base, const SimInputs& in,
                                        const CostParams& new_params,
                                        std::vector<TrainingStore> stores,
                                        const ModelSetConfig& model_cfg);

void write_step_records_csv(const std::string& path, const GridModel& grid,
                            const std::vector<StepRecord>& steps);
void write_decision_log_csv(const std::string& path, const std::vector<DecisionRow>& rows);
std::vector<DecisionRow> read_decision_log_csv(const std::string& path);
void write_run_report(const std::string& path, const RunReport& report);
void write_comparison_csv(const std::string& path, const CaseComparison& cmp);
std::string comparison_table_text(const CaseComparison& cmp);

}  // namespace gridfall
