#pragma once

#include <memory>
#include <string>
#include <utility>

#include "gridfall/capability.hpp"
#include "gridfall/regression.hpp"

namespace gridfall {

struct SetpointMessage {
    int der_id = 0;
    double p_sp_pct = 0.0;
    double q_sp_pct = 0.0;
    int operating_point_pct = 100;
    double timestamp = 0.0;  // simulation seconds
};

enum class IedMode { Remote, Transition, Fallback, Emergency };
const char* mode_name(IedMode m);

struct ControlDecision {
    double p_cmd_pct = 0.0;
    double q_cmd_pct = 0.0;
    IedMode mode = IedMode::Remote;
    std::string reason;
};

/// True once the last received setpoint is strictly older than stale_after.
bool detect_failure(double last_msg_time, double now, double stale_after_s = 60.0);

/// Clip a (P, Q) command to the apparent-power circle and the minimum
/// power factor, whichever binds tighter. P is clipped into [0, s_max]
/// first; Q is clipped toward zero preserving its sign.
std::pair<double, double> limit_capability(double p_pct, double q_pct, double s_max_pct = 100.0,
                                           double min_pf = kMinPowerFactor);

/// Conventional local droop: full capacitive Q at v_low, full inductive at
/// v_high, linear between. P runs at the available maximum, rounded down
/// to the 5% lattice.
ControlDecision qv_control(double v_pu, double p_avail_pct, double v_low = 0.95,
                           double v_high = 1.05);

/// No-control baseline: available P at cos(phi) = 1.
ControlDecision fixed_pf_control(double p_avail_pct);

struct FieldIedOptions {
    double stale_after_s = 60.0;
    int transition_steps = 5;
    bool ingest_setpoints = true;
};

/// Field-device control state machine: remote pass-through while setpoints
/// are fresh, smooth switch-over to the local regression models on a
/// communication failure, emergency measures on voltage-band violations,
/// and ramped resynchronization when the controller returns.
class FieldIed {
  public:
    FieldIed(int der_id, FieldIedOptions opts = {});

    void attach_models(std::shared_ptr<const RegressionModelSet> set) { models_ = std::move(set); }
    void attach_store(TrainingStore* store) { store_ = store; }

    /// Handle a delivered controller setpoint. Fresh messages update the
    /// staleness clock, feed the training store, and either pass through
    /// (Remote) or start/advance the resynchronization ramp (Transition).
    ControlDecision process_message(const SetpointMessage& msg, double now);

    /// Control-cycle tick without a delivered message: hold while fresh,
    /// otherwise run the regression fallback with emergency handling.
    ControlDecision control_tick(double v_pu, int op_pct, double now);

    /// Re-emit the current command, e.g. between regression cycles.
    ControlDecision hold();

    bool comm_failed(double now) const { return detect_failure(last_msg_time_, now, opts_.stale_after_s); }
    IedMode mode() const { return mode_; }
    double last_msg_time() const { return last_msg_time_; }
    int emergency_op_pct() const { return emergency_op_pct_; }
    void set_initial_command(double p_pct, double q_pct);

    /// Latch the locally measured bus voltage; stored alongside ingested
    /// setpoints as the regression input of the training pair.
    void observe_voltage(double v_pu) { last_voltage_seen_ = v_pu; }

  private:
    ControlDecision regression_control(double v_pu, int op_pct, std::string reason_prefix);
    std::pair<double, double> predict_setpoints(double v_pu, int model_op, int cap_op) const;
    void start_ramp(double p_target, double q_target);
    void advance_ramp();
    ControlDecision emit(IedMode mode, std::string reason);

    int der_id_ = 0;
    FieldIedOptions opts_;
    IedMode mode_ = IedMode::Remote;
    double last_msg_time_ = -1.0;  // so a message stamped 0.0 is fresh
    double last_voltage_seen_ = 1.0;
    double cmd_p_ = 0.0;
    double cmd_q_ = 0.0;
    int emergency_op_pct_ = 100;

    bool ramp_active_ = false;
    int ramp_step_ = 0;
    double ramp_start_p_ = 0.0, ramp_start_q_ = 0.0;
    double ramp_target_p_ = 0.0, ramp_target_q_ = 0.0;

    std::shared_ptr<const RegressionModelSet> models_;
    TrainingStore* store_ = nullptr;
};

}  // namespace gridfall
