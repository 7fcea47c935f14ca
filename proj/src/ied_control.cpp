#include "gridfall/ied_control.hpp"

#include <algorithm>
#include <cmath>

namespace gridfall {

const char* mode_name(IedMode m) {
    switch (m) {
        case IedMode::Remote: return "Remote";
        case IedMode::Transition: return "Transition";
        case IedMode::Fallback: return "Fallback";
        case IedMode::Emergency: return "Emergency";
    }
    return "?";
}

bool detect_failure(double last_msg_time, double now, double stale_after_s) {
    return now - last_msg_time > stale_after_s;
}

std::pair<double, double> limit_capability(double p_pct, double q_pct, double s_max_pct,
                                           double min_pf) {
    const double p = std::clamp(p_pct, 0.0, s_max_pct);
    const double qmax = q_limit(p, s_max_pct, min_pf);
    const double q = std::clamp(q_pct, -qmax, qmax);
    return {p, q};
}

ControlDecision qv_control(double v_pu, double p_avail_pct, double v_low, double v_high) {
    ControlDecision d;
    d.mode = IedMode::Fallback;
    d.reason = "qv";
    const double p = std::floor(p_avail_pct / 5.0 + 1e-9) * 5.0;
    const double qlim = q_limit(p);
    double q;
    if (v_pu <= v_low)
        q = qlim;
    else if (v_pu >= v_high)
        q = -qlim;
    else
        q = qlim * (v_high + v_low - 2.0 * v_pu) / (v_high - v_low);
    std::tie(d.p_cmd_pct, d.q_cmd_pct) = limit_capability(p, q);
    return d;
}

ControlDecision fixed_pf_control(double p_avail_pct) {
    ControlDecision d;
    d.mode = IedMode::Remote;
    d.reason = "fixed-pf";
    d.p_cmd_pct = std::floor(p_avail_pct / 5.0 + 1e-9) * 5.0;
    d.q_cmd_pct = 0.0;
    std::tie(d.p_cmd_pct, d.q_cmd_pct) = limit_capability(d.p_cmd_pct, d.q_cmd_pct);
    return d;
}

FieldIed::FieldIed(int der_id, FieldIedOptions opts) : der_id_(der_id), opts_(opts) {}

void FieldIed::set_initial_command(double p_pct, double q_pct) {
    std::tie(cmd_p_, cmd_q_) = limit_capability(p_pct, q_pct);
}

ControlDecision FieldIed::emit(IedMode mode, std::string reason) {
    std::tie(cmd_p_, cmd_q_) = limit_capability(cmd_p_, cmd_q_);
    ControlDecision d;
    d.p_cmd_pct = cmd_p_;
    d.q_cmd_pct = cmd_q_;
    d.mode = mode;
    d.reason = std::move(reason);
    return d;
}

void FieldIed::start_ramp(double p_target, double q_target) {
    ramp_active_ = true;
    ramp_step_ = 0;
    ramp_start_p_ = cmd_p_;
    ramp_start_q_ = cmd_q_;
    ramp_target_p_ = p_target;
    ramp_target_q_ = q_target;
}

void FieldIed::advance_ramp() {
    if (!ramp_active_) return;
    ramp_step_ = std::min(ramp_step_ + 1, opts_.transition_steps);
    const double f = static_cast<double>(ramp_step_) / static_cast<double>(opts_.transition_steps);
    cmd_p_ = ramp_start_p_ + f * (ramp_target_p_ - ramp_start_p_);
    cmd_q_ = ramp_start_q_ + f * (ramp_target_q_ - ramp_start_q_);
    if (ramp_step_ >= opts_.transition_steps) {
        cmd_p_ = ramp_target_p_;
        cmd_q_ = ramp_target_q_;
        ramp_active_ = false;
    }
}

ControlDecision FieldIed::process_message(const SetpointMessage& msg, double now) {
    (void)now;
    if (msg.timestamp <= last_msg_time_) return emit(mode_, "stale-message-ignored");
    last_msg_time_ = msg.timestamp;

    auto [p, q] = limit_capability(msg.p_sp_pct, msg.q_sp_pct);
    const bool clamped = p != msg.p_sp_pct || q != msg.q_sp_pct;
    if (store_ && opts_.ingest_setpoints)
        store_->ingest(msg.operating_point_pct, /*v latched by the harness*/ last_voltage_seen_,
                       p, q);

    switch (mode_) {
        case IedMode::Remote:
            cmd_p_ = p;
            cmd_q_ = q;
            return emit(IedMode::Remote, clamped ? "remote-clamped" : "remote");
        case IedMode::Transition:
            // Resynchronization in progress: the ramp keeps its latched
            // target; fresh setpoints are recorded but not chased until
            // the hand-over completes.
            advance_ramp();
            if (!ramp_active_) {
                mode_ = IedMode::Remote;
                return emit(IedMode::Transition, "resync-complete");
            }
            return emit(IedMode::Transition, "resync");
        case IedMode::Fallback:
        case IedMode::Emergency:
            // Controller is back: ramp from the local command to its
            // setpoints over the configured number of steps.
            mode_ = IedMode::Transition;
            start_ramp(p, q);
            advance_ramp();
            if (!ramp_active_) {
                mode_ = IedMode::Remote;
                return emit(IedMode::Transition, "resync-complete");
            }
            return emit(IedMode::Transition, "resync");
    }
    return emit(mode_, "unreachable");
}

std::pair<double, double> FieldIed::predict_setpoints(double v_pu, int model_op, int cap_op) const {
    double p = 0.0, q = 0.0;
    if (models_) {
        p = predict(models_->model(Channel::P, model_op), v_pu);
        q = predict(models_->model(Channel::Q, model_op), v_pu);
    }
    p = std::min(p, static_cast<double>(std::min(model_op, cap_op)));
    return {p, q};
}

ControlDecision FieldIed::regression_control(double v_pu, int op_pct, std::string reason_prefix) {
    if (v_pu < 0.9) {
        // Under-voltage: maximum P and maximum capacitive Q, immediately.
        mode_ = IedMode::Emergency;
        emergency_op_pct_ = op_pct;
        ramp_active_ = false;
        cmd_p_ = op_pct;
        cmd_q_ = q_limit(cmd_p_);
        return emit(IedMode::Emergency, reason_prefix + "undervoltage-max-support");
    }
    if (v_pu > 1.1) {
        // Over-voltage: step the operating point down 10% per call and use
        // the regression model of the reduced operating point.
        if (mode_ != IedMode::Emergency) emergency_op_pct_ = op_pct;
        emergency_op_pct_ = std::max(0, std::min(emergency_op_pct_, op_pct) - 10);
        mode_ = IedMode::Emergency;
        auto [p, q] = predict_setpoints(v_pu, emergency_op_pct_, op_pct);
        auto [pl, ql] = limit_capability(p, q);
        if (pl != ramp_target_p_ || ql != ramp_target_q_ || !ramp_active_) start_ramp(pl, ql);
        advance_ramp();
        return emit(IedMode::Emergency, reason_prefix + "overvoltage-step-down");
    }

    std::string reason = reason_prefix + "regression";
    if (mode_ == IedMode::Emergency) {
        // Band recovered: climb back toward the true operating point.
        emergency_op_pct_ = std::min(op_pct, emergency_op_pct_ + 10);
        reason = reason_prefix + "recovering";
    } else {
        emergency_op_pct_ = op_pct;
    }
    mode_ = IedMode::Fallback;
    auto [p, q] = predict_setpoints(v_pu, emergency_op_pct_, op_pct);
    auto [pl, ql] = limit_capability(p, q);
    if (pl != ramp_target_p_ || ql != ramp_target_q_ || !ramp_active_) start_ramp(pl, ql);
    advance_ramp();
    return emit(IedMode::Fallback, reason);
}

ControlDecision FieldIed::hold() { return emit(mode_, "hold"); }

ControlDecision FieldIed::control_tick(double v_pu, int op_pct, double now) {
    last_voltage_seen_ = v_pu;
    if (!comm_failed(now)) {
        if (mode_ == IedMode::Transition) {
            advance_ramp();
            if (!ramp_active_) {
                mode_ = IedMode::Remote;
                return emit(IedMode::Transition, "resync-complete");
            }
            return emit(IedMode::Transition, "resync");
        }
        return emit(mode_, "hold");
    }
    if (!models_) return emit(mode_, "no-models-hold");
    return regression_control(v_pu, op_pct, "");
}

}  // namespace gridfall
